"""Desk-scale order-book market simulation, feedback metrics, and calibration."""

__version__ = "0.1.0"

from .lob import Book, Execution, Order, OrderKind, Side, StylizedFacts, depth_of, snapshot_facts

__all__ = [
    "Book",
    "Execution",
    "Order",
    "OrderKind",
    "Side",
    "StylizedFacts",
    "depth_of",
    "snapshot_facts",
]
