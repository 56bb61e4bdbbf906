"""CSV writers and readers for the experiment artifacts consumed downstream.

Every file starts with ``#schema-version`` and ``#seed`` comment lines, then a
header row. Floats are written with ``repr`` so a read-back is lossless.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

from .lob import book_snapshot_header, book_snapshot_row
from .metric import EnvelopeRow
from .rollout import Rollout

CSV_SCHEMA_VERSION = 1


def _open_with_meta(path, seed: int, extra: dict | None = None):
    fh = open(path, "w", newline="", encoding="utf-8")
    fh.write(f"#schema-version={CSV_SCHEMA_VERSION}\n")
    fh.write(f"#seed={seed}\n")
    for key, value in (extra or {}).items():
        fh.write(f"#{key}={value}\n")
    return fh


def read_data_rows(path) -> list[dict]:
    """Rows of a metadata-commented CSV as dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def read_meta(path) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
    return meta


# -- envelope tables ---------------------------------------------------------------

ENVELOPE_FIELDS = ["d_hat", "feedback_kind", "N", "mean", "q5", "q95", "comparison"]


def write_envelope_csv(
    path,
    rows_by_comparison: dict[str, list[EnvelopeRow]],
    d_hat: str,
    feedback_kind: str,
    seed: int,
) -> None:
    with _open_with_meta(path, seed) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ENVELOPE_FIELDS)
        for comparison, rows in rows_by_comparison.items():
            for row in rows:
                writer.writerow([
                    d_hat, feedback_kind, row.n,
                    repr(row.mean), repr(row.q5), repr(row.q95), comparison,
                ])


def read_envelope_csv(path) -> list[dict]:
    out = []
    for rec in read_data_rows(path):
        out.append({
            "d_hat": rec["d_hat"],
            "feedback_kind": rec["feedback_kind"],
            "N": int(rec["N"]),
            "mean": float(rec["mean"]),
            "q5": float(rec["q5"]),
            "q95": float(rec["q95"]),
            "comparison": rec["comparison"],
        })
    return out


# -- metric reports ------------------------------------------------------------------

METRIC_FIELDS = ["d_hat", "feedback_kind", "comparison", "value", "n_world", "n_real"]


def write_metric_csv(path, reports: list[dict], seed: int) -> None:
    """``reports``: dicts with the METRIC_FIELDS keys."""
    with _open_with_meta(path, seed) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_FIELDS)
        for rep in reports:
            writer.writerow([
                rep["d_hat"], rep["feedback_kind"], rep["comparison"],
                repr(float(rep["value"])), rep["n_world"], rep["n_real"],
            ])


def read_metric_csv(path) -> list[dict]:
    out = []
    for rec in read_data_rows(path):
        out.append({
            "d_hat": rec["d_hat"],
            "feedback_kind": rec["feedback_kind"],
            "comparison": rec["comparison"],
            "value": float(rec["value"]),
            "n_world": int(rec["n_world"]),
            "n_real": int(rec["n_real"]),
        })
    return out


# -- stylized-fact time series ----------------------------------------------------------

FACTS_FIELDS = [
    "epoch", "trial", "step", "mid", "spread", "log_return", "price_impact",
    "vol_bid_10", "vol_ask_10", "depth_mean", "cum_exec_buy", "cum_exec_sell",
]


@dataclass
class FactsWriter:
    path: object
    seed: int

    def __enter__(self):
        self._fh = _open_with_meta(self.path, self.seed)
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(FACTS_FIELDS)
        return self

    def __exit__(self, *exc):
        self._fh.close()
        return False

    def add_rollout(self, rollout: Rollout, epoch: int, trial: int) -> None:
        cum_buy = 0
        cum_sell = 0
        for i, step in enumerate(rollout.steps, start=1):
            cum_buy += step.n_exec_buy
            cum_sell += step.n_exec_sell
            facts = step.facts_after
            self._writer.writerow([
                epoch, trial, i,
                "" if facts.mid is None else repr(float(facts.mid)),
                "" if facts.spread is None else facts.spread,
                repr(facts.log_return),
                repr(facts.price_impact),
                facts.volume_bid.get("10", ""),
                facts.volume_ask.get("10", ""),
                "" if step.depth_mean is None else repr(step.depth_mean),
                cum_buy, cum_sell,
            ])


def write_facts_csv(path, rollouts_by_epoch: dict[int, list[Rollout]], seed: int) -> None:
    with FactsWriter(path, seed) as writer:
        for epoch in sorted(rollouts_by_epoch):
            for trial, rollout in enumerate(rollouts_by_epoch[epoch]):
                writer.add_rollout(rollout, epoch, trial)


def read_facts_csv(path) -> list[dict]:
    out = []
    for rec in read_data_rows(path):
        out.append({
            "epoch": int(rec["epoch"]),
            "trial": int(rec["trial"]),
            "step": int(rec["step"]),
            "mid": None if rec["mid"] == "" else float(rec["mid"]),
            "spread": None if rec["spread"] == "" else int(rec["spread"]),
            "log_return": float(rec["log_return"]),
            "price_impact": float(rec["price_impact"]),
            "vol_bid_10": None if rec["vol_bid_10"] == "" else int(rec["vol_bid_10"]),
            "vol_ask_10": None if rec["vol_ask_10"] == "" else int(rec["vol_ask_10"]),
            "depth_mean": None if rec["depth_mean"] == "" else float(rec["depth_mean"]),
            "cum_exec_buy": int(rec["cum_exec_buy"]),
            "cum_exec_sell": int(rec["cum_exec_sell"]),
        })
    return out


# -- book snapshots ---------------------------------------------------------------------

def write_book_snapshot_csv(path, snapshots, k: int, levels, seed: int) -> None:
    """``snapshots``: iterable of (book, facts) pairs."""
    with _open_with_meta(path, seed) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(book_snapshot_header(k, levels))
        for book, facts in snapshots:
            writer.writerow(book_snapshot_row(book, facts, k, levels))
