"""Stochastic background-agent policy with factorized categorical heads.

A two-layer perceptron maps the observed market state to one categorical
distribution per action field (kind, side, price bucket, size bucket, cancel
slot). Only the fields relevant to the sampled kind are drawn; the rest are
canonicalized to 0, so every action has exactly one encoding and the densities
of the canonical actions sum to one. Log-density and its gradient in the flat
parameter vector are exact, which is what the score-function trainer relies on.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IllegalActionError

KINDS = ("limit", "market", "cancel", "hold")
SIDES = ("buy", "sell")

# heads relevant to each action kind; everything else is canonically 0
RELEVANT_HEADS = {
    "limit": ("side", "price", "size"),
    "market": ("side", "size"),
    "cancel": ("slot",),
    "hold": (),
}


@dataclass(frozen=True)
class WorldActionSpace:
    price_offset_max: int = 3  # price buckets span -K..K ticks around the mid
    size_grid: tuple[int, ...] = (10, 20, 50)
    cancel_slots: int = 4

    @property
    def head_sizes(self) -> dict[str, int]:
        return {
            "kind": len(KINDS),
            "side": len(SIDES),
            "price": 2 * self.price_offset_max + 1,
            "size": len(self.size_grid),
            "slot": self.cancel_slots,
        }

    @property
    def total_head_dim(self) -> int:
        return sum(self.head_sizes.values())

    def price_bucket_to_offset(self, bucket: int) -> int:
        return bucket - self.price_offset_max

    def offset_to_price_bucket(self, offset: int) -> int:
        k = self.price_offset_max
        return int(np.clip(offset, -k, k)) + k


@dataclass(frozen=True)
class WorldAction:
    kind: str
    side: int = 0  # index into SIDES
    price_bucket: int = 0  # index into the 2K+1 offset grid
    size_bucket: int = 0
    cancel_slot: int = 0

    def canonical(self) -> "WorldAction":
        relevant = RELEVANT_HEADS[self.kind]
        return WorldAction(
            kind=self.kind,
            side=self.side if "side" in relevant else 0,
            price_bucket=self.price_bucket if "price" in relevant else 0,
            size_bucket=self.size_bucket if "size" in relevant else 0,
            cancel_slot=self.cancel_slot if "slot" in relevant else 0,
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "side": self.side,
            "price_bucket": self.price_bucket,
            "size_bucket": self.size_bucket,
            "cancel_slot": self.cancel_slot,
        }

    @staticmethod
    def from_dict(d: dict) -> "WorldAction":
        return WorldAction(
            kind=d["kind"],
            side=int(d["side"]),
            price_bucket=int(d["price_bucket"]),
            size_bucket=int(d["size_bucket"]),
            cancel_slot=int(d["cancel_slot"]),
        )


class WorldState:
    """Flat observation vector plus the count of the agent's own resting orders.

    ``n_resting`` gates cancel legality: with nothing resting the cancel kind
    is masked out and the remaining kinds renormalize.
    """

    __slots__ = ("features", "n_resting")

    def __init__(self, features: np.ndarray, n_resting: int):
        self.features = np.asarray(features, dtype=float)
        self.n_resting = int(n_resting)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return self.n_resting == other.n_resting and np.array_equal(self.features, other.features)

    def to_dict(self) -> dict:
        return {"features": self.features.tolist(), "n_resting": self.n_resting}

    @staticmethod
    def from_dict(d: dict) -> "WorldState":
        return WorldState(np.array(d["features"], dtype=float), d["n_resting"])


def _sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    cum = np.cumsum(probs)
    return int(np.searchsorted(cum, rng.random() * cum[-1], side="right").clip(0, len(probs) - 1))


def _masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-softmax over the unmasked entries; masked entries get -inf."""
    out = np.full_like(logits, -np.inf)
    legal = logits[mask]
    m = legal.max()
    out[mask] = legal - m - np.log(np.exp(legal - m).sum())
    return out


class WorldPolicy:
    def __init__(
        self,
        input_dim: int,
        hidden_dim: int = 32,
        space: WorldActionSpace = WorldActionSpace(),
        theta: np.ndarray | None = None,
    ):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.space = space
        sizes = space.head_sizes
        self._head_order = ("kind", "side", "price", "size", "slot")
        self._head_slices: dict[str, slice] = {}
        offset = 0
        for name in self._head_order:
            self._head_slices[name] = slice(offset, offset + sizes[name])
            offset += sizes[name]
        h, d, out = hidden_dim, input_dim, offset
        self._shapes = {"W1": (h, d), "b1": (h,), "W2": (out, h), "b2": (out,)}
        self.n_params = h * d + h + out * h + out
        self._theta = np.zeros(self.n_params)
        if theta is not None:
            if len(theta) != self.n_params:
                raise ConfigError(
                    f"theta has {len(theta)} entries, architecture needs {self.n_params}"
                )
            self._theta[:] = theta

    # -- parameter access ---------------------------------------------------

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @theta.setter
    def theta(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=float)
        if value.shape != self._theta.shape:
            raise ConfigError("theta shape mismatch")
        self._theta[:] = value

    def _views(self):
        h, d = self._shapes["W1"]
        out = self._shapes["W2"][0]
        i = 0
        w1 = self._theta[i : i + h * d].reshape(h, d); i += h * d
        b1 = self._theta[i : i + h]; i += h
        w2 = self._theta[i : i + out * h].reshape(out, h); i += out * h
        b2 = self._theta[i : i + out]
        return w1, b1, w2, b2

    def clone(self) -> "WorldPolicy":
        return WorldPolicy(self.input_dim, self.hidden_dim, self.space, self._theta.copy())

    def randomize(self, rng: np.random.Generator, scale: float = 0.1) -> "WorldPolicy":
        self._theta[:] = rng.normal(scale=scale, size=self.n_params)
        return self

    def perturb(self, rng: np.random.Generator, scale: float) -> "WorldPolicy":
        self._theta += rng.normal(scale=scale, size=self.n_params)
        return self

    # -- forward ---------------------------------------------------------------

    def _forward(self, state: WorldState):
        x = state.features
        if x.shape != (self.input_dim,):
            raise ConfigError(
                f"state has {x.shape} features, policy expects ({self.input_dim},)"
            )
        w1, b1, w2, b2 = self._views()
        hidden = np.tanh(w1 @ x + b1)
        logits = w2 @ hidden + b2
        return x, hidden, logits

    def _head_masks(self, state: WorldState) -> dict[str, np.ndarray]:
        sizes = self.space.head_sizes
        masks = {name: np.ones(sizes[name], dtype=bool) for name in self._head_order}
        if state.n_resting == 0:
            masks["kind"][KINDS.index("cancel")] = False
        legal_slots = min(state.n_resting, sizes["slot"])
        if legal_slots > 0:
            masks["slot"][legal_slots:] = False
        return masks

    def head_log_probs(self, state: WorldState) -> dict[str, np.ndarray]:
        _, _, logits = self._forward(state)
        masks = self._head_masks(state)
        return {
            name: _masked_log_softmax(logits[self._head_slices[name]], masks[name])
            for name in self._head_order
        }

    def _action_indices(self, action: WorldAction) -> dict[str, int]:
        return {
            "kind": KINDS.index(action.kind),
            "side": action.side,
            "price": action.price_bucket,
            "size": action.size_bucket,
            "slot": action.cancel_slot,
        }

    def _check_legal(self, state: WorldState, action: WorldAction) -> None:
        if action.kind == "cancel":
            if state.n_resting == 0:
                raise IllegalActionError("cancel with no resting orders")
            if action.cancel_slot >= min(state.n_resting, self.space.head_sizes["slot"]):
                raise IllegalActionError(
                    f"cancel slot {action.cancel_slot} beyond {state.n_resting} resting orders"
                )
        sizes = self.space.head_sizes
        idx = self._action_indices(action)
        for name in ("kind", "side", "price", "size", "slot"):
            if not 0 <= idx[name] < sizes[name]:
                raise IllegalActionError(f"{name} index {idx[name]} out of range")

    def log_prob(self, state: WorldState, action: WorldAction) -> float:
        """Exact log-density of the canonicalized action in this book context."""
        action = action.canonical()
        self._check_legal(state, action)
        log_heads = self.head_log_probs(state)
        idx = self._action_indices(action)
        total = log_heads["kind"][idx["kind"]]
        for name in RELEVANT_HEADS[action.kind]:
            total += log_heads[name][idx[name]]
        return float(total)

    def grad_log_prob(self, state: WorldState, action: WorldAction) -> np.ndarray:
        """d log p(action | state) / d theta, flat, same layout as ``theta``."""
        action = action.canonical()
        self._check_legal(state, action)
        x, hidden, logits = self._forward(state)
        masks = self._head_masks(state)
        idx = self._action_indices(action)

        dlogits = np.zeros_like(logits)
        active = ("kind",) + RELEVANT_HEADS[action.kind]
        for name in active:
            sl = self._head_slices[name]
            mask = masks[name]
            probs = np.zeros(mask.shape)
            legal = logits[sl][mask]
            m = legal.max()
            e = np.exp(legal - m)
            probs[mask] = e / e.sum()
            grad_head = -probs
            grad_head[idx[name]] += 1.0
            dlogits[sl] = grad_head

        w1, b1, w2, b2 = self._views()
        d_w2 = np.outer(dlogits, hidden)
        d_b2 = dlogits
        d_hidden = w2.T @ dlogits
        d_pre = d_hidden * (1.0 - hidden**2)
        d_w1 = np.outer(d_pre, x)
        d_b1 = d_pre
        return np.concatenate([d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])

    def sample(self, state: WorldState, rng: np.random.Generator) -> WorldAction:
        """Draw a canonical action; cancel is masked out when nothing rests."""
        log_heads = self.head_log_probs(state)

        def draw(name: str) -> int:
            return _sample_categorical(rng, np.exp(log_heads[name]))

        kind = KINDS[draw("kind")]
        fields = {"side": 0, "price_bucket": 0, "size_bucket": 0, "cancel_slot": 0}
        mapping = {"side": "side", "price": "price_bucket", "size": "size_bucket",
                   "slot": "cancel_slot"}
        for head in RELEVANT_HEADS[kind]:
            fields[mapping[head]] = draw(head)
        return WorldAction(kind=kind, **fields)

    def enumerate_actions(self, state: WorldState) -> list[WorldAction]:
        """All canonical actions legal in this context (test/debug helper)."""
        sizes = self.space.head_sizes
        out: list[WorldAction] = [WorldAction("hold")]
        for side in range(sizes["side"]):
            for size in range(sizes["size"]):
                out.append(WorldAction("market", side=side, size_bucket=size))
                for price in range(sizes["price"]):
                    out.append(
                        WorldAction("limit", side=side, price_bucket=price, size_bucket=size)
                    )
        for slot in range(min(state.n_resting, sizes["slot"])):
            out.append(WorldAction("cancel", cancel_slot=slot))
        return out


# -- persistence ---------------------------------------------------------------

POLICY_FORMAT_VERSION = 1


def save_policy(path, policy: WorldPolicy, seed: int | None = None) -> None:
    """Flat little-endian float64 vector prefixed by a one-line JSON header."""
    header = {
        "version": POLICY_FORMAT_VERSION,
        "n_params": policy.n_params,
        "input_dim": policy.input_dim,
        "hidden_dim": policy.hidden_dim,
        "price_offset_max": policy.space.price_offset_max,
        "size_grid": list(policy.space.size_grid),
        "cancel_slots": policy.space.cancel_slots,
        "seed": seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(policy.theta.astype("<f8").tobytes())


def load_policy(path) -> WorldPolicy:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("version") != POLICY_FORMAT_VERSION:
            raise ConfigError(f"unsupported policy file version {header.get('version')}")
        raw = fh.read()
    theta = np.frombuffer(raw, dtype="<f8")
    if len(theta) != header["n_params"]:
        raise ConfigError("policy file payload does not match its header")
    space = WorldActionSpace(
        price_offset_max=header["price_offset_max"],
        size_grid=tuple(header["size_grid"]),
        cancel_slots=header["cancel_slots"],
    )
    return WorldPolicy(header["input_dim"], header["hidden_dim"], space, theta.copy())


# -- kernel density over continuous action vectors -------------------------------

def kde_log_density(samples, query, bandwidth: float | str = "median") -> float:
    """Gaussian-kernel log-density of ``query`` under the sample cloud.

    ``bandwidth="median"`` resolves to the median pairwise distance among the
    samples; a degenerate cloud (all points identical) falls back to a fixed
    1e-6 floor with a warning.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 2:
        raise ValueError("kde needs at least 2 samples")
    q = np.atleast_1d(np.asarray(query, dtype=float))
    d = pts.shape[1]
    if q.shape != (d,):
        raise ValueError(f"query dimension {q.shape} does not match samples ({d},)")

    if bandwidth == "median":
        diff = pts[:, None, :] - pts[None, :, :]
        dists = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        iu = np.triu_indices(len(pts), k=1)
        h = float(np.median(dists[iu]))
        if h <= 0:
            warnings.warn("degenerate samples: median bandwidth is 0, using 1e-6 floor")
            h = 1e-6
    else:
        h = float(bandwidth)
        if h <= 0:
            raise ValueError("bandwidth must be positive")

    sq = np.sum((pts - q[None, :]) ** 2, axis=1)
    log_kernels = -0.5 * sq / (h * h) - 0.5 * d * np.log(2 * np.pi * h * h)
    m = log_kernels.max()
    return float(m + np.log(np.exp(log_kernels - m).sum()) - np.log(len(pts)))
