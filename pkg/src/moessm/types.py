"""Array containers and norm conventions used across the package.

Shape conventions (all arrays are C-contiguous float32/float64 numpy arrays):

    T  sequence length          N  state dimension per channel
    P  channels                 E  number of experts

    state h          (N, P)    one column of state per channel
    injected input U (T, N, P)
    readout C        (T, N, P)
    tokens x         (T, P)
    outputs Y        (T, P)

Norms: transition matrices are measured in the spectral (operator 2-) norm,
state and per-step stream slices in the Frobenius norm over (N, P), and output
rows in the Euclidean norm. These are the conventions every bound check in
:mod:`moessm.theory` reports against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnsupportedTransitionError

TRANSITION_KINDS = ("dense", "diagonal", "scalar")


def as_float_array(name: str, value, ndim: int | None = None) -> np.ndarray:
    """Coerce to a finite floating ndarray, validating rank."""
    arr = np.ascontiguousarray(value)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(
            f"{name} must have {ndim} dimensions, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class TransitionSpec:
    """State transition A in one of three structures.

    kind       values shape     step update h <- A h
    "dense"    (N, N)           matrix product A @ h
    "diagonal" (N,)             per-state scale a[:, None] * h
    "scalar"   (T,)             per-step scalar a_t * h
    """

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in TRANSITION_KINDS:
            raise InvalidInputError(
                f"transition kind must be one of {TRANSITION_KINDS}, got {self.kind!r}"
            )
        ndim = 2 if self.kind == "dense" else 1
        arr = as_float_array("transition values", self.values, ndim)
        if self.kind == "dense" and arr.shape[0] != arr.shape[1]:
            raise InvalidInputError(f"dense transition must be square, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def state_dim(self) -> int | None:
        """N for dense/diagonal; None for scalar (N comes from the inputs)."""
        if self.kind == "scalar":
            return None
        return self.values.shape[0]

    def apply(self, h: np.ndarray, step: int = 0) -> np.ndarray:
        """A_step @ h for an (N, P) state. ``step`` indexes scalar kinds only."""
        if self.kind == "dense":
            return self.values @ h
        if self.kind == "diagonal":
            return self.values[:, None] * h
        return self.values[step] * h

    def apply_transpose(self, h: np.ndarray, step: int = 0) -> np.ndarray:
        """A_step^T @ h; identical to apply() for the symmetric structures."""
        if self.kind == "dense":
            return self.values.T @ h
        if self.kind == "diagonal":
            return self.values[:, None] * h
        return self.values[step] * h

    def spectral_bound(self) -> float:
        """sup over steps of the spectral norm of the transition.

        Diagonal and scalar structures admit the closed form max |a|; dense
        defers to power iteration.
        """
        if self.kind == "dense":
            from .linalg import spectral_norm

            return spectral_norm(self.values)
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def scalar_decays(self, length: int) -> np.ndarray:
        """The length-T decay vector; only scalar kinds support this."""
        if self.kind != "scalar":
            raise UnsupportedTransitionError(
                f"operation requires a scalar-per-step transition, got kind={self.kind!r}"
            )
        if self.values.shape[0] != length:
            raise InvalidInputError(
                f"scalar transition has {self.values.shape[0]} steps, sequence has {length}"
            )
        return self.values


@dataclass(frozen=True)
class SequenceBatch:
    """Token sequence x with shape (T, P)."""

    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", as_float_array("x", self.x, 2))
        if min(self.x.shape) < 1:
            raise InvalidInputError(f"x must be nonempty, got shape {self.x.shape}")

    @property
    def seq_len(self) -> int:
        return self.x.shape[0]

    @property
    def channels(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class StreamSet:
    """Per-step selective streams for one expert (or the plain model).

    b, c: (T, N, P) injection and readout streams; xinj: (T, P) the input this
    expert injects (for the plain selective model this is just the tokens).
    """

    b: np.ndarray
    c: np.ndarray
    xinj: np.ndarray

    def __post_init__(self):
        b = as_float_array("b", self.b, 3)
        c = as_float_array("c", self.c, 3)
        xinj = as_float_array("xinj", self.xinj, 2)
        if b.shape != c.shape:
            raise InvalidInputError(f"b and c shapes differ: {b.shape} vs {c.shape}")
        if xinj.shape != (b.shape[0], b.shape[2]):
            raise InvalidInputError(
                f"xinj shape {xinj.shape} does not match streams {b.shape}"
            )
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "xinj", xinj)

    @property
    def seq_len(self) -> int:
        return self.b.shape[0]

    @property
    def state_dim(self) -> int:
        return self.b.shape[1]

    @property
    def channels(self) -> int:
        return self.b.shape[2]


@dataclass(frozen=True)
class RoutingPlan:
    """Router weights pi (T, E) plus the active sets they induce.

    pi holds the weights actually used in mixing: nonnegative and zero
    wherever ``active`` is False. ``k`` is the retained count per row (E for
    dense plans). Nonnegativity is all the structural results assume; plans
    produced by the router additionally have row mass at most 1 (softmax mass
    is only ever dropped by masking, never renormalized back up), but that is
    a property of the router, not a requirement of the container.
    """

    pi: np.ndarray
    active: np.ndarray
    k: int

    def __post_init__(self):
        pi = as_float_array("pi", self.pi, 2)
        active = np.ascontiguousarray(self.active)
        if active.dtype != np.bool_:
            raise InvalidInputError("active must be a boolean array")
        if active.shape != pi.shape:
            raise InvalidInputError(
                f"active shape {active.shape} must match pi shape {pi.shape}"
            )
        if np.any(pi < 0):
            raise InvalidInputError("pi must be nonnegative")
        if np.any(pi[~active] != 0):
            raise InvalidInputError("pi must be zero outside the active sets")
        if not (1 <= self.k <= pi.shape[1]):
            raise InvalidInputError(f"k={self.k} out of range for E={pi.shape[1]}")
        counts = active.sum(axis=1)
        if np.any(counts > self.k):
            raise InvalidInputError("some rows retain more than k experts")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "active", active)

    @classmethod
    def dense(cls, pi: np.ndarray) -> "RoutingPlan":
        """Plan that keeps every expert at every step."""
        pi = as_float_array("pi", pi, 2)
        return cls(pi=pi, active=np.ones(pi.shape, dtype=bool), k=pi.shape[1])

    @property
    def seq_len(self) -> int:
        return self.pi.shape[0]

    @property
    def num_experts(self) -> int:
        return self.pi.shape[1]


@dataclass(frozen=True)
class StateTrajectory:
    """Recorded states h with shape (T+1, N, P); h[0] is the initial state.

    Holds views of the scan's buffer; treat as read-only.
    """

    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", as_float_array("h", self.h, 3))

    @property
    def initial(self) -> np.ndarray:
        return self.h[0]

    @property
    def final(self) -> np.ndarray:
        return self.h[-1]

    @property
    def seq_len(self) -> int:
        return self.h.shape[0] - 1

    def after_step(self, t: int) -> np.ndarray:
        """State immediately after step t (1-based); after_step(0) = initial."""
        return self.h[t]


def frobenius(x: np.ndarray) -> float:
    """Frobenius norm of one (N, P) slice."""
    return float(np.linalg.norm(x))


def frobenius_per_step(x: np.ndarray) -> np.ndarray:
    """Frobenius norm of each (N, P) slice of a (T, N, P) array."""
    x = np.asarray(x)
    return np.sqrt(np.einsum("tnp,tnp->t", x, x))


def row_norms(y: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row of a (T, P) array."""
    return np.linalg.norm(np.asarray(y), axis=1)
