"""Chunked semiseparable scan for scalar-per-step transitions.

With a scalar decay a_t >= 0 per step, the map x -> Y is, per channel p, a
lower-triangular semiseparable matrix

    M[i, j] = <C_i, B_j>_p * prod_{k=j+1..i} a_k     (i >= j)

which admits a chunked evaluation: within a chunk of length Q the outputs are
a masked (Q, Q) matmul against the decay matrix; across chunks only the (N, P)
state is carried. Work per chunk is O(Q^2 N P) intra + O(Q N P) carry, so the
total is O(T Q N P) plus the O(T/Q) sequential chunk loop; memory is
O(P Q^2) for the per-channel Gram block.

semiseparable_materialize builds M explicitly as an O(T^2) oracle for small T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SizeLimitError
from .types import SequenceBatch, StreamSet, TransitionSpec, as_float_array

MATERIALIZE_MAX_T = 2048


@dataclass(frozen=True)
class ChunkPlan:
    """Partition of [0, T) into contiguous chunks (the last may be ragged)."""

    seq_len: int
    chunk: int

    def __post_init__(self):
        if self.seq_len < 1:
            raise InvalidInputError(f"seq_len must be >= 1, got {self.seq_len}")
        if not (1 <= self.chunk <= self.seq_len):
            raise InvalidInputError(
                f"chunk size must be in [1, T={self.seq_len}], got {self.chunk}"
            )

    @property
    def num_chunks(self) -> int:
        return -(-self.seq_len // self.chunk)

    def bounds(self) -> list[tuple[int, int]]:
        """[(lo, hi), ...] covering [0, T) in order."""
        edges = list(range(0, self.seq_len, self.chunk)) + [self.seq_len]
        return list(zip(edges[:-1], edges[1:]))


def _resolve_decays(transition, seq_len: int) -> np.ndarray:
    """Accept a TransitionSpec (must be scalar kind) or a raw decay vector."""
    if isinstance(transition, TransitionSpec):
        a = transition.scalar_decays(seq_len)
    else:
        a = as_float_array("decays", transition, 1)
        if a.shape[0] != seq_len:
            raise InvalidInputError(
                f"decay vector has {a.shape[0]} steps, sequence has {seq_len}"
            )
    if np.any(a < 0):
        i = int(np.argmax(a < 0))
        raise InvalidInputError(
            f"semiseparable form needs nonnegative decays; a[{i}] = {a[i]!r}"
        )
    return a


def decay_matrix(a: np.ndarray, log_space: bool = False) -> np.ndarray:
    """Lower-triangular D with D[i, j] = prod_{k=j+1..i} a_k, D[i, i] = 1.

    The default builds rows by one multiply of the previous row, which keeps
    products exact for short ranges. log_space instead exponentiates
    differences of cumulative log sums (requires strictly positive decays);
    useful when chunks are long enough for repeated multiplication to drift.
    """
    a = np.asarray(a)
    t_len = a.shape[0]
    if log_space:
        if np.any(a <= 0):
            raise InvalidInputError("log-space decay products need strictly positive a")
        cum = np.concatenate([[0.0], np.cumsum(np.log(a))])
        d = np.exp(cum[1:, None] - cum[None, 1:])
        return np.tril(d)
    d = np.zeros((t_len, t_len), dtype=a.dtype)
    d[0, 0] = 1.0
    for i in range(1, t_len):
        d[i, :i] = a[i] * d[i - 1, :i]
        d[i, i] = 1.0
    return d


def semiseparable_materialize(transition, streams: StreamSet) -> np.ndarray:
    """Materialize the per-channel (T, T) semiseparable operator.

    Returns M with shape (P, T, T); Y[:, p] = M[p] @ x[:, p]. Guarded to
    T <= 2048 because the cost and memory are quadratic in T. Non-scalar
    TransitionSpecs raise UnsupportedTransitionError via the decay resolver.
    """
    t_len = streams.seq_len
    if t_len > MATERIALIZE_MAX_T:
        raise SizeLimitError(
            f"refusing to materialize a {t_len} x {t_len} operator "
            f"(limit {MATERIALIZE_MAX_T}); use ssd_chunked instead"
        )
    a = _resolve_decays(transition, t_len)
    d = decay_matrix(a)
    # gram[p, i, j] = <C_i, B_j> per channel.
    gram = np.einsum("inp,jnp->pij", streams.c, streams.b)
    return gram * d[None, :, :]


def semiseparable_apply(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a materialized operator: Y[i, p] = sum_j M[p, i, j] x[j, p]."""
    m = as_float_array("m", m, 3)
    x = as_float_array("x", x, 2)
    if m.shape[1] != x.shape[0] or m.shape[0] != x.shape[1]:
        raise InvalidInputError(f"operator {m.shape} does not match x {x.shape}")
    return np.einsum("pij,jp->ip", m, x)


def ssd_chunked_core(
    a: np.ndarray,
    u: np.ndarray,
    cs: np.ndarray,
    plan: ChunkPlan,
    h0: np.ndarray | None = None,
    log_space: bool = False,
    return_boundary_states: bool = False,
):
    """Chunked scan over precomputed injected inputs U.

    Semantically equal to ssm_scan_sequential with a scalar transition:
    h_t = a_t h_{t-1} + U_t, Y_t = <C_t, h_t> per channel. Returns
    (Y, final state); with return_boundary_states, also the (M+1, N, P)
    array of carried states at chunk boundaries (index m = state entering
    chunk m).
    """
    u = as_float_array("u", u, 3)
    cs = as_float_array("cs", cs, 3)
    if u.shape != cs.shape:
        raise InvalidInputError(f"u shape {u.shape} != cs shape {cs.shape}")
    t_len, n, p = u.shape
    a = _resolve_decays(a, t_len)
    if plan.seq_len != t_len:
        raise InvalidInputError(f"plan covers T={plan.seq_len}, inputs have T={t_len}")
    if h0 is None:
        h = np.zeros((n, p), dtype=u.dtype)
    else:
        h0 = as_float_array("h0", h0, 2)
        if h0.shape != (n, p):
            raise InvalidInputError(f"h0 shape {h0.shape}, expected {(n, p)}")
        h = h0.astype(u.dtype, copy=True)

    y = np.empty((t_len, p), dtype=u.dtype)
    boundaries = [h.copy()] if return_boundary_states else None
    for lo, hi in plan.bounds():
        a_ch, u_ch, c_ch = a[lo:hi], u[lo:hi], cs[lo:hi]
        d = decay_matrix(a_ch, log_space=log_space)
        # Intra-chunk: Y[i] += sum_{j<=i} D[i,j] <C_i, B_j x_j>.
        gram = np.einsum("inp,jnp->pij", c_ch, u_ch)
        y_block = np.einsum("pij,ij->ip", gram, d)
        # Carried state: weight on h entering the chunk is prod_{k=lo..lo+i}.
        w = a_ch[0] * d[:, 0]
        y_block += w[:, None] * np.einsum("inp,np->ip", c_ch, h)
        y[lo:hi] = y_block
        h = w[-1] * h + np.einsum("j,jnp->np", d[-1], u_ch)
        if boundaries is not None:
            boundaries.append(h.copy())
    if boundaries is not None:
        return y, h, np.stack(boundaries)
    return y, h


def ssd_chunked(
    transition,
    streams: StreamSet,
    batch: SequenceBatch,
    plan: ChunkPlan,
    h0: np.ndarray | None = None,
    log_space: bool = False,
):
    """Chunked selective scan from streams: U = B_t * x_t, then the core."""
    if streams.seq_len != batch.seq_len or streams.channels != batch.channels:
        raise InvalidInputError(
            f"streams (T={streams.seq_len}, P={streams.channels}) do not match "
            f"batch (T={batch.seq_len}, P={batch.channels})"
        )
    u = streams.b * batch.x[:, None, :]
    return ssd_chunked_core(
        transition, u, streams.c, plan, h0=h0, log_space=log_space
    )
