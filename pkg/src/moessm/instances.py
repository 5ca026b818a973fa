"""Deterministic random problem instances.

All randomness flows from a counter-based Philox generator seeded through
numpy SeedSequence spawn keys, one fixed key per logical stream (tokens,
transition, router, each expert). Substreams are therefore independent of
generation order: asking for expert 3's streams never perturbs expert 1's.
generate_instance is a pure function of its spec.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .linalg import spectral_norm
from .moe import ExpertParams
from .router import RouterParams, softmax_weights
from .types import SequenceBatch, StreamSet, TransitionSpec, TRANSITION_KINDS

# spawn-key tags; appending the expert index where applicable
_TAG_TOKENS = 0
_TAG_TRANSITION = 1
_TAG_ROUTER_LOGITS = 2
_TAG_EXPERT_STREAMS = 3
_TAG_EXPERT_PARAMS = 4
_TAG_ROUTER_PARAMS = 5


@dataclass(frozen=True)
class RngInstanceSpec:
    """Everything that determines a generated instance.

    rho_target rescales the transition so its spectral norm (dense), largest
    |diagonal| entry, or largest |per-step scalar| equals it; None leaves the
    raw draw unscaled. scale_b / scale_c / scale_x are standard deviations of
    the expert streams (zero gives exactly-zero streams).
    """

    seed: int
    seq_len: int
    state_dim: int
    channels: int
    num_experts: int
    transition: str = "dense"
    rho_target: float | None = 0.9
    scale_b: float = 1.0
    scale_c: float = 1.0
    scale_x: float = 1.0

    def __post_init__(self):
        for name in ("seq_len", "state_dim", "channels", "num_experts"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise InvalidInputError(f"{name} must be a positive int, got {v!r}")
        if self.transition not in TRANSITION_KINDS:
            raise InvalidInputError(
                f"transition must be one of {TRANSITION_KINDS}, got {self.transition!r}"
            )
        if self.rho_target is not None and not (0.0 < self.rho_target < 1.0):
            raise InvalidInputError(
                f"rho_target must be in (0, 1) or None, got {self.rho_target!r}"
            )
        for name in ("scale_b", "scale_c", "scale_x"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidInputError(f"{name} must be finite and >= 0, got {v!r}")


class StreamInstance(NamedTuple):
    """Stream-level instance: materialized per-expert streams plus weights."""

    batch: SequenceBatch
    transition: TransitionSpec
    streams: list
    pi: np.ndarray


class LayerInstance(NamedTuple):
    """Parameter-level instance: projections instead of materialized streams."""

    batch: SequenceBatch
    transition: TransitionSpec
    params: ExpertParams
    router: RouterParams


def substream(seed: int, *tag: int) -> np.random.Generator:
    """Philox generator for one logical stream of an instance."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(tag)))
    )


def _draw_transition(spec: RngInstanceSpec) -> TransitionSpec:
    rng = substream(spec.seed, _TAG_TRANSITION)
    rho = spec.rho_target
    if spec.transition == "dense":
        g = rng.standard_normal((spec.state_dim, spec.state_dim))
        if rho is not None:
            g *= rho / spectral_norm(g)
        return TransitionSpec(kind="dense", values=g)
    if spec.transition == "diagonal":
        a = rng.uniform(-1.0, 1.0, spec.state_dim)
    else:  # scalar decays stay nonnegative so the semiseparable form applies
        a = rng.uniform(0.0, 1.0, spec.seq_len)
    if rho is not None:
        peak = np.max(np.abs(a))
        if peak > 0:
            a *= rho / peak
    return TransitionSpec(kind=spec.transition, values=a)


def _draw_tokens(spec: RngInstanceSpec) -> SequenceBatch:
    x = substream(spec.seed, _TAG_TOKENS).standard_normal(
        (spec.seq_len, spec.channels)
    )
    return SequenceBatch(x=x)


def generate_instance(spec: RngInstanceSpec) -> StreamInstance:
    """Stream-level instance: tokens, transition, E stream sets, dense weights.

    pi is the row-stochastic softmax of standard-normal logits; callers make
    top-k plans from it with router.topk_mask.
    """
    batch = _draw_tokens(spec)
    transition = _draw_transition(spec)
    shape = (spec.seq_len, spec.state_dim, spec.channels)
    streams = []
    for e in range(spec.num_experts):
        rng = substream(spec.seed, _TAG_EXPERT_STREAMS, e)
        streams.append(
            StreamSet(
                b=spec.scale_b * rng.standard_normal(shape),
                c=spec.scale_c * rng.standard_normal(shape),
                xinj=spec.scale_x * rng.standard_normal((spec.seq_len, spec.channels)),
            )
        )
    logits = substream(spec.seed, _TAG_ROUTER_LOGITS).standard_normal(
        (spec.seq_len, spec.num_experts)
    )
    return StreamInstance(
        batch=batch, transition=transition, streams=streams, pi=softmax_weights(logits)
    )


def generate_layer(spec: RngInstanceSpec, dtype=np.float64) -> LayerInstance:
    """Parameter-level instance sharing the token/transition substreams.

    Projection weights are scaled by 1/sqrt(P) so projected streams have
    roughly the spec's stream scales. dtype=float32 casts everything for
    single-precision benchmarking.
    """
    batch = _draw_tokens(spec)
    transition = _draw_transition(spec)
    n, p, e_count = spec.state_dim, spec.channels, spec.num_experts
    unit = 1.0 / np.sqrt(p)
    wb = np.empty((e_count, n, p, p))
    wc = np.empty((e_count, n, p, p))
    wx = np.empty((e_count, p, p))
    for e in range(e_count):
        rng = substream(spec.seed, _TAG_EXPERT_PARAMS, e)
        wb[e] = spec.scale_b * unit * rng.standard_normal((n, p, p))
        wc[e] = spec.scale_c * unit * rng.standard_normal((n, p, p))
        wx[e] = spec.scale_x * unit * rng.standard_normal((p, p))
    params = ExpertParams(
        wb=wb, bb=np.zeros((e_count, n, p)),
        wc=wc, bc=np.zeros((e_count, n, p)),
        wx=wx, bx=np.zeros((e_count, p)),
    )
    rng = substream(spec.seed, _TAG_ROUTER_PARAMS)
    router = RouterParams(
        wg=unit * rng.standard_normal((e_count, p)), bias=np.zeros(e_count)
    )
    if np.dtype(dtype) != np.float64:
        dt = np.dtype(dtype)
        batch = SequenceBatch(x=batch.x.astype(dt))
        transition = TransitionSpec(
            kind=transition.kind, values=transition.values.astype(dt)
        )
        params = ExpertParams(
            wb=params.wb.astype(dt), bb=params.bb.astype(dt),
            wc=params.wc.astype(dt), bc=params.bc.astype(dt),
            wx=params.wx.astype(dt), bx=params.bx.astype(dt),
        )
        router = RouterParams(wg=router.wg.astype(dt), bias=router.bias.astype(dt))
    return LayerInstance(batch=batch, transition=transition, params=params, router=router)
