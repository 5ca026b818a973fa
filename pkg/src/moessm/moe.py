"""Two mixture-of-experts designs over the same selective recurrence.

Mixed (single trajectory): router weights fold the active experts' streams
into one pair of mixed streams

    U~_t = sum_{e in K_t} pi_te * B_t^(e) x_t^(e)
    C~_t = sum_{e in K_t} pi_te * C_t^(e)

and exactly one recurrence runs over (U~, C~). Expert projections are only
evaluated on the steps where the expert is active, so projection work scales
with k, and the recurrence cost is independent of E.

Separated (baseline): every expert advances its own state every step with its
own unweighted injection; the router only masks and weights the readout

    h_t^(e) = A_t h_{t-1}^(e) + B_t^(e) x_t^(e)        (all experts, always)
    Y_t     = sum_{e in K_t} pi_te * (C_t^(e))^T h_t^(e)

so recurrence and projection cost both scale with E.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError
from .ssd import ChunkPlan, ssd_chunked_core
from .ssm import ssm_scan_sequential
from .types import (
    RoutingPlan,
    SequenceBatch,
    StreamSet,
    TransitionSpec,
    as_float_array,
)

DEFAULT_CHUNK = 64


@dataclass(frozen=True)
class ExpertParams:
    """Per-expert projections from tokens to streams.

    For expert e and token x_t (P,):
        B_t^(e) = wb[e] . x_t + bb[e]   with wb[e] (N, P, P) acting on the
                                        last axis, giving (N, P)
        C_t^(e) = wc[e] . x_t + bc[e]
        x_t^(e) = wx[e] @ x_t + bx[e]   (P,)
    """

    wb: np.ndarray
    bb: np.ndarray
    wc: np.ndarray
    bc: np.ndarray
    wx: np.ndarray
    bx: np.ndarray

    def __post_init__(self):
        wb = as_float_array("wb", self.wb, 4)
        bb = as_float_array("bb", self.bb, 3)
        wc = as_float_array("wc", self.wc, 4)
        bc = as_float_array("bc", self.bc, 3)
        wx = as_float_array("wx", self.wx, 3)
        bx = as_float_array("bx", self.bx, 2)
        e, n, p, p2 = wb.shape
        if p != p2:
            raise InvalidInputError(f"wb must be (E, N, P, P), got {wb.shape}")
        if wc.shape != wb.shape:
            raise InvalidInputError(f"wc shape {wc.shape} != wb shape {wb.shape}")
        if bb.shape != (e, n, p) or bc.shape != (e, n, p):
            raise InvalidInputError(
                f"stream biases must be (E, N, P) = {(e, n, p)}, "
                f"got bb {bb.shape}, bc {bc.shape}"
            )
        if wx.shape != (e, p, p) or bx.shape != (e, p):
            raise InvalidInputError(
                f"input projections must be wx (E, P, P), bx (E, P); "
                f"got {wx.shape}, {bx.shape}"
            )
        for name, arr in (("wb", wb), ("bb", bb), ("wc", wc),
                          ("bc", bc), ("wx", wx), ("bx", bx)):
            object.__setattr__(self, name, arr)

    @property
    def num_experts(self) -> int:
        return self.wb.shape[0]

    @property
    def state_dim(self) -> int:
        return self.wb.shape[1]

    @property
    def channels(self) -> int:
        return self.wb.shape[3]


@dataclass(frozen=True)
class MixedStreams:
    """The folded streams (U~, C~) the single recurrence runs over."""

    u_tilde: np.ndarray
    c_tilde: np.ndarray

    def __post_init__(self):
        u = as_float_array("u_tilde", self.u_tilde, 3)
        c = as_float_array("c_tilde", self.c_tilde, 3)
        if u.shape != c.shape:
            raise InvalidInputError(
                f"u_tilde shape {u.shape} != c_tilde shape {c.shape}"
            )
        object.__setattr__(self, "u_tilde", u)
        object.__setattr__(self, "c_tilde", c)


class MixedForward(NamedTuple):
    y: np.ndarray
    state: object  # StateTrajectory when recorded, else final (N, P) state
    mixed: MixedStreams


class SeparatedForward(NamedTuple):
    y: np.ndarray
    states: list  # per expert: StateTrajectory when recorded, else (N, P)


def _project(params: ExpertParams, e: int, x: np.ndarray):
    """Streams of expert e on token rows x (t, P); returns (b, c, xinj)."""
    n, p = params.state_dim, params.channels
    b = (x @ params.wb[e].reshape(n * p, p).T).reshape(-1, n, p)
    b += params.bb[e]
    c = (x @ params.wc[e].reshape(n * p, p).T).reshape(-1, n, p)
    c += params.bc[e]
    xinj = x @ params.wx[e].T
    xinj += params.bx[e]
    return b, c, xinj


def expert_streams(params: ExpertParams, batch: SequenceBatch, e: int) -> StreamSet:
    """Full-sequence streams of one expert as a validated StreamSet."""
    if not (0 <= e < params.num_experts):
        raise InvalidInputError(f"expert index {e} out of range [0, {params.num_experts})")
    if batch.channels != params.channels:
        raise InvalidInputError(
            f"batch has {batch.channels} channels, params expect {params.channels}"
        )
    b, c, xinj = _project(params, e, batch.x)
    return StreamSet(b=b, c=c, xinj=xinj)


def mix_streams(streams: Sequence[StreamSet], plan: RoutingPlan) -> MixedStreams:
    """Fold per-expert streams into (U~, C~) under the routing plan."""
    if len(streams) != plan.num_experts:
        raise InvalidInputError(
            f"{len(streams)} stream sets for a plan with {plan.num_experts} experts"
        )
    first = streams[0]
    for s in streams[1:]:
        if s.b.shape != first.b.shape:
            raise InvalidInputError("expert stream shapes disagree")
    if first.seq_len != plan.seq_len:
        raise InvalidInputError(
            f"streams have T={first.seq_len}, plan has T={plan.seq_len}"
        )
    t_len, n, p = first.b.shape
    dtype = np.result_type(first.b.dtype, plan.pi.dtype)
    u = np.zeros((t_len, n, p), dtype=dtype)
    c = np.zeros((t_len, n, p), dtype=dtype)
    tmp = np.empty((t_len, n, p), dtype=dtype)
    for e, s in enumerate(streams):
        if not plan.active[:, e].any():
            continue
        w = plan.pi[:, e][:, None, None]
        np.multiply(s.b, s.xinj[:, None, :], out=tmp)
        tmp *= w
        u += tmp
        np.multiply(s.c, w, out=tmp)
        c += tmp
    return MixedStreams(u_tilde=u, c_tilde=c)


def _check_layer_compat(params: ExpertParams, plan: RoutingPlan, batch: SequenceBatch):
    if batch.channels != params.channels:
        raise InvalidInputError(
            f"batch has {batch.channels} channels, params expect {params.channels}"
        )
    if plan.num_experts != params.num_experts:
        raise InvalidInputError(
            f"plan has {plan.num_experts} experts, params have {params.num_experts}"
        )
    if plan.seq_len != batch.seq_len:
        raise InvalidInputError(
            f"plan covers T={plan.seq_len}, batch has T={batch.seq_len}"
        )


def moe_param_forward(
    params: ExpertParams,
    transition: TransitionSpec,
    plan: RoutingPlan,
    batch: SequenceBatch,
    h0: np.ndarray | None = None,
    record: bool = False,
    evaluator: str = "auto",
    chunk: int = DEFAULT_CHUNK,
) -> MixedForward:
    """Mixed design: fold streams, then run exactly one recurrence.

    Expert projections are computed only on each expert's active steps
    (gather, project, scatter-add), so projection work is proportional to k.
    evaluator: "sequential" runs the step kernel, "ssd" the chunked scan
    (scalar transitions only), "auto" picks ssd for scalar transitions when
    no trajectory is requested.
    """
    _check_layer_compat(params, plan, batch)
    if evaluator not in ("auto", "sequential", "ssd"):
        raise InvalidInputError(f"unknown evaluator {evaluator!r}")
    t_len, p = batch.x.shape
    n = params.state_dim
    dtype = np.result_type(batch.x.dtype, params.wb.dtype, plan.pi.dtype)
    u = np.zeros((t_len, n, p), dtype=dtype)
    c = np.zeros((t_len, n, p), dtype=dtype)
    for e in range(params.num_experts):
        col = plan.active[:, e]
        if col.all():
            b_e, c_e, xinj = _project(params, e, batch.x)
            w = plan.pi[:, e][:, None, None]
            b_e *= xinj[:, None, :]
            b_e *= w
            u += b_e
            c_e *= w
            c += c_e
        else:
            idx = np.nonzero(col)[0]
            if idx.size == 0:
                continue
            b_e, c_e, xinj = _project(params, e, batch.x[idx])
            w = plan.pi[idx, e][:, None, None]
            b_e *= xinj[:, None, :]
            b_e *= w
            u[idx] += b_e
            c_e *= w
            c[idx] += c_e
    mixed = MixedStreams(u_tilde=u, c_tilde=c)

    use_ssd = evaluator == "ssd" or (
        evaluator == "auto" and transition.kind == "scalar" and not record
    )
    if use_ssd:
        plan_c = ChunkPlan(seq_len=t_len, chunk=min(chunk, t_len))
        y, h_last = ssd_chunked_core(transition, u, c, plan_c, h0=h0)
        return MixedForward(y=y, state=h_last, mixed=mixed)
    y, state = ssm_scan_sequential(u, c, h0, transition, record=record)
    return MixedForward(y=y, state=state, mixed=mixed)


def mixed_forward_streams(
    streams: Sequence[StreamSet],
    transition: TransitionSpec,
    plan: RoutingPlan,
    h0: np.ndarray | None = None,
    record: bool = False,
) -> MixedForward:
    """Mixed design starting from already-materialized expert streams."""
    mixed = mix_streams(streams, plan)
    y, state = ssm_scan_sequential(
        mixed.u_tilde, mixed.c_tilde, h0, transition, record=record
    )
    return MixedForward(y=y, state=state, mixed=mixed)


def _resolve_h0s(h0s, e_count: int, n: int, p: int):
    if h0s is None:
        return [None] * e_count
    h0s = as_float_array("h0s", np.asarray(h0s), 3)
    if h0s.shape != (e_count, n, p):
        raise InvalidInputError(f"h0s shape {h0s.shape}, expected {(e_count, n, p)}")
    return list(h0s)


def separated_forward_streams(
    streams: Sequence[StreamSet],
    transition: TransitionSpec,
    plan: RoutingPlan,
    h0s=None,
    record: bool = False,
) -> SeparatedForward:
    """Separated baseline from materialized streams: E independent scans.

    Every expert's state advances each step regardless of the plan; the plan
    only weights the readout.
    """
    if len(streams) != plan.num_experts:
        raise InvalidInputError(
            f"{len(streams)} stream sets for a plan with {plan.num_experts} experts"
        )
    first = streams[0]
    t_len, n, p = first.b.shape
    h0_list = _resolve_h0s(h0s, len(streams), n, p)
    y = np.zeros((t_len, p), dtype=np.result_type(first.b.dtype, plan.pi.dtype))
    states = []
    for e, s in enumerate(streams):
        u_e = s.b * s.xinj[:, None, :]
        y_e, state_e = ssm_scan_sequential(
            u_e, s.c, h0_list[e], transition, record=record
        )
        y += plan.pi[:, e][:, None] * y_e
        states.append(state_e)
    return SeparatedForward(y=y, states=states)


def moe_separated_forward(
    params: ExpertParams,
    transition: TransitionSpec,
    plan: RoutingPlan,
    batch: SequenceBatch,
    h0s=None,
    record: bool = False,
) -> SeparatedForward:
    """Separated baseline from parameters: project every expert on every step.

    Streams are materialized one expert at a time so peak memory is one
    expert's streams, not E of them.
    """
    _check_layer_compat(params, plan, batch)
    t_len, p = batch.x.shape
    n = params.state_dim
    h0_list = _resolve_h0s(h0s, params.num_experts, n, p)
    y = np.zeros((t_len, p), dtype=np.result_type(batch.x.dtype, params.wb.dtype))
    states = []
    for e in range(params.num_experts):
        b_e, c_e, xinj = _project(params, e, batch.x)
        b_e *= xinj[:, None, :]  # b_e now holds the injection B x
        y_e, state_e = ssm_scan_sequential(
            b_e, c_e, h0_list[e], transition, record=record
        )
        y += plan.pi[:, e][:, None] * y_e
        states.append(state_e)
    return SeparatedForward(y=y, states=states)
