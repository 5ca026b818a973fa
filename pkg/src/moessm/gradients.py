"""Analytic backward pass for the mixed design, with FD verification.

The forward chain is

    logits -> pi (softmax) -> plan (optional top-k mask, fixed active sets)
    x -> per-expert streams (B, C, xinj)
    streams + plan -> (U~, C~) -> scan -> Y -> loss

Backward runs the adjoint recurrence

    lam_t = C~_t dY_t + A_{t+1}^T lam_{t+1}

then peels mixing and projections off it. Top-k selection is treated as a
fixed mask: gradients flow only through retained weights, and the
finite-difference harness rejects (and reports) probes that flip an active
set, since the loss is genuinely nondifferentiable there.

Two independent numeric checks live here: finite_diff_check compares every
gradient group against central differences through the full chain, and
adjoint_dot_test checks <J v, w> = <v, J^T w> per input group of the
scan+mixing Jacobian. Tangents are applied one group at a time, which keeps
each directional map at most quadratic in the step, so central differences
are truncation-free and the test can honestly run at tight tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .moe import ExpertParams, MixedStreams, expert_streams, mix_streams
from .router import RouterParams, router_logits, softmax_weights, topk_mask
from .ssm import ssm_scan_sequential
from .types import (
    RoutingPlan,
    SequenceBatch,
    StateTrajectory,
    StreamSet,
    TransitionSpec,
)


class ScanGrads(NamedTuple):
    d_u_tilde: np.ndarray
    d_c_tilde: np.ndarray
    d_transition: np.ndarray
    d_h0: np.ndarray


class StreamGrads(NamedTuple):
    d_b: np.ndarray
    d_c: np.ndarray
    d_xinj: np.ndarray


class MixingGrads(NamedTuple):
    d_pi: np.ndarray
    streams: list  # StreamGrads per expert


class ExpertParamGrads(NamedTuple):
    wb: np.ndarray
    bb: np.ndarray
    wc: np.ndarray
    bc: np.ndarray
    wx: np.ndarray
    bx: np.ndarray


class RouterGrads(NamedTuple):
    wg: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class GradBundle:
    """All gradients of one scalar loss through the mixed design."""

    d_u_tilde: np.ndarray
    d_c_tilde: np.ndarray
    d_transition: np.ndarray
    d_h0: np.ndarray
    d_pi: np.ndarray
    d_params: ExpertParamGrads
    d_logits: np.ndarray
    d_router: RouterGrads


@dataclass(frozen=True)
class LayerCache:
    """Everything the backward pass and FD probes need from one forward."""

    params: ExpertParams
    router: RouterParams
    transition: TransitionSpec
    batch: SequenceBatch
    k: int | None
    h0: np.ndarray
    logits: np.ndarray
    pi_full: np.ndarray
    plan: RoutingPlan
    streams: list
    mixed: MixedStreams
    traj: StateTrajectory
    y: np.ndarray


def layer_forward(
    params: ExpertParams,
    router: RouterParams,
    transition: TransitionSpec,
    batch: SequenceBatch,
    k: int | None = None,
    h0: np.ndarray | None = None,
) -> LayerCache:
    """Forward pass with trajectory recording and all intermediates kept."""
    logits = router_logits(router, batch)
    pi_full = softmax_weights(logits)
    plan = RoutingPlan.dense(pi_full) if k is None else topk_mask(pi_full, k)
    streams = [expert_streams(params, batch, e) for e in range(params.num_experts)]
    mixed = mix_streams(streams, plan)
    n, p = params.state_dim, params.channels
    h0 = np.zeros((n, p)) if h0 is None else np.asarray(h0, dtype=np.float64)
    y, traj = ssm_scan_sequential(
        mixed.u_tilde, mixed.c_tilde, h0, transition, record=True
    )
    return LayerCache(
        params=params, router=router, transition=transition, batch=batch,
        k=k, h0=h0, logits=logits, pi_full=pi_full, plan=plan,
        streams=streams, mixed=mixed, traj=traj, y=y,
    )


def quadratic_loss(y: np.ndarray) -> tuple[float, np.ndarray]:
    """L = 0.5 sum Y^2 and its gradient dL/dY = Y."""
    return 0.5 * float(np.sum(y * y)), y.copy()


def backward_ssm(
    traj: StateTrajectory,
    transition: TransitionSpec,
    c_tilde: np.ndarray,
    d_y: np.ndarray,
) -> ScanGrads:
    """Adjoint of the recurrence: gradients at (U~, C~, A, h0).

    lam_t = C~_t dY_t + A_{t+1}^T lam_{t+1} run backward; then
    dU~_t = lam_t, dC~_t = h_t dY_t, dA = sum_t lam_t h_{t-1}^T (reduced per
    structure), dh0 = A_1^T lam_1.
    """
    h = traj.h
    t_len = h.shape[0] - 1
    if d_y.shape != (t_len, h.shape[2]):
        raise InvalidInputError(
            f"d_y shape {d_y.shape}, expected {(t_len, h.shape[2])}"
        )
    lam = np.empty((t_len,) + h.shape[1:])
    nxt = None
    for t in range(t_len - 1, -1, -1):
        lam[t] = c_tilde[t] * d_y[t][None, :]
        if nxt is not None:
            lam[t] += transition.apply_transpose(nxt, step=t + 1)
        nxt = lam[t]
    d_c_tilde = h[1:] * d_y[:, None, :]
    if transition.kind == "dense":
        d_transition = np.einsum("tnp,tmp->nm", lam, h[:-1])
    elif transition.kind == "diagonal":
        d_transition = np.einsum("tnp,tnp->n", lam, h[:-1])
    else:
        d_transition = np.einsum("tnp,tnp->t", lam, h[:-1])
    d_h0 = transition.apply_transpose(lam[0], step=0)
    return ScanGrads(
        d_u_tilde=lam, d_c_tilde=d_c_tilde, d_transition=d_transition, d_h0=d_h0
    )


def backward_mixing(
    streams,
    plan: RoutingPlan,
    d_u_tilde: np.ndarray,
    d_c_tilde: np.ndarray,
) -> MixingGrads:
    """Peel the mixing sums off scan gradients.

    d_pi is reported only on retained (active) entries; masked experts are a
    fixed zero under the selection, so their entries stay 0.
    """
    t_len, e_count = plan.pi.shape
    d_pi = np.zeros((t_len, e_count))
    out = []
    for e, s in enumerate(streams):
        col = plan.active[:, e]
        w = plan.pi[:, e]
        u_e = s.b * s.xinj[:, None, :]
        contrib = np.einsum("tnp,tnp->t", u_e, d_u_tilde) + np.einsum(
            "tnp,tnp->t", s.c, d_c_tilde
        )
        d_pi[:, e] = np.where(col, contrib, 0.0)
        d_b = w[:, None, None] * d_u_tilde * s.xinj[:, None, :]
        d_c = w[:, None, None] * d_c_tilde
        d_xinj = w[:, None] * np.einsum("tnp,tnp->tp", s.b, d_u_tilde)
        out.append(StreamGrads(d_b=d_b, d_c=d_c, d_xinj=d_xinj))
    return MixingGrads(d_pi=d_pi, streams=out)


def backward_projections(
    params: ExpertParams, batch: SequenceBatch, mixing: MixingGrads
) -> ExpertParamGrads:
    """Push stream gradients through the per-expert linear projections."""
    x = batch.x
    e_count = params.num_experts
    g = ExpertParamGrads(
        wb=np.zeros_like(params.wb), bb=np.zeros_like(params.bb),
        wc=np.zeros_like(params.wc), bc=np.zeros_like(params.bc),
        wx=np.zeros_like(params.wx), bx=np.zeros_like(params.bx),
    )
    for e in range(e_count):
        sg = mixing.streams[e]
        g.wb[e] = np.einsum("tnp,tq->npq", sg.d_b, x)
        g.bb[e] = sg.d_b.sum(axis=0)
        g.wc[e] = np.einsum("tnp,tq->npq", sg.d_c, x)
        g.bc[e] = sg.d_c.sum(axis=0)
        g.wx[e] = np.einsum("tp,tq->pq", sg.d_xinj, x)
        g.bx[e] = sg.d_xinj.sum(axis=0)
    return g


def backward_router(pi_full: np.ndarray, d_pi: np.ndarray) -> np.ndarray:
    """Softmax Jacobian: d_logits_i = pi_i (g_i - <g, pi>) per row.

    pi_full is the unmasked softmax; d_pi is already zero on masked entries,
    which is exactly the fixed-selection convention.
    """
    inner = np.sum(d_pi * pi_full, axis=1, keepdims=True)
    return pi_full * (d_pi - inner)


def layer_backward(cache: LayerCache, d_y: np.ndarray) -> GradBundle:
    """Full chain: scan -> mixing -> projections and router."""
    sg = backward_ssm(cache.traj, cache.transition, cache.mixed.c_tilde, d_y)
    mg = backward_mixing(cache.streams, cache.plan, sg.d_u_tilde, sg.d_c_tilde)
    pg = backward_projections(cache.params, cache.batch, mg)
    d_logits = backward_router(cache.pi_full, mg.d_pi)
    rg = RouterGrads(wg=d_logits.T @ cache.batch.x, bias=d_logits.sum(axis=0))
    return GradBundle(
        d_u_tilde=sg.d_u_tilde, d_c_tilde=sg.d_c_tilde,
        d_transition=sg.d_transition, d_h0=sg.d_h0,
        d_pi=mg.d_pi, d_params=pg, d_logits=d_logits, d_router=rg,
    )


def loss_and_grads(cache: LayerCache, loss_fn=None) -> tuple[float, GradBundle]:
    """Scalar loss and all gradients; loss_fn maps Y -> (value, dL/dY)."""
    loss, d_y = (loss_fn or quadratic_loss)(cache.y)
    return loss, layer_backward(cache, d_y)


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


class GroupCheck(NamedTuple):
    max_rel_err: float
    checked: int
    rejected: int


def _rel_err(a: float, b: float, scale: float, floor: float = 1e-8) -> float:
    """|a - b| relative to the group's gradient scale (infinity norm).

    A per-coordinate quotient |a - b| / |a| turns the central-difference
    rounding floor (eps * |L| / step, an absolute quantity) into an
    arbitrarily large "error" on coordinates that sit far below the group
    scale, misreporting FD noise as gradient error. Measuring against the
    group's largest magnitude is the vector infinity-norm relative error.
    """
    return abs(a - b) / max(scale, floor)


def _scalar_rel(a: float, b: float, floor: float = 1e-12) -> float:
    """Relative discrepancy of two scalars, for the adjoint dot test."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def _group_scale(*arrays) -> float:
    return max((float(np.max(np.abs(a))) if a.size else 0.0) for a in arrays)


def _scan_loss(u, c, transition, h0, loss_fn=quadratic_loss) -> float:
    y, _ = ssm_scan_sequential(u, c, h0, transition, record=False)
    return loss_fn(y)[0]


def _mix_raw(streams, pi: np.ndarray, active: np.ndarray):
    """Mixing from raw weight arrays, bypassing RoutingPlan validation.

    FD probes nudge weights past the plan invariants (mass <= 1), which is
    fine for differentiation purposes; masked entries stay masked.
    """
    first = streams[0]
    t_len, n, p = first.b.shape
    u = np.zeros((t_len, n, p))
    c = np.zeros((t_len, n, p))
    for e, s in enumerate(streams):
        w = np.where(active[:, e], pi[:, e], 0.0)[:, None, None]
        u += w * (s.b * s.xinj[:, None, :])
        c += w * s.c
    return u, c


def _loss_from_pi(cache: LayerCache, pi: np.ndarray, loss_fn=quadratic_loss) -> float:
    u, c = _mix_raw(cache.streams, pi, cache.plan.active)
    return _scan_loss(u, c, cache.transition, cache.h0, loss_fn)


def _topk_active(pi: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(-pi, axis=1, kind="stable")
    active = np.zeros(pi.shape, dtype=bool)
    np.put_along_axis(active, order[:, :k], True, axis=1)
    return active


def _loss_from_logits(
    cache: LayerCache, logits: np.ndarray, loss_fn=quadratic_loss
) -> float | None:
    """Loss via routing; None when the probe flips an active set."""
    pi = softmax_weights(logits)
    if cache.k is not None:
        active = _topk_active(pi, cache.k)
        if not np.array_equal(active, cache.plan.active):
            return None
    u, c = _mix_raw(cache.streams, pi, cache.plan.active)
    return _scan_loss(u, c, cache.transition, cache.h0, loss_fn)


def _loss_from_params(
    cache: LayerCache, params: ExpertParams, loss_fn=quadratic_loss
) -> float:
    streams = [
        expert_streams(params, cache.batch, e) for e in range(params.num_experts)
    ]
    mixed = mix_streams(streams, cache.plan)
    return _scan_loss(mixed.u_tilde, mixed.c_tilde, cache.transition, cache.h0, loss_fn)


def _bump(arr: np.ndarray, flat_idx: int, delta: float) -> np.ndarray:
    out = arr.copy()
    out.flat[flat_idx] += delta
    return out


def _replace_param(params: ExpertParams, leaf: str, arr: np.ndarray) -> ExpertParams:
    kwargs = {name: getattr(params, name) for name in
              ("wb", "bb", "wc", "bc", "wx", "bx")}
    kwargs[leaf] = arr
    return ExpertParams(**kwargs)


def finite_diff_check(
    params: ExpertParams,
    router: RouterParams,
    transition: TransitionSpec,
    batch: SequenceBatch,
    k: int | None = None,
    h0: np.ndarray | None = None,
    step: float = 1e-5,
    coords: int = 50,
    seed: int = 0,
    loss_fn=None,
) -> dict[str, GroupCheck]:
    """Central-difference check of every gradient group.

    Samples up to ``coords`` coordinates per group (all of them when the
    group is smaller). Errors are infinity-norm relative: |fd - analytic|
    over the group's largest analytic gradient magnitude (see _rel_err).
    Probes that flip a top-k active set are rejected, counted, and
    resampled: the selection is a fixed discrete structure and the loss is
    not differentiable across a flip. ``loss_fn`` maps Y -> (value, dL/dY)
    and defaults to the quadratic loss.
    """
    loss_fn = loss_fn or quadratic_loss
    cache = layer_forward(params, router, transition, batch, k=k, h0=h0)
    _, bundle = loss_and_grads(cache, loss_fn)
    rng = np.random.default_rng(seed)

    def sample(total: int) -> np.ndarray:
        if total <= coords:
            return rng.permutation(total)
        return rng.permutation(total)[: min(total, 4 * coords)]

    results: dict[str, GroupCheck] = {}

    # expert parameter leaves, sampled jointly as one group
    leaves = ("wb", "bb", "wc", "bc", "wx", "bx")
    sizes = [getattr(params, leaf).size for leaf in leaves]
    offsets = np.cumsum([0] + sizes)
    scale = _group_scale(*(getattr(bundle.d_params, leaf) for leaf in leaves))
    worst, checked = 0.0, 0
    for g_idx in sample(int(offsets[-1])):
        if checked >= coords:
            break
        leaf = leaves[int(np.searchsorted(offsets, g_idx, side="right")) - 1]
        idx = int(g_idx - offsets[leaves.index(leaf)])
        base = getattr(params, leaf)
        lp = _loss_from_params(
            cache, _replace_param(params, leaf, _bump(base, idx, +step)), loss_fn
        )
        lm = _loss_from_params(
            cache, _replace_param(params, leaf, _bump(base, idx, -step)), loss_fn
        )
        fd = (lp - lm) / (2 * step)
        an = float(getattr(bundle.d_params, leaf).flat[idx])
        worst = max(worst, _rel_err(an, fd, scale))
        checked += 1
    results["expert_params"] = GroupCheck(worst, checked, 0)

    # router weights and bias, through routing (flips possible under top-k)
    r_leaves = ("wg", "bias")
    r_sizes = [router.wg.size, router.bias.size]
    r_offsets = np.cumsum([0] + r_sizes)
    scale = _group_scale(bundle.d_router.wg, bundle.d_router.bias)
    worst, checked, rejected = 0.0, 0, 0
    for g_idx in sample(int(r_offsets[-1])):
        if checked >= coords:
            break
        leaf = r_leaves[int(np.searchsorted(r_offsets, g_idx, side="right")) - 1]
        idx = int(g_idx - r_offsets[r_leaves.index(leaf)])
        base = getattr(router, leaf)
        bumped = [_bump(base, idx, s) for s in (+step, -step)]
        routers = [replace(router, **{leaf: b}) for b in bumped]
        losses = [
            _loss_from_logits(cache, router_logits(r, batch), loss_fn)
            for r in routers
        ]
        if any(l is None for l in losses):
            rejected += 1
            continue
        fd = (losses[0] - losses[1]) / (2 * step)
        an = float(getattr(bundle.d_router, {"wg": "wg", "bias": "bias"}[leaf]).flat[idx])
        worst = max(worst, _rel_err(an, fd, scale))
        checked += 1
    results["router"] = GroupCheck(worst, checked, rejected)

    # logits directly
    scale = _group_scale(bundle.d_logits)
    worst, checked, rejected = 0.0, 0, 0
    for idx in sample(cache.logits.size):
        if checked >= coords:
            break
        lp = _loss_from_logits(cache, _bump(cache.logits, int(idx), +step), loss_fn)
        lm = _loss_from_logits(cache, _bump(cache.logits, int(idx), -step), loss_fn)
        if lp is None or lm is None:
            rejected += 1
            continue
        fd = (lp - lm) / (2 * step)
        an = float(bundle.d_logits.flat[int(idx)])
        worst = max(worst, _rel_err(an, fd, scale))
        checked += 1
    results["logits"] = GroupCheck(worst, checked, rejected)

    # pi with the mask held fixed
    scale = _group_scale(bundle.d_pi)
    worst, checked = 0.0, 0
    for idx in sample(cache.pi_full.size):
        if checked >= coords:
            break
        fd = (
            _loss_from_pi(cache, _bump(cache.pi_full, int(idx), +step), loss_fn)
            - _loss_from_pi(cache, _bump(cache.pi_full, int(idx), -step), loss_fn)
        ) / (2 * step)
        an = float(bundle.d_pi.flat[int(idx)])
        worst = max(worst, _rel_err(an, fd, scale))
        checked += 1
    results["pi"] = GroupCheck(worst, checked, 0)

    # transition values
    scale = _group_scale(bundle.d_transition)
    worst, checked = 0.0, 0
    for idx in sample(transition.values.size):
        if checked >= coords:
            break
        fd_losses = []
        for s in (+step, -step):
            tr = TransitionSpec(
                kind=transition.kind, values=_bump(transition.values, int(idx), s)
            )
            fd_losses.append(
                _scan_loss(cache.mixed.u_tilde, cache.mixed.c_tilde, tr,
                           cache.h0, loss_fn)
            )
        fd = (fd_losses[0] - fd_losses[1]) / (2 * step)
        an = float(bundle.d_transition.flat[int(idx)])
        worst = max(worst, _rel_err(an, fd, scale))
        checked += 1
    results["transition"] = GroupCheck(worst, checked, 0)

    # initial state
    scale = _group_scale(bundle.d_h0)
    worst, checked = 0.0, 0
    for idx in sample(cache.h0.size):
        if checked >= coords:
            break
        fd = (
            _scan_loss(cache.mixed.u_tilde, cache.mixed.c_tilde,
                       cache.transition, _bump(cache.h0, int(idx), +step), loss_fn)
            - _scan_loss(cache.mixed.u_tilde, cache.mixed.c_tilde,
                         cache.transition, _bump(cache.h0, int(idx), -step), loss_fn)
        ) / (2 * step)
        an = float(bundle.d_h0.flat[int(idx)])
        worst = max(worst, _rel_err(an, fd, scale))
        checked += 1
    results["h0"] = GroupCheck(worst, checked, 0)

    return results


# ---------------------------------------------------------------------------
# Adjoint consistency (dot test)
# ---------------------------------------------------------------------------


def adjoint_dot_test(
    params: ExpertParams,
    router: RouterParams,
    transition: TransitionSpec,
    batch: SequenceBatch,
    k: int | None = None,
    step: float = 1e-2,
    seed: int = 0,
) -> dict[str, float]:
    """<J v, w> vs <v, J^T w> per input group of the scan+mixing Jacobian.

    Output side: random cotangent w on Y; J^T w comes from backward_ssm +
    backward_mixing. Input side: a random tangent restricted to one group at
    a time (U~, C~, h0 at scan level; B, C, xinj, pi at mixing level), with
    <J v, w> from a central difference of <Y, w>. Each restricted map is
    affine or quadratic in the step, so the difference is exact up to
    rounding and the comparison is meaningful at 1e-10 relative.
    """
    cache = layer_forward(params, router, transition, batch, k=k)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(cache.y.shape)
    sg = backward_ssm(cache.traj, cache.transition, cache.mixed.c_tilde, w)
    mg = backward_mixing(cache.streams, cache.plan, sg.d_u_tilde, sg.d_c_tilde)

    def y_dot(u, c, h0) -> float:
        y, _ = ssm_scan_sequential(u, c, h0, cache.transition, record=False)
        return float(np.sum(y * w))

    def central(plus: float, minus: float) -> float:
        return (plus - minus) / (2 * step)

    results: dict[str, float] = {}
    u0, c0, h00 = cache.mixed.u_tilde, cache.mixed.c_tilde, cache.h0

    # scan-level groups
    v = rng.standard_normal(u0.shape)
    fwd = central(y_dot(u0 + step * v, c0, h00), y_dot(u0 - step * v, c0, h00))
    results["u_tilde"] = _scalar_rel(fwd, float(np.sum(v * sg.d_u_tilde)))
    v = rng.standard_normal(c0.shape)
    fwd = central(y_dot(u0, c0 + step * v, h00), y_dot(u0, c0 - step * v, h00))
    results["c_tilde"] = _scalar_rel(fwd, float(np.sum(v * sg.d_c_tilde)))
    v = rng.standard_normal(h00.shape)
    fwd = central(y_dot(u0, c0, h00 + step * v), y_dot(u0, c0, h00 - step * v))
    results["h0"] = _scalar_rel(fwd, float(np.sum(v * sg.d_h0)))

    # mixing-level groups: perturb all experts' leaf at once
    def streams_dot(make) -> float:
        streams = [make(e, s) for e, s in enumerate(cache.streams)]
        u, c = _mix_raw(streams, cache.plan.pi, cache.plan.active)
        return y_dot(u, c, h00)

    for leaf, grad_of in (
        ("b", lambda e: mg.streams[e].d_b),
        ("c", lambda e: mg.streams[e].d_c),
        ("xinj", lambda e: mg.streams[e].d_xinj),
    ):
        vs = [rng.standard_normal(getattr(s, leaf).shape) for s in cache.streams]

        def perturbed(sign: float):
            def make(e, s):
                fields = {"b": s.b, "c": s.c, "xinj": s.xinj}
                fields[leaf] = fields[leaf] + sign * step * vs[e]
                return StreamSet(**fields)

            return streams_dot(make)

        fwd = central(perturbed(+1.0), perturbed(-1.0))
        bwd = float(sum(np.sum(vs[e] * grad_of(e)) for e in range(len(vs))))
        results[leaf] = _scalar_rel(fwd, bwd)

    # pi (quadratic in the step; still exact under central differences)
    v = rng.standard_normal(cache.plan.pi.shape)

    def pi_dot(sign: float) -> float:
        u, c = _mix_raw(
            cache.streams, cache.plan.pi + sign * step * v, cache.plan.active
        )
        return y_dot(u, c, h00)

    fwd = central(pi_dot(+1.0), pi_dot(-1.0))
    masked_v = np.where(cache.plan.active, v, 0.0)
    results["pi"] = _scalar_rel(fwd, float(np.sum(masked_v * mg.d_pi)))
    return results
