"""Executable checks for the structural claims behind the mixed design.

Five claims, each with a check that produces numbers rather than trust:

  1. structure: folding experts into (U~, C~) IS a single selective SSM; a
     literal step-by-step evaluation of the mixture equations matches one
     generic scan to floating-point noise.
  2. (cost: see moessm.costmodel; the recurrence-term ratio is exactly E.)
  3. stability: with spectral_norm(A) <= rho < 1 and per-step Frobenius
     bounds U, C on the streams, ||h_t||_F <= rho^t ||h0||_F +
     (1 - rho^t)/(1 - rho) U, and ||Y_t||_2 <= C times that envelope.
  4. equality/mismatch: with time-invariant weights, shared readout streams,
     and zero initial states, the separated baseline equals the mixed design
     exactly; in general the output gap is bounded by
     C * sum_e pi_te ||h_t^(e) - h_t||_F, and the per-expert state gap obeys
     delta_t^(e) = A delta_{t-1}^(e) + (B^(e) x^(e) - U~)_t.
  5. expressivity: a 2-expert, 1-step, 1-state instance with A = 0 realizes
     the sigmoid exactly, which no cubic polynomial approximates on [-8, 8]
     to better than ~0.107.

All norms follow the package convention: spectral for transitions, Frobenius
for (N, P) slices, Euclidean for output rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .instances import RngInstanceSpec, StreamInstance, generate_instance
from .moe import (
    ExpertParams,
    mixed_forward_streams,
    moe_param_forward,
    separated_forward_streams,
)
from .router import RouterParams, router_logits, softmax_route
from .ssm import ssm_scan_sequential
from .types import (
    RoutingPlan,
    SequenceBatch,
    StreamSet,
    TransitionSpec,
    frobenius_per_step,
    row_norms,
)

DEFAULT_BOUND_EPS = 1e-9
STRUCTURE_TOL = 1e-14


@dataclass(frozen=True)
class BoundReport:
    """Per-step inequality lhs_t <= rhs_t with slack bookkeeping.

    holds allows slack down to -eps so honest floating-point noise on a tight
    bound does not read as a violation.
    """

    lhs: np.ndarray
    rhs: np.ndarray
    eps: float = DEFAULT_BOUND_EPS

    @property
    def slack(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def worst_step(self) -> int:
        return int(np.argmin(self.slack))

    @property
    def worst_slack(self) -> float:
        return float(np.min(self.slack))

    @property
    def max_abs_slack(self) -> float:
        return float(np.max(np.abs(self.slack)))

    @property
    def holds(self) -> bool:
        return bool(np.all(self.slack >= -self.eps))


@dataclass(frozen=True)
class StabilityReport:
    state: BoundReport
    output: BoundReport
    rho: float
    u_bound: float
    c_bound: float

    @property
    def holds(self) -> bool:
        return self.state.holds and self.output.holds


@dataclass(frozen=True)
class EqualityReport:
    """Deviations in the exact-equality regime (should be fp noise)."""

    output_dev: np.ndarray  # (T,)  max-abs output gap per step
    state_dev: np.ndarray   # (T+1,) max-abs gap of weighted mean state

    @property
    def max_output_dev(self) -> float:
        return float(np.max(self.output_dev))

    @property
    def max_state_dev(self) -> float:
        return float(np.max(self.state_dev))


@dataclass(frozen=True)
class ExpressivityReport:
    grid: np.ndarray
    outputs: np.ndarray
    sigma: np.ndarray
    poly_coeffs: np.ndarray

    @property
    def max_sigma_dev(self) -> float:
        return float(np.max(np.abs(self.outputs - self.sigma)))

    @property
    def poly_gap(self) -> float:
        fit = np.polyval(self.poly_coeffs, self.grid)
        return float(np.max(np.abs(fit - self.sigma)))

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.outputs) > 0))


def _dense_plan(instance: StreamInstance) -> RoutingPlan:
    return RoutingPlan.dense(instance.pi)


def stepwise_mixed_reference(
    transition: TransitionSpec,
    streams,
    plan: RoutingPlan,
    h0: np.ndarray | None = None,
) -> np.ndarray:
    """Evaluate the mixture equations literally, one step and expert at a time.

    This is the independent side of the structure check: no premixing, no
    scan kernel, just the two defining equations applied in order.
    """
    t_len, n, p = streams[0].b.shape
    h = np.zeros((n, p)) if h0 is None else np.array(h0, dtype=np.float64)
    y = np.empty((t_len, p))
    for t in range(t_len):
        u = np.zeros((n, p))
        c_sum = np.zeros((n, p))
        for e in np.nonzero(plan.active[t])[0]:
            w = plan.pi[t, e]
            s = streams[e]
            u += w * (s.b[t] * s.xinj[t][None, :])
            c_sum += w * s.c[t]
        h = transition.apply(h, t) + u
        y[t] = (c_sum * h).sum(axis=0)
    return y


def structure_deviation(instance: StreamInstance, plan: RoutingPlan | None = None) -> float:
    """Max abs gap between the literal equations and the single folded scan."""
    plan = _dense_plan(instance) if plan is None else plan
    y_ref = stepwise_mixed_reference(instance.transition, instance.streams, plan)
    y_scan = mixed_forward_streams(
        instance.streams, instance.transition, plan, record=False
    ).y
    return float(np.max(np.abs(y_ref - y_scan)))


def check_structure(
    instance: StreamInstance,
    plan: RoutingPlan | None = None,
    tol: float = STRUCTURE_TOL,
) -> bool:
    """True iff the mixed design is indistinguishable from one generic scan."""
    return structure_deviation(instance, plan) <= tol


def check_stability(
    transition: TransitionSpec,
    u: np.ndarray,
    cs: np.ndarray,
    h0: np.ndarray | None = None,
    rho: float | None = None,
    u_bound: float | None = None,
    c_bound: float | None = None,
    eps: float = DEFAULT_BOUND_EPS,
) -> StabilityReport:
    """Geometric envelope on state and output norms of a contractive scan.

    rho defaults to the measured transition norm; passing a smaller value
    than the measured norm violates the precondition and raises. u_bound and
    c_bound default to the streams' actual per-step Frobenius maxima.
    """
    measured = transition.spectral_bound()
    if rho is None:
        rho = measured
    if measured > rho + 1e-12:
        raise InvalidInputError(
            f"transition norm {measured!r} exceeds claimed rho {rho!r}"
        )
    if not (0.0 <= rho < 1.0):
        raise InvalidInputError(f"bound needs 0 <= rho < 1, got {rho!r}")
    u_max = float(np.max(frobenius_per_step(u)))
    c_max = float(np.max(frobenius_per_step(cs)))
    if u_bound is None:
        u_bound = u_max
    elif u_max > u_bound + 1e-12:
        raise InvalidInputError(f"streams exceed claimed u_bound: {u_max!r} > {u_bound!r}")
    if c_bound is None:
        c_bound = c_max
    elif c_max > c_bound + 1e-12:
        raise InvalidInputError(f"streams exceed claimed c_bound: {c_max!r} > {c_bound!r}")

    y, traj = ssm_scan_sequential(u, cs, h0, transition, record=True)
    h_norms = frobenius_per_step(traj.h)
    t_len = u.shape[0]
    steps = np.arange(1, t_len + 1, dtype=np.float64)
    rho_t = rho**steps
    envelope = rho_t * h_norms[0] + (1.0 - rho_t) / (1.0 - rho) * u_bound
    state = BoundReport(lhs=h_norms[1:], rhs=envelope, eps=eps)
    output = BoundReport(lhs=row_norms(y), rhs=c_bound * envelope, eps=eps)
    return StabilityReport(
        state=state, output=output, rho=rho, u_bound=u_bound, c_bound=c_bound
    )


def stability_tightness_witness(
    rho: float = 0.9, seq_len: int = 512, eps: float = DEFAULT_BOUND_EPS
) -> BoundReport:
    """Scalar instance that attains the state envelope with equality.

    Constant unit injection, zero initial state, A = diag(rho): the state is
    exactly the partial geometric sum, so |slack| stays at rounding level.
    """
    if not (0.0 <= rho < 1.0):
        raise InvalidInputError(f"witness needs 0 <= rho < 1, got {rho!r}")
    u = np.ones((seq_len, 1, 1))
    cs = np.ones((seq_len, 1, 1))
    transition = TransitionSpec(kind="diagonal", values=np.array([rho]))
    report = check_stability(
        transition, u, cs, rho=rho, u_bound=1.0, c_bound=1.0, eps=eps
    )
    return report.state


def equality_instance(spec: RngInstanceSpec) -> StreamInstance:
    """Instance restricted to the exact-equality regime.

    Router weights are frozen to the first step's row (time-invariant) and
    every expert shares expert 0's readout stream.
    """
    inst = generate_instance(spec)
    pi = np.tile(inst.pi[0], (spec.seq_len, 1))
    shared_c = inst.streams[0].c
    streams = [
        StreamSet(b=s.b, c=shared_c, xinj=s.xinj) for s in inst.streams
    ]
    return StreamInstance(
        batch=inst.batch, transition=inst.transition, streams=streams, pi=pi
    )


def check_equality_regime(instance: StreamInstance) -> EqualityReport:
    """Separated vs mixed in the regime where they agree exactly.

    Preconditions (raise if violated): time-invariant weights, shared readout
    streams. Both designs start from zero states. Also verifies the weighted
    mean of per-expert states tracks the mixed state.
    """
    pi = instance.pi
    if not np.all(pi == pi[0]):
        raise InvalidInputError("equality regime needs time-invariant router weights")
    c0 = instance.streams[0].c
    for e, s in enumerate(instance.streams[1:], start=1):
        if not np.array_equal(s.c, c0):
            raise InvalidInputError(
                f"equality regime needs shared readout streams; expert {e} differs"
            )
    plan = _dense_plan(instance)
    mixed = mixed_forward_streams(
        instance.streams, instance.transition, plan, record=True
    )
    sep = separated_forward_streams(
        instance.streams, instance.transition, plan, record=True
    )
    output_dev = np.max(np.abs(sep.y - mixed.y), axis=1)
    h_experts = np.stack([traj.h for traj in sep.states])  # (E, T+1, N, P)
    h_mean = np.einsum("e,etnp->tnp", pi[0], h_experts)
    state_dev = np.max(np.abs(h_mean - mixed.state.h), axis=(1, 2))
    return EqualityReport(output_dev=output_dev, state_dev=state_dev)


def check_mismatch_bound(
    instance: StreamInstance,
    plan: RoutingPlan | None = None,
    eps: float = DEFAULT_BOUND_EPS,
) -> BoundReport:
    """Output gap between designs vs its state-discrepancy envelope.

    lhs_t = ||Y_t^sep - Y_t^mix||_2, rhs_t = C * sum_e pi_te
    ||h_t^(e) - h_t||_F with C = max_{t,e} ||C_t^(e)||_F. Holds for any plan,
    including time-varying top-k.
    """
    plan = _dense_plan(instance) if plan is None else plan
    mixed = mixed_forward_streams(
        instance.streams, instance.transition, plan, record=True
    )
    sep = separated_forward_streams(
        instance.streams, instance.transition, plan, record=True
    )
    c_max = max(
        float(np.max(frobenius_per_step(s.c))) for s in instance.streams
    )
    lhs = row_norms(sep.y - mixed.y)
    rhs = np.zeros(lhs.shape[0])
    for e, traj in enumerate(sep.states):
        gap = frobenius_per_step(traj.h[1:] - mixed.state.h[1:])
        rhs += plan.pi[:, e] * gap
    rhs *= c_max
    return BoundReport(lhs=lhs, rhs=rhs, eps=eps)


def _apply_transition_seq(transition: TransitionSpec, hs: np.ndarray) -> np.ndarray:
    """A_t hs[t] for a (T, N, P) stack, aligned so hs[t] feeds step t."""
    if transition.kind == "dense":
        return np.einsum("ij,tjp->tip", transition.values, hs)
    if transition.kind == "diagonal":
        return transition.values[None, :, None] * hs
    return transition.values[: hs.shape[0], None, None] * hs


def check_delta_recursion(
    instance: StreamInstance, plan: RoutingPlan | None = None
) -> float:
    """Max residual of delta_t = A delta_{t-1} + (B^(e) x^(e) - U~)_t."""
    plan = _dense_plan(instance) if plan is None else plan
    mixed = mixed_forward_streams(
        instance.streams, instance.transition, plan, record=True
    )
    sep = separated_forward_streams(
        instance.streams, instance.transition, plan, record=True
    )
    worst = 0.0
    for e, traj in enumerate(sep.states):
        s = instance.streams[e]
        delta = traj.h - mixed.state.h  # (T+1, N, P)
        drive = s.b * s.xinj[:, None, :] - mixed.mixed.u_tilde
        predicted = _apply_transition_seq(instance.transition, delta[:-1]) + drive
        worst = max(worst, float(np.max(np.abs(delta[1:] - predicted))))
    return worst


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def expressivity_layer():
    """The T=1, N=P=1, E=2, A=0 construction whose output is sigmoid(x).

    Expert 0 injects nothing; expert 1 injects the constant 1. Both read out
    with the constant stream 1, so C~ = pi_0 + pi_1 = 1 and
    Y = pi_1 = softmax((0, x))_1 = sigmoid(x).
    """
    zeros_w = np.zeros((2, 1, 1, 1))
    params = ExpertParams(
        wb=zeros_w,
        bb=np.array([[[0.0]], [[1.0]]]),
        wc=zeros_w.copy(),
        bc=np.ones((2, 1, 1)),
        wx=np.zeros((2, 1, 1)),
        bx=np.array([[0.0], [1.0]]),
    )
    router = RouterParams(wg=np.array([[0.0], [1.0]]), bias=np.zeros(2))
    transition = TransitionSpec(kind="dense", values=np.zeros((1, 1)))
    return params, router, transition


def expressivity_demo(grid: np.ndarray | None = None) -> ExpressivityReport:
    """Run the construction over a grid and fit the best cubic for contrast.

    The cubic is the degree-3 least-squares fit to sigmoid on the grid; its
    sup gap (~0.107 on the default 161-point grid over [-8, 8]) is what the
    one-step mixture clears exactly.
    """
    if grid is None:
        grid = np.linspace(-8.0, 8.0, 161)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 4:
        raise InvalidInputError("grid must be a 1-d array with at least 4 points")
    params, router, transition = expressivity_layer()
    outputs = np.empty_like(grid)
    for i, x in enumerate(grid):
        batch = SequenceBatch(x=np.array([[x]]))
        plan = softmax_route(router_logits(router, batch))
        outputs[i] = moe_param_forward(params, transition, plan, batch).y[0, 0]
    sigma = stable_sigmoid(grid)
    coeffs = np.polyfit(grid, sigma, 3)
    return ExpressivityReport(
        grid=grid, outputs=outputs, sigma=sigma, poly_coeffs=coeffs
    )
