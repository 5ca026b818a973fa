"""The full verification suite behind ``moessm verify``.

Every check produces a CheckResult: a named scalar compared against a pinned
threshold. Nothing here is timed and nothing depends on wall clock or
machine state, so two runs with the same seed produce byte-identical output.

Instance dimensions for the sweeps: T=64, N=8, P=4, E=4 (stability rows use
T=10000). Stream scales are kept moderate so the exact-identity checks sit at
genuine rounding level rather than being inflated by large magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instances import RngInstanceSpec, generate_instance, generate_layer
from .gradients import adjoint_dot_test, finite_diff_check
from .moe import mix_streams
from .router import softmax_weights, topk_mask
from .ssd import ChunkPlan, semiseparable_apply, semiseparable_materialize, ssd_chunked_core
from .ssm import ssm_scan_sequential
from .theory import (
    check_delta_recursion,
    check_equality_regime,
    check_mismatch_bound,
    check_stability,
    equality_instance,
    expressivity_demo,
    stability_tightness_witness,
    structure_deviation,
)
from .types import RoutingPlan

CHECK_DIMS = dict(seq_len=64, state_dim=8, channels=4, num_experts=4)
STABILITY_SEQ_LEN = 10_000


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    comparison: str  # "<=" or ">="

    def __post_init__(self):
        if self.comparison not in ("<=", ">="):
            raise ValueError(f"bad comparison {self.comparison!r}")

    @property
    def passed(self) -> bool:
        if self.comparison == "<=":
            return self.value <= self.threshold
        return self.value >= self.threshold

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name:<26s} value={self.value:.6e} "
            f"(need {self.comparison} {self.threshold:g})"
        )


def derived_seed(root: int, *tag: int) -> int:
    """Independent 64-bit seed for one sub-experiment of the suite."""
    ss = np.random.SeedSequence(root, spawn_key=tuple(tag))
    return int(ss.generate_state(1, np.uint64)[0])


def _spec(seed: int, **overrides) -> RngInstanceSpec:
    kw = dict(CHECK_DIMS)
    kw.update(overrides)
    return RngInstanceSpec(seed=seed, **kw)


def structure_checks(seed: int, instances: int) -> list:
    worst_dense = 0.0
    worst_top1 = 0.0
    for i in range(instances):
        inst = generate_instance(
            _spec(derived_seed(seed, 1, i), rho_target=0.7, scale_c=0.5)
        )
        worst_dense = max(worst_dense, structure_deviation(inst))
        plan = topk_mask(inst.pi, 1)
        worst_top1 = max(worst_top1, structure_deviation(inst, plan))
    # adversarial weights: arbitrary nonnegative values, far from stochastic
    inst = generate_instance(
        _spec(derived_seed(seed, 1, instances),
              rho_target=0.7, scale_b=0.1, scale_c=0.1, scale_x=0.1)
    )
    rng = np.random.default_rng(derived_seed(seed, 2))
    pi = 5.0 * rng.integers(0, 2, size=inst.pi.shape).astype(np.float64)
    plan = RoutingPlan(pi=pi, active=np.ones(pi.shape, dtype=bool), k=pi.shape[1])
    inst = inst._replace(pi=pi)
    worst_adv = structure_deviation(inst, plan)
    return [
        CheckResult("structure_dense", worst_dense, 1e-14, "<="),
        CheckResult("structure_top1", worst_top1, 1e-14, "<="),
        CheckResult("structure_adversarial", worst_adv, 1e-14, "<="),
    ]


def equality_checks(seed: int, instances: int) -> list:
    worst_y, worst_h = 0.0, 0.0
    for i in range(instances):
        inst = equality_instance(_spec(derived_seed(seed, 3, i), rho_target=0.9))
        report = check_equality_regime(inst)
        worst_y = max(worst_y, report.max_output_dev)
        worst_h = max(worst_h, report.max_state_dev)
    return [
        CheckResult("equality_output", worst_y, 1e-10, "<="),
        CheckResult("equality_state", worst_h, 1e-10, "<="),
    ]


def mismatch_checks(seed: int, instances: int) -> list:
    results = []
    worst_residual = 0.0
    for r_idx, rho in enumerate((0.5, 0.9, 0.99)):
        worst_slack = np.inf
        for i in range(instances):
            inst = generate_instance(
                _spec(derived_seed(seed, 4, r_idx, i), rho_target=rho)
            )
            plan = topk_mask(inst.pi, 1)
            report = check_mismatch_bound(inst, plan)
            worst_slack = min(worst_slack, report.worst_slack)
            if rho == 0.9:
                worst_residual = max(worst_residual, check_delta_recursion(inst, plan))
        tag = f"{rho}".replace(".", "")
        results.append(
            CheckResult(f"mismatch_slack_rho{tag}", float(worst_slack), -1e-9, ">=")
        )
    results.append(CheckResult("delta_recursion", worst_residual, 1e-10, "<="))
    return results


def stability_checks(seed: int) -> list:
    results = []
    for r_idx, rho in enumerate((0.9, 0.99)):
        spec = _spec(
            derived_seed(seed, 5, r_idx),
            seq_len=STABILITY_SEQ_LEN, rho_target=rho,
        )
        inst = generate_instance(spec)
        mixed = mix_streams(inst.streams, RoutingPlan.dense(inst.pi))
        report = check_stability(
            inst.transition, mixed.u_tilde, mixed.c_tilde, rho=rho
        )
        slack = min(report.state.worst_slack, report.output.worst_slack)
        tag = f"{rho}".replace(".", "")
        results.append(CheckResult(f"stability_slack_rho{tag}", slack, -1e-9, ">="))
        witness = stability_tightness_witness(rho=rho, seq_len=STABILITY_SEQ_LEN)
        results.append(
            CheckResult(f"tightness_rho{tag}", witness.max_abs_slack, 1e-9, "<=")
        )
    return results


def _scalar_instance(seed: int, seq_len: int):
    """Plain (single stream set) scalar-decay scan inputs for SSD checks."""
    spec = RngInstanceSpec(
        seed=seed, seq_len=seq_len, state_dim=8, channels=4,
        num_experts=1, transition="scalar", rho_target=0.9,
    )
    inst = generate_instance(spec)
    s = inst.streams[0]
    u = s.b * s.xinj[:, None, :]
    return inst.transition, s, u


def ssd_checks(seed: int, instances: int = 20) -> list:
    seq_len = 256
    results = []
    worst = {q: 0.0 for q in (1, 8, 32, 256)}
    for i in range(instances):
        transition, s, u = _scalar_instance(derived_seed(seed, 6, i), seq_len)
        y_seq, _ = ssm_scan_sequential(u, s.c, None, transition, record=False)
        scale = max(float(np.max(np.abs(y_seq))), 1e-30)
        for q in worst:
            plan = ChunkPlan(seq_len=seq_len, chunk=q)
            y_chunk, _ = ssd_chunked_core(transition, u, s.c, plan)
            worst[q] = max(worst[q], float(np.max(np.abs(y_chunk - y_seq))) / scale)
    for q, dev in worst.items():
        results.append(CheckResult(f"ssd_chunked_q{q}", dev, 1e-8, "<="))

    worst_mat = 0.0
    for i in range(instances):
        transition, s, u = _scalar_instance(derived_seed(seed, 7, i), 64)
        y_seq, _ = ssm_scan_sequential(u, s.c, None, transition, record=False)
        m = semiseparable_materialize(transition, s)
        y_mat = semiseparable_apply(m, s.xinj)
        worst_mat = max(worst_mat, float(np.max(np.abs(y_mat - y_seq))))
    results.append(CheckResult("ssd_materialized", worst_mat, 1e-12, "<="))
    return results


def expressivity_checks() -> list:
    report = expressivity_demo()
    return [
        CheckResult("expressivity_sigma", report.max_sigma_dev, 1e-12, "<="),
        CheckResult("expressivity_gap", report.poly_gap, 0.02, ">="),
        CheckResult("expressivity_monotone", float(report.monotone), 1.0, ">="),
    ]


def router_checks(seed: int, rows: int = 1000) -> list:
    rng = np.random.default_rng(derived_seed(seed, 8))
    logits = rng.standard_normal((rows, 8)) * 3.0
    pi = softmax_weights(logits)
    mass_excess = float(np.max(np.abs(pi.sum(axis=1) - 1.0)))
    shifted = softmax_weights(logits + rng.standard_normal((rows, 1)) * 50.0)
    shift_dev = float(np.max(np.abs(shifted - pi)))
    k = 2
    plan = topk_mask(pi, k)
    count_dev = float(np.max(np.abs(plan.active.sum(axis=1) - k)))
    retained_change = float(np.max(np.abs(plan.pi - pi)[plan.active]))
    mass_after = float(np.max(plan.pi.sum(axis=1)))
    return [
        CheckResult("router_mass", mass_excess, 1e-12, "<="),
        CheckResult("router_shift_invariance", shift_dev, 1e-12, "<="),
        CheckResult("router_topk_count", count_dev, 0.0, "<="),
        CheckResult("router_no_renorm", retained_change, 0.0, "<="),
        CheckResult("router_mass_after_mask", mass_after, 1.0 + 1e-12, "<="),
    ]


def gradient_checks(seed: int) -> list:
    spec = RngInstanceSpec(
        seed=derived_seed(seed, 9), seq_len=32, state_dim=8, channels=13,
        num_experts=4, rho_target=0.7, scale_b=0.5, scale_c=0.5, scale_x=0.5,
    )
    inst = generate_layer(spec)
    results = []
    for label, k in (("dense", None), ("top1", 1)):
        fd = finite_diff_check(
            inst.params, inst.router, inst.transition, inst.batch,
            k=k, seed=derived_seed(seed, 10),
        )
        worst = max(group.max_rel_err for group in fd.values())
        results.append(CheckResult(f"grad_fd_{label}", worst, 1e-4, "<="))
    dots = adjoint_dot_test(
        inst.params, inst.router, inst.transition, inst.batch,
        k=1, seed=derived_seed(seed, 11),
    )
    results.append(CheckResult("grad_dot_test", max(dots.values()), 1e-10, "<="))
    return results


def run_verification(seed: int = 0, instances: int = 100) -> list:
    """All checks, in a fixed order; deterministic given (seed, instances)."""
    results = []
    results += structure_checks(seed, instances)
    results += equality_checks(seed, instances)
    results += mismatch_checks(seed, instances)
    results += stability_checks(seed)
    results += ssd_checks(seed)
    results += expressivity_checks()
    results += router_checks(seed)
    results += gradient_checks(seed)
    return results
