import numpy as np
import pytest

from moessm.errors import InvalidInputError
from moessm.instances import RngInstanceSpec, generate_instance
from moessm.router import topk_mask
from moessm.ssm import ssm_scan_sequential
from moessm.theory import (
    BoundReport,
    check_delta_recursion,
    check_equality_regime,
    check_mismatch_bound,
    check_stability,
    check_structure,
    equality_instance,
    expressivity_demo,
    stability_tightness_witness,
    stable_sigmoid,
    structure_deviation,
)
from moessm.types import RoutingPlan, StreamSet, TransitionSpec

SEED = 1789
DIMS = dict(seq_len=24, state_dim=5, channels=3, num_experts=4)
POLY_GAP_ORACLE = 0.10739281186735417


def _instance(seed=SEED, **overrides):
    return generate_instance(RngInstanceSpec(seed=seed, **{**DIMS, **overrides}))


# --- claim 1: the mixture is one selective SSM ------------------------------


def test_structure_dense_routing():
    for seed in range(3):
        assert check_structure(_instance(seed=SEED + seed))


def test_structure_top1_routing():
    inst = _instance()
    plan = topk_mask(inst.pi, k=1)
    assert structure_deviation(inst, plan) <= 1e-14


def test_structure_survives_adversarial_weights():
    # nonnegativity is the only assumption: weights in {0, 5} break row mass
    inst = _instance()
    rng = np.random.default_rng(SEED)
    pi = 5.0 * rng.integers(0, 2, inst.pi.shape).astype(np.float64)
    plan = RoutingPlan(pi=pi, active=pi > 0, k=DIMS["num_experts"])
    assert structure_deviation(inst, plan) <= 1e-14


# --- claim 3: BIBO stability -------------------------------------------------


def test_stability_zero_drive_decay():
    # pure decay from h0: envelope is rho^t ||h0|| and is attained
    rho = 0.8
    t_len, n, p = 50, 3, 2
    transition = TransitionSpec(kind="diagonal", values=np.full(n, rho))
    u = np.zeros((t_len, n, p))
    cs = np.ones((t_len, n, p))
    h0 = np.full((n, p), 1.0)
    report = check_stability(transition, u, cs, h0=h0, rho=rho, u_bound=0.0)
    assert report.holds
    h0_norm = np.sqrt(n * p)
    np.testing.assert_allclose(
        report.state.lhs, rho ** np.arange(1, t_len + 1) * h0_norm, rtol=1e-12
    )


def test_stability_witness_is_tight():
    report = stability_tightness_witness(rho=0.9, seq_len=512)
    assert report.holds
    assert report.max_abs_slack <= 1e-9
    t = np.arange(1, 513)
    np.testing.assert_allclose(
        report.lhs, (1.0 - 0.9**t) / 0.1, rtol=1e-12
    )


def test_stability_random_instance_long_horizon():
    rng = np.random.default_rng(SEED)
    t_len, n, p = 1000, 4, 3
    inst = generate_instance(
        RngInstanceSpec(seed=SEED, seq_len=t_len, state_dim=n, channels=p,
                        num_experts=1, rho_target=0.9)
    )
    s = inst.streams[0]
    u = s.b * s.xinj[:, None, :]
    report = check_stability(
        inst.transition, u, s.c, h0=rng.standard_normal((n, p)), rho=0.9
    )
    assert report.holds
    assert report.state.worst_slack >= -1e-9
    assert report.output.worst_slack >= -1e-9


def test_stability_precondition_errors():
    transition = TransitionSpec(kind="diagonal", values=np.array([0.9]))
    u = np.ones((4, 1, 1))
    cs = np.ones((4, 1, 1))
    with pytest.raises(InvalidInputError):
        check_stability(transition, u, cs, rho=0.5)  # claimed rho below measured
    with pytest.raises(InvalidInputError):
        check_stability(transition, u, cs, rho=1.0)  # not a contraction
    with pytest.raises(InvalidInputError):
        check_stability(transition, u, cs, u_bound=0.5)  # streams exceed claim
    with pytest.raises(InvalidInputError):
        check_stability(transition, u, cs, c_bound=0.5)
    expansive = TransitionSpec(kind="diagonal", values=np.array([1.5]))
    with pytest.raises(InvalidInputError):
        check_stability(expansive, u, cs)


# --- claim 4: equality regime, mismatch bound, delta recursion ---------------


def test_equality_regime_devs_are_rounding_noise():
    report = check_equality_regime(equality_instance(RngInstanceSpec(seed=SEED, **DIMS)))
    assert report.max_output_dev <= 1e-10
    assert report.max_state_dev <= 1e-10


def test_equality_regime_single_expert_is_exact():
    report = check_equality_regime(
        equality_instance(RngInstanceSpec(seed=SEED, **{**DIMS, "num_experts": 1}))
    )
    assert report.max_output_dev <= 1e-12


def test_equality_regime_identical_experts():
    inst = equality_instance(RngInstanceSpec(seed=SEED, **DIMS))
    s0 = inst.streams[0]
    clones = [StreamSet(b=s0.b, c=s0.c, xinj=s0.xinj) for _ in inst.streams]
    from moessm.instances import StreamInstance

    twin = StreamInstance(
        batch=inst.batch, transition=inst.transition, streams=clones, pi=inst.pi
    )
    report = check_equality_regime(twin)
    assert report.max_output_dev <= 1e-12
    assert report.max_state_dev <= 1e-12


def test_equality_regime_precondition_errors():
    inst = _instance()  # time-varying pi, unshared readouts
    with pytest.raises(InvalidInputError):
        check_equality_regime(inst)
    eq = equality_instance(RngInstanceSpec(seed=SEED, **DIMS))
    from moessm.instances import StreamInstance

    broken = StreamInstance(
        batch=eq.batch,
        transition=eq.transition,
        streams=[eq.streams[0]] + [
            StreamSet(b=s.b, c=s.c + 1.0, xinj=s.xinj) for s in eq.streams[1:]
        ],
        pi=eq.pi,
    )
    with pytest.raises(InvalidInputError):
        check_equality_regime(broken)


def test_mixed_output_is_homogeneous_in_injected_inputs():
    # scaling xinj by a power of two scales Y bitwise: everything downstream
    # is linear in U~
    from moessm.moe import mixed_forward_streams

    inst = _instance()
    plan = RoutingPlan.dense(inst.pi)
    y = mixed_forward_streams(inst.streams, inst.transition, plan).y
    scaled = [
        StreamSet(b=s.b, c=s.c, xinj=8.0 * s.xinj) for s in inst.streams
    ]
    y8 = mixed_forward_streams(scaled, inst.transition, plan).y
    np.testing.assert_array_equal(y8, 8.0 * y)


def test_mismatch_bound_holds_dense_and_top1():
    inst = _instance()
    assert check_mismatch_bound(inst).holds
    assert check_mismatch_bound(inst, topk_mask(inst.pi, k=1)).holds


def test_mismatch_bound_equality_instance_has_zero_lhs():
    inst = equality_instance(RngInstanceSpec(seed=SEED, **DIMS))
    report = check_mismatch_bound(inst)
    assert report.holds
    assert float(np.max(report.lhs)) <= 1e-10
    assert float(np.max(report.rhs)) > 1e-3  # states genuinely diverge


def test_mismatch_bound_single_step_identity():
    # at T=1 the gap is exactly sum_e pi_e <C^e, h^e - h> per channel
    inst = _instance(**{**DIMS, "seq_len": 1})
    plan = RoutingPlan.dense(inst.pi)
    report = check_mismatch_bound(inst, plan)
    h_mix = np.zeros((DIMS["state_dim"], DIMS["channels"]))
    h_exp = []
    for s in inst.streams:
        h_exp.append(s.b[0] * s.xinj[0][None, :])
    for e, h_e in enumerate(h_exp):
        h_mix += inst.pi[0, e] * h_e
    gap = np.zeros(DIMS["channels"])
    for e, s in enumerate(inst.streams):
        gap += inst.pi[0, e] * (s.c[0] * (h_exp[e] - h_mix)).sum(axis=0)
    assert report.lhs[0] == pytest.approx(float(np.linalg.norm(gap)), abs=1e-14)


def test_delta_recursion_residual():
    inst = _instance()
    assert check_delta_recursion(inst) <= 1e-10
    assert check_delta_recursion(inst, topk_mask(inst.pi, k=2)) <= 1e-10


def test_delta_recursion_identical_experts_is_exactly_zero():
    from moessm.instances import StreamInstance

    inst = _instance()
    s0 = inst.streams[0]
    clones = [StreamSet(b=s0.b, c=s0.c, xinj=s0.xinj) for _ in inst.streams]
    # row-stochastic pi makes U~ = B x exactly, so delta stays identically 0
    twin = StreamInstance(
        batch=inst.batch, transition=inst.transition, streams=clones, pi=inst.pi
    )
    assert check_delta_recursion(twin) <= 1e-13


def test_delta_recursion_memoryless_transition_is_exact():
    from moessm.instances import StreamInstance

    inst = _instance()
    memoryless = StreamInstance(
        batch=inst.batch,
        transition=TransitionSpec(kind="dense", values=np.zeros((DIMS["state_dim"],) * 2)),
        streams=inst.streams,
        pi=inst.pi,
    )
    assert check_delta_recursion(memoryless) == 0.0


# --- claim 5: expressivity ----------------------------------------------------


def test_expressivity_is_exactly_sigmoid_on_grid():
    report = expressivity_demo()
    assert report.max_sigma_dev <= 1e-12
    assert report.monotone


def test_expressivity_key_points():
    report = expressivity_demo(np.array([-20.0, -10.0, 0.0, 10.0, 20.0]))
    assert report.outputs[2] == 0.5
    assert abs(report.outputs[0] - 0.0) <= 1e-8  # saturated low
    assert abs(report.outputs[-1] - 1.0) <= 1e-8  # saturated high


def test_expressivity_beats_best_cubic():
    report = expressivity_demo()
    assert report.poly_gap >= 0.02
    assert report.poly_gap == pytest.approx(POLY_GAP_ORACLE, rel=1e-12)


def test_expressivity_rejects_degenerate_grid():
    with pytest.raises(InvalidInputError):
        expressivity_demo(np.array([1.0, 2.0]))


def test_stable_sigmoid_matches_naive_and_survives_extremes():
    x = np.linspace(-30.0, 30.0, 201)
    np.testing.assert_allclose(
        stable_sigmoid(x), 1.0 / (1.0 + np.exp(-x)), rtol=0, atol=1e-15
    )
    with np.errstate(over="raise"):
        extreme = stable_sigmoid(np.array([-800.0, 800.0]))
    np.testing.assert_array_equal(extreme, [0.0, 1.0])
    # symmetry
    np.testing.assert_allclose(
        stable_sigmoid(x) + stable_sigmoid(-x), 1.0, rtol=0, atol=1e-15
    )


# --- report mechanics ---------------------------------------------------------


def test_bound_report_slack_bookkeeping():
    lhs = np.array([1.0, 2.0, 3.0])
    rhs = np.array([1.5, 2.0, 2.5])
    report = BoundReport(lhs=lhs, rhs=rhs, eps=1e-9)
    np.testing.assert_array_equal(report.slack, [0.5, 0.0, -0.5])
    assert report.worst_step == 2
    assert report.worst_slack == -0.5
    assert report.max_abs_slack == 0.5
    assert not report.holds
    within = BoundReport(lhs=np.array([1.0 + 1e-10]), rhs=np.array([1.0]), eps=1e-9)
    assert within.holds  # violation below eps is rounding, not a failure
