import numpy as np
import pytest

from moessm.errors import InvalidInputError, UnsupportedTransitionError
from moessm.types import (
    RoutingPlan,
    SequenceBatch,
    StateTrajectory,
    StreamSet,
    TransitionSpec,
    as_float_array,
    frobenius,
    frobenius_per_step,
    row_norms,
)

SEED = 1234


def test_as_float_array_casts_and_validates():
    out = as_float_array("x", [[1, 2], [3, 4]], 2)
    assert out.dtype == np.float64
    assert out.flags["C_CONTIGUOUS"]
    with pytest.raises(InvalidInputError):
        as_float_array("x", [1.0, 2.0], 2)
    with pytest.raises(InvalidInputError):
        as_float_array("x", [1.0, np.nan], 1)
    with pytest.raises(InvalidInputError):
        as_float_array("x", [1.0, np.inf], 1)


def test_transition_kinds_and_shapes():
    dense = TransitionSpec(kind="dense", values=np.eye(3))
    assert dense.state_dim == 3
    diag = TransitionSpec(kind="diagonal", values=np.array([0.5, -0.2]))
    assert diag.state_dim == 2
    scalar = TransitionSpec(kind="scalar", values=np.array([0.9, 0.8, 0.7]))
    assert scalar.state_dim is None

    with pytest.raises(InvalidInputError):
        TransitionSpec(kind="funky", values=np.eye(2))
    with pytest.raises(InvalidInputError):
        TransitionSpec(kind="dense", values=np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        TransitionSpec(kind="diagonal", values=np.ones((2, 2)))


def test_transition_apply_matches_direct_algebra():
    rng = np.random.default_rng(SEED)
    h = rng.standard_normal((4, 3))

    a = rng.standard_normal((4, 4))
    dense = TransitionSpec(kind="dense", values=a)
    np.testing.assert_allclose(dense.apply(h), a @ h, rtol=0, atol=0)
    np.testing.assert_allclose(dense.apply_transpose(h), a.T @ h, rtol=0, atol=0)

    d = rng.standard_normal(4)
    diag = TransitionSpec(kind="diagonal", values=d)
    np.testing.assert_allclose(diag.apply(h), d[:, None] * h, rtol=0, atol=0)
    np.testing.assert_allclose(diag.apply_transpose(h), d[:, None] * h, rtol=0, atol=0)

    s = np.array([0.5, 2.0, -1.0])
    scalar = TransitionSpec(kind="scalar", values=s)
    np.testing.assert_allclose(scalar.apply(h, step=1), 2.0 * h, rtol=0, atol=0)
    np.testing.assert_allclose(scalar.apply_transpose(h, step=2), -h, rtol=0, atol=0)


def test_spectral_bound_per_kind():
    diag = TransitionSpec(kind="diagonal", values=np.array([0.5, -0.9]))
    assert diag.spectral_bound() == pytest.approx(0.9, abs=0)
    scalar = TransitionSpec(kind="scalar", values=np.array([0.1, -0.7, 0.3]))
    assert scalar.spectral_bound() == pytest.approx(0.7, abs=0)
    dense = TransitionSpec(kind="dense", values=np.diag([0.3, 0.8]))
    assert dense.spectral_bound() == pytest.approx(0.8, rel=1e-10)


def test_scalar_decays_length_check():
    scalar = TransitionSpec(kind="scalar", values=np.array([0.9, 0.8]))
    np.testing.assert_array_equal(scalar.scalar_decays(2), [0.9, 0.8])
    with pytest.raises(InvalidInputError):
        scalar.scalar_decays(3)
    dense = TransitionSpec(kind="dense", values=np.eye(2))
    with pytest.raises(UnsupportedTransitionError):
        dense.scalar_decays(2)


def test_sequence_batch_validation():
    b = SequenceBatch(x=np.zeros((4, 2)))
    assert b.seq_len == 4 and b.channels == 2
    with pytest.raises(InvalidInputError):
        SequenceBatch(x=np.zeros((0, 2)))
    with pytest.raises(InvalidInputError):
        SequenceBatch(x=np.zeros(4))
    with pytest.raises(InvalidInputError):
        SequenceBatch(x=np.array([[1.0, np.nan]]))


def test_stream_set_shape_consistency():
    s = StreamSet(b=np.ones((3, 2, 4)), c=np.ones((3, 2, 4)), xinj=np.ones((3, 4)))
    assert (s.seq_len, s.state_dim, s.channels) == (3, 2, 4)
    with pytest.raises(InvalidInputError):
        StreamSet(b=np.ones((3, 2, 4)), c=np.ones((3, 2, 3)), xinj=np.ones((3, 4)))
    with pytest.raises(InvalidInputError):
        StreamSet(b=np.ones((3, 2, 4)), c=np.ones((3, 2, 4)), xinj=np.ones((4, 4)))


def test_routing_plan_invariants():
    pi = np.array([[0.5, 0.0], [0.0, 0.25]])
    active = np.array([[True, False], [False, True]])
    plan = RoutingPlan(pi=pi, active=active, k=1)
    assert plan.seq_len == 2 and plan.num_experts == 2

    with pytest.raises(InvalidInputError):
        RoutingPlan(pi=-pi, active=active, k=1)
    # weight on an inactive expert
    with pytest.raises(InvalidInputError):
        RoutingPlan(pi=np.array([[0.5, 0.1], [0.0, 0.25]]), active=active, k=1)
    # more retained experts than k claims
    with pytest.raises(InvalidInputError):
        RoutingPlan(pi=np.full((2, 2), 0.5), active=np.full((2, 2), True), k=1)
    with pytest.raises(InvalidInputError):
        RoutingPlan(pi=pi, active=active, k=3)
    with pytest.raises(InvalidInputError):
        RoutingPlan(pi=pi, active=active.astype(float), k=1)


def test_routing_plan_mass_is_not_a_container_invariant():
    # the mixing identity assumes only nonnegativity; weights summing past 1
    # must be representable (the router itself never produces them)
    pi = np.array([[5.0, 5.0]])
    plan = RoutingPlan(pi=pi, active=np.array([[True, True]]), k=2)
    assert plan.pi.sum() == 10.0


def test_routing_plan_dense():
    pi = np.array([[0.25, 0.75], [0.9, 0.1]])
    plan = RoutingPlan.dense(pi)
    assert plan.k == 2
    assert plan.active.all()
    np.testing.assert_array_equal(plan.pi, pi)


def test_state_trajectory_accessors():
    h = np.arange(2 * 3 * 4, dtype=np.float64).reshape(2, 3, 4)
    traj = StateTrajectory(h=h)
    assert traj.seq_len == 1
    np.testing.assert_array_equal(traj.initial, h[0])
    np.testing.assert_array_equal(traj.final, h[-1])
    # after_step is 1-based: after_step(0) is the initial state
    np.testing.assert_array_equal(traj.after_step(0), h[0])
    np.testing.assert_array_equal(traj.after_step(1), h[1])
    with pytest.raises(InvalidInputError):
        StateTrajectory(h=np.ones((3, 2)))


def test_norm_helpers_match_numpy():
    rng = np.random.default_rng(SEED)
    x = rng.standard_normal((5, 3, 2))
    assert frobenius(x[0]) == pytest.approx(np.linalg.norm(x[0]), rel=1e-15)
    np.testing.assert_allclose(
        frobenius_per_step(x),
        [np.linalg.norm(x[t]) for t in range(5)],
        rtol=1e-15,
    )
    y = rng.standard_normal((5, 3))
    np.testing.assert_allclose(
        row_norms(y), np.linalg.norm(y, axis=1), rtol=1e-15
    )
