"""Barrier schedule, potentials, gradients, and the full selection loop."""
import numpy as np
import pytest

from conftest import make_engine_instance, random_psd
from lapsparse.core import (
    BarrierViolationError,
    BudgetTooSmallError,
    PreconditionError,
    Subspace,
    eigvalsh,
    restrict,
    symmetrize,
)
from lapsparse.engine import (
    EngineProblem,
    compute_Z,
    fixed_subspace,
    init_schedule,
    integer_trace_bound,
    lower_gradient,
    lower_potential,
    run_engine,
    select_update,
    upper_gradient,
    upper_potential,
)


# ---------------------------------------------------------------------------
# schedule


def test_schedule_values_for_budget_nine_trace_four():
    s = init_schedule(1, 9, 4)
    assert s.delta_l == pytest.approx(1.0 / 18.0, rel=1e-15)
    assert s.delta_u == pytest.approx(2.0 / 9.0, rel=1e-15)
    assert s.eps_l == pytest.approx(4.5, rel=1e-15)
    assert s.eps_u == pytest.approx(4.5, rel=1e-15)
    assert s.l0 == pytest.approx(-2.0 / 9.0, rel=1e-15)
    assert s.u0 == pytest.approx(17.0 / 9.0, rel=1e-15)


def test_schedule_uses_larger_of_budget_and_trace():
    assert init_schedule(1, 16, 16).delta_l == pytest.approx(1.0 / 32.0, rel=1e-15)
    assert init_schedule(1, 9, 40).delta_l == pytest.approx(1.0 / 80.0, rel=1e-15)


def test_schedule_rejects_budget_at_or_below_eight_k():
    with pytest.raises(BudgetTooSmallError):
        init_schedule(1, 8, 4)
    with pytest.raises(PreconditionError):
        init_schedule(1, 9, 0)


def test_integer_trace_bound_rounds_up_and_floors_at_one():
    assert integer_trace_bound(2.3) == 3
    assert integer_trace_bound(2.0) == 2
    assert integer_trace_bound(0.0) == 1


# ---------------------------------------------------------------------------
# protected subspace and normalizer


def test_fixed_subspace_picks_bottom_eigenvectors():
    s = fixed_subspace(np.diag([1.0, 2.0, 3.0]), 2)
    p = s.basis @ s.basis.T
    want = np.diag([1.0, 1.0, 0.0])
    assert np.allclose(p, want, atol=1e-12)
    assert fixed_subspace(np.diag([1.0, 2.0]), 0).dim == 0
    assert fixed_subspace(np.diag([1.0, 2.0]), 5).dim == 2


def test_fixed_subspace_restriction_tops_out_at_kth_eigenvalue():
    rng = np.random.default_rng(5)
    x = random_psd(rng, 8)
    k = 3
    s = fixed_subspace(x, k)
    vals = eigvalsh(restrict(x, s))
    assert vals[-1] == pytest.approx(np.sort(eigvalsh(x))[k - 1], abs=1e-9)


def test_normalizer_inverts_the_restricted_gap():
    rng = np.random.default_rng(9)
    d = 6
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    s = Subspace(q[:, :2])
    p = s.basis @ s.basis.T
    x = np.zeros((d, d))

    z, eps = compute_Z(x, p, s)  # M* - X = P_S
    assert eps == 0.0
    assert np.allclose(z, p, atol=1e-9)

    z4, eps4 = compute_Z(x, 4.0 * p, s)  # M* - X = 4 P_S
    assert eps4 == 0.0
    assert np.allclose(z4, p / 2.0, atol=1e-9)

    gap = random_psd(rng, d, lo=0.5, hi=2.0)
    zg, _ = compute_Z(x, symmetrize(p @ gap @ p), s)
    ident = zg @ symmetrize(p @ gap @ p) @ zg
    assert np.allclose(ident, p, atol=1e-7)


def test_normalizer_rejects_indefinite_gap():
    s = Subspace(np.eye(3)[:, :1])
    with pytest.raises(PreconditionError):
        compute_Z(np.eye(3), np.zeros((3, 3)), s)


# ---------------------------------------------------------------------------
# potentials


def test_lower_potential_at_start_equals_its_budget():
    for k, n_budget, t_bound in [(1, 9, 4), (2, 17, 6), (3, 25, 25)]:
        s = init_schedule(k, n_budget, t_bound)
        sub = Subspace(np.eye(8)[:, :k])
        phi = lower_potential(np.zeros((8, 8)), s.l0, sub)
        assert phi == pytest.approx(s.eps_l, rel=1e-12)


def test_lower_potential_identity_block_is_dimension():
    sub = Subspace(np.eye(5)[:, :3])
    assert lower_potential(np.eye(5), 0.0, sub) == pytest.approx(3.0, rel=1e-12)
    assert lower_potential(np.eye(5), 0.0, Subspace(np.eye(5)[:, :0])) == 0.0


def test_lower_potential_matches_eigensum_oracle():
    rng = np.random.default_rng(21)
    b = random_psd(rng, 7, lo=1.0, hi=3.0)
    q, _ = np.linalg.qr(rng.standard_normal((7, 7)))
    sub = Subspace(q[:, :4])
    l = 0.5
    want = float(np.sum(1.0 / (eigvalsh(restrict(b, sub)) - l)))
    assert lower_potential(b, l, sub) == pytest.approx(want, rel=1e-9)


def test_lower_potential_raises_past_the_barrier():
    sub = Subspace(np.eye(3)[:, :2])
    with pytest.raises(BarrierViolationError):
        lower_potential(np.zeros((3, 3)), 0.0, sub)


def test_upper_potential_at_start_stays_within_budget():
    for k, n_budget, t_bound in [(1, 9, 4), (2, 17, 17)]:
        s = init_schedule(k, n_budget, t_bound)
        phi = upper_potential(np.zeros((6, 6)), s.u0, t_bound)
        assert phi <= s.eps_u + 1e-12


def test_upper_potential_counts_trace_slots():
    # A = 0, u = 1: each of the T tracked slots contributes 1/(1 - 0) = 1,
    # and T clamps to the dimension.
    assert upper_potential(np.zeros((4, 4)), 1.0, 4) == pytest.approx(4.0, rel=1e-12)
    assert upper_potential(np.zeros((2, 2)), 1.0, 7) == pytest.approx(2.0, rel=1e-12)
    assert upper_potential(np.diag([0.0, 0.5]), 1.0, 1) == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(BarrierViolationError):
        upper_potential(np.eye(3), 1.0, 3)


# ---------------------------------------------------------------------------
# gradients


def test_upper_gradient_scalar_case():
    # one dimension, A = 0, u = 2, delta_u = 1, T = 1:
    # (1/9) / (1/2 - 1/3) + 1/3 = 2/3 + 1/3 = 1
    g = upper_gradient(np.zeros((1, 1)), 2.0, 1.0, 1)
    assert g.shape == (1, 1)
    assert g[0, 0] == pytest.approx(1.0, rel=1e-12)


def test_lower_gradient_scalar_case():
    # B = 1 on a one-dimensional S, l = 0, delta_l = 1/2:
    # (1/(1/2)^2) / (1/(1/2) - 1/1) - 1/(1/2) = 4 - 2 = 2
    sub = Subspace(np.eye(1))
    g = lower_gradient(np.ones((1, 1)), 0.0, 0.5, sub)
    assert g[0, 0] == pytest.approx(2.0, rel=1e-12)


def test_lower_gradient_vanishes_off_the_subspace():
    rng = np.random.default_rng(31)
    d = 6
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    sub = Subspace(q[:, :2])
    p = sub.basis @ sub.basis.T
    b = symmetrize(p @ random_psd(rng, d, lo=1.0, hi=2.0) @ p)
    g = lower_gradient(b, -0.25, 0.05, sub)
    perp = np.eye(d) - p
    assert np.max(np.abs(perp @ g @ perp)) <= 1e-9


def test_upper_gradient_certifies_a_safe_step_size():
    # Adding t Y with t = 1/(U_A . Y) must not raise the potential even after
    # the barrier shifts to u + delta_u; smaller steps inherit the guarantee.
    rng = np.random.default_rng(33)
    for trial in range(30):
        d = int(rng.integers(2, 7))
        t_bound = int(rng.integers(1, d + 1))
        a = random_psd(rng, d, lo=0.0, hi=0.5)
        u, delta_u = 2.0, float(rng.uniform(0.05, 0.5))
        g = upper_gradient(a, u, delta_u, t_bound)
        v = rng.standard_normal(d)
        y = np.outer(v, v) / (v @ v)
        t = 1.0 / float(np.sum(g * y))
        before = upper_potential(a, u, t_bound)
        for step in (t, 0.5 * t):
            after = upper_potential(symmetrize(a + step * y), u + delta_u, t_bound)
            assert after <= before + 1e-9


def test_lower_gradient_certifies_a_sufficient_step_size():
    # Adding t Y with t = 1/(L_B . Y) restores the shifted lower potential to
    # at most its previous value; larger steps only help.
    rng = np.random.default_rng(37)
    for trial in range(30):
        d = int(rng.integers(2, 7))
        r = int(rng.integers(1, d + 1))
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        sub = Subspace(q[:, :r])
        p = sub.basis @ sub.basis.T
        b = symmetrize(p @ random_psd(rng, d, lo=1.0, hi=2.0) @ p)
        l, delta_l = 0.25, float(rng.uniform(0.02, 0.2))
        g = lower_gradient(b, l, delta_l, sub)
        v = p @ rng.standard_normal(d)
        y = np.outer(v, v) / (v @ v)
        score = float(np.sum(g * y))
        if score <= 1e-12:
            continue
        t = 1.0 / score
        before = lower_potential(b, l, sub)
        for step in (t, 2.0 * t):
            after = lower_potential(symmetrize(b + step * y), l + delta_l, sub)
            assert after <= before + 1e-9


# ---------------------------------------------------------------------------
# selection


def _single_update_problem():
    x = np.diag([0.25, 0.5])
    v = np.array([[0.5], [0.5]])
    mstar = symmetrize(x + v @ v.T)
    return EngineProblem(X=x, vectors=v, costs=np.array([1.0]), Mstar=mstar, k=0, N=1)


def test_select_update_single_candidate_gets_index_zero():
    p = _single_update_problem()
    from lapsparse.engine import EngineState

    schedule = init_schedule(p.k, p.N, p.T)
    state = EngineState(
        q=0,
        weights=np.zeros(1),
        A=p.X.copy(),
        B=np.zeros((2, 2)),
        l=schedule.l0,
        u=schedule.u0,
        S=Subspace(np.zeros((2, 0))),
        Z=np.zeros((2, 2)),
    )
    idx, t = select_update(p, state, schedule)
    assert idx == 0
    assert t > 0
    assert p.costs[0] * t <= 1.0 / max(p.N, p.T) + 1e-12


def test_selection_scores_balance_on_covered_instances():
    # Feasibility of each step comes from the averaging bound: the total
    # upper-side score cannot exceed the total lower-side score.
    problem = make_engine_instance(3, n=12, m=60, k=1)
    from lapsparse.engine import EngineState, _selection_scores

    schedule = init_schedule(problem.k, problem.N, problem.T)
    s = fixed_subspace(problem.X, problem.k)
    z, _ = compute_Z(problem.X, problem.Mstar, s)
    state = EngineState(
        q=0,
        weights=np.zeros(problem.num_updates),
        A=problem.X.copy(),
        B=np.zeros((12, 12)),
        l=schedule.l0,
        u=schedule.u0,
        S=s,
        Z=z,
    )
    upper_scores, lower_scores, _ = _selection_scores(
        problem, state, schedule, z @ problem.vectors
    )
    assert float(upper_scores.sum()) <= float(lower_scores.sum()) + 1e-8


# ---------------------------------------------------------------------------
# the full loop


def test_run_engine_identity_scaling_with_no_protected_directions():
    d = 4
    x = np.eye(d) / 2.0
    vectors = np.eye(d) / np.sqrt(2.0)
    p = EngineProblem(
        X=x, vectors=vectors, costs=np.full(d, 0.25), Mstar=np.eye(d), k=0, N=4
    )
    assert p.T == 2
    res = run_engine(p)
    assert res.lambda_max <= res.theta_max + 1e-9
    assert res.theta_max == pytest.approx(4.0)
    assert res.lambda_star == pytest.approx(0.5, abs=1e-12)
    assert res.lambda_min >= res.explicit_floor - 1e-12
    assert res.support <= 4
    assert res.total_cost <= res.cost_bound + 1e-9
    assert res.max_potential_increase <= 1e-9


def test_run_engine_is_deterministic():
    p = make_engine_instance(8, n=20, m=120, k=2)
    r1 = run_engine(p)
    r2 = run_engine(p)
    assert np.array_equal(r1.weights, r2.weights)
    assert r1.lambda_min == r2.lambda_min
    assert r1.lambda_max == r2.lambda_max


def test_run_engine_takes_exactly_budget_many_steps_with_positive_steps():
    p = make_engine_instance(12, n=16, m=90, k=1)
    res = run_engine(p)
    assert len(res.trace) == p.N
    assert all(rec.t > 0 for rec in res.trace)
    assert all(rec.q == i + 1 for i, rec in enumerate(res.trace))
    # barriers advance linearly
    sch = res.schedule
    assert res.trace[-1].l == pytest.approx(sch.l0 + p.N * sch.delta_l, rel=1e-12)
    assert res.trace[-1].u == pytest.approx(sch.u0 + p.N * sch.delta_u, rel=1e-12)


def test_run_engine_certificate_matches_independent_eigensolves():
    p = make_engine_instance(15, n=18, m=100, k=2)
    res = run_engine(p)
    m_rebuilt = p.X + (p.vectors * res.weights) @ p.vectors.T
    vals = np.linalg.eigvalsh(symmetrize(m_rebuilt))
    assert vals[0] == pytest.approx(res.lambda_min, rel=1e-9, abs=1e-12)
    assert vals[-1] == pytest.approx(res.lambda_max, rel=1e-9, abs=1e-12)
    assert res.support == int(np.count_nonzero(res.weights))
    assert res.support <= p.N
    assert res.total_cost == pytest.approx(float(res.weights @ p.costs), rel=1e-12)
    x_vals = np.linalg.eigvalsh(p.X)
    mstar_vals = np.linalg.eigvalsh(p.Mstar)
    floor = min(p.N / p.T, 1.0) * x_vals[p.k] * mstar_vals[0] / 72.0
    assert res.lambda_min >= floor - 1e-12


def test_problem_validation_rejects_mismatched_mass():
    rng = np.random.default_rng(2)
    x = random_psd(rng, 4, lo=0.1, hi=0.4)
    v = rng.standard_normal((4, 6)) / 6.0
    with pytest.raises(PreconditionError):
        EngineProblem(
            X=x, vectors=v, costs=np.full(6, 1 / 6), Mstar=np.eye(4), k=1, N=9
        ).validate()


def test_problem_validation_rejects_bad_costs_and_budget():
    d = 4
    x = np.eye(d) / 2.0
    v = np.eye(d) / np.sqrt(2.0)
    mstar = np.eye(d)
    bad = EngineProblem(X=x, vectors=v, costs=np.full(d, 0.5), Mstar=mstar, k=0, N=4)
    with pytest.raises(PreconditionError):
        bad.validate()
    with pytest.raises(BudgetTooSmallError):
        run_engine(
            EngineProblem(X=x, vectors=v, costs=np.full(d, 0.25), Mstar=mstar, k=1, N=8)
        )
