"""Two-barrier rank-one update selection.

Given PSD X, rank-one candidates Y_i = v_i v_i^T with costs summing to one,
and M* = X + sum_i Y_i with lambda_max(M*) <= 1, pick N weighted updates so
that M = X + sum_i w_i Y_i keeps its whole spectrum below a fixed ceiling
while the restriction to S — the span of X's k smallest eigenvectors — is
lifted towards lambda_min(M*). Two potential functions steer the choice: a
floating upper barrier u over the T largest eigenvalues of A, and a lower
barrier l under the spectrum of B = Z(A - X)Z restricted to S, where
Z = ((P_S (M* - X) P_S)^+)^(1/2) normalizes the reachable mass on S.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BarrierViolationError,
    BudgetTooSmallError,
    DegenerateGradientError,
    InfeasibleStepError,
    NumericalError,
    PreconditionError,
    SpectralDecomposition,
    Subspace,
    check_symmetric,
    eigh,
    eigvalsh,
    restrict,
    symmetrize,
)

# Certified explicit constants: lambda_min floor divisor and lambda_max ceiling.
LOWER_CONSTANT_DIVISOR = 72.0
UPPER_CONSTANT = 5.0


def integer_trace_bound(trace: float) -> int:
    """ceil(trace) with a 1e-9 guard against float noise at integer boundaries,
    floored at 1 so schedules stay defined for sub-unit update mass."""
    return max(1, int(math.ceil(trace - 1e-9)))


@dataclass(frozen=True)
class EngineProblem:
    """One selection instance on a working space of dimension d.

    X: (d, d) PSD matrix; vectors: (d, m) with column i generating
    Y_i = v_i v_i^T; costs: (m,) nonnegative, summing to one; Mstar = X + sum Y_i
    with lambda_max <= 1; k: size of the protected bottom eigenspace of X;
    N: number of selection steps; T: ceil(Tr(Mstar - X)), computed here.
    """

    X: np.ndarray
    vectors: np.ndarray
    costs: np.ndarray
    Mstar: np.ndarray
    k: int
    N: int
    T: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "X", check_symmetric(np.asarray(self.X, dtype=float)))
        object.__setattr__(self, "Mstar", check_symmetric(np.asarray(self.Mstar, dtype=float)))
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=float))
        object.__setattr__(self, "costs", np.asarray(self.costs, dtype=float))
        tr = float(np.trace(self.Mstar - self.X))
        object.__setattr__(self, "T", integer_trace_bound(tr))

    @property
    def dim(self) -> int:
        return self.X.shape[0]

    @property
    def num_updates(self) -> int:
        return self.vectors.shape[1]

    def validate(self) -> None:
        d, m = self.dim, self.num_updates
        if self.vectors.shape != (d, m):
            raise PreconditionError(f"vectors must be (d, m) = ({d}, {m}), got {self.vectors.shape}")
        if self.costs.shape != (m,):
            raise PreconditionError(f"costs must have shape ({m},), got {self.costs.shape}")
        if m == 0:
            raise PreconditionError("need at least one candidate update")
        if self.k < 0:
            raise PreconditionError(f"k must be nonnegative, got {self.k}")
        if self.N <= 8 * self.k:
            raise BudgetTooSmallError(f"budget N = {self.N} must exceed 8k = {8 * self.k}")
        if np.any(self.costs < 0):
            raise PreconditionError("costs must be nonnegative")
        cost_sum = float(self.costs.sum())
        if abs(cost_sum - 1.0) > 1e-9:
            raise PreconditionError(f"costs must sum to 1 within 1e-9, got {cost_sum!r}")
        norms = np.linalg.norm(self.vectors, axis=0)
        if np.any(norms == 0.0):
            raise PreconditionError("zero update vectors are not allowed; drop them upstream")
        recon = self.X + self.vectors @ self.vectors.T
        dev = float(np.max(np.abs(recon - self.Mstar)))
        if dev > 1e-8:
            raise PreconditionError(f"X + sum Y_i must equal Mstar entrywise within 1e-8, got {dev:g}")
        lam_max = float(eigvalsh(self.Mstar)[-1]) if d else 0.0
        if lam_max > 1.0 + 1e-9:
            raise PreconditionError(f"lambda_max(Mstar) = {lam_max!r} exceeds 1 + 1e-9")
        x_min = float(eigvalsh(self.X)[0]) if d else 0.0
        if x_min < -1e-9:
            raise PreconditionError(f"X must be PSD, got lambda_min = {x_min:g}")


@dataclass(frozen=True)
class EngineSchedule:
    """Barrier shift sizes, potential caps, and starting barrier positions."""

    delta_l: float
    delta_u: float
    eps_l: float
    eps_u: float
    l0: float
    u0: float


def init_schedule(k: int, n_budget: int, t_bound: int) -> EngineSchedule:
    """Schedule from (k, N, T): delta_l = 1/(2 max(N,T)), delta_u = 4 delta_l,
    eps_l = eps_u = 1/(4 delta_l), l0 = -4k delta_l, u0 = 4T delta_l + 1."""
    if n_budget <= 8 * k:
        raise BudgetTooSmallError(f"budget N = {n_budget} must exceed 8k = {8 * k}")
    if t_bound < 1:
        raise PreconditionError(f"trace bound T must be >= 1, got {t_bound}")
    mx = max(n_budget, t_bound)
    delta_l = 1.0 / (2.0 * mx)
    delta_u = 4.0 * delta_l
    eps = 1.0 / (4.0 * delta_l)
    return EngineSchedule(
        delta_l=delta_l,
        delta_u=delta_u,
        eps_l=eps,
        eps_u=eps,
        l0=-4.0 * k * delta_l,
        u0=4.0 * t_bound * delta_l + 1.0,
    )


@dataclass
class EngineState:
    """Mutable iteration state: step index, weights, A, B, barriers, fixed S and Z."""

    q: int
    weights: np.ndarray
    A: np.ndarray
    B: np.ndarray
    l: float
    u: float
    S: Subspace
    Z: np.ndarray


@dataclass(frozen=True)
class StepRecord:
    """Per-step trace row (values after the update and barrier shift)."""

    q: int
    index: int
    t: float
    slack: float
    l: float
    u: float
    lower_potential: float
    upper_potential: float
    lower_increase: float
    upper_increase: float


@dataclass(frozen=True)
class EngineResult:
    """Final weights and the certificate for M = X + sum w_i Y_i."""

    weights: np.ndarray
    M: np.ndarray
    theta_min: float
    theta_max: float
    lambda_min: float
    lambda_max: float
    lambda_star: float
    lambda_min_mstar: float
    certified_floor: float
    explicit_floor: float
    lambda_min_b_restricted: float
    total_cost: float
    cost_bound: float
    support: int
    perturbation: float
    schedule: EngineSchedule
    trace: tuple
    max_potential_increase: float

    @property
    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)


def fixed_subspace(x: np.ndarray, k: int) -> Subspace:
    """Span of the eigenvectors of X's k smallest eigenvalues.

    Ties are broken by the deterministic order of the eigensolver. k at or
    above the dimension clamps to the full space (used by callers whose
    protected count exceeds the working dimension).
    """
    if k < 0:
        raise PreconditionError(f"k must be nonnegative, got {k}")
    dec = eigh(x)
    k_eff = min(k, x.shape[0])
    return Subspace(dec.eigenvectors[:, :k_eff])


def compute_Z(x: np.ndarray, mstar: np.ndarray, s: Subspace) -> tuple[np.ndarray, float]:
    """Z = ((P_S (M* - X) P_S)^+)^(1/2) as an ambient symmetric matrix.

    If the restriction of M* - X to S is numerically singular, a perturbation
    eps * P_S with eps = 1e-8 * lambda_max(M* - X) is added first; the second
    return value is the eps actually applied (0.0 when none was needed).
    Z Z (P_S (M*-X) P_S) equals P_S for the (possibly perturbed) operator.
    """
    d = check_symmetric(mstar - x)
    dvals = eigvalsh(d) if d.shape[0] else np.zeros(0)
    if dvals.size and float(dvals[0]) < -1e-8 * max(1.0, float(dvals[-1])):
        raise PreconditionError(f"Mstar - X must be PSD, got lambda_min = {float(dvals[0]):g}")
    q = s.basis
    if s.dim == 0:
        return np.zeros_like(d), 0.0
    r = symmetrize(q.T @ d @ q)
    rvals, rvecs = np.linalg.eigh(r)
    lam_scale = float(dvals[-1]) if dvals.size else 0.0
    perturbation = 0.0
    if float(rvals[0]) <= 1e-12 * max(lam_scale, 1e-300):
        perturbation = 1e-8 * lam_scale if lam_scale > 0 else 1e-8
        rvals = rvals + perturbation
    inv_rt = 1.0 / np.sqrt(rvals)
    z_s = (rvecs * inv_rt) @ rvecs.T
    return symmetrize(q @ z_s @ q.T), perturbation


def lower_potential(b: np.ndarray, l: float, s: Subspace) -> float:
    """Sum of 1/(lambda_i - l) over the spectrum of B restricted to S.

    Zero for an empty S. Raises if any restricted eigenvalue is at or below l.
    """
    if s.dim == 0:
        return 0.0
    vals = eigvalsh(restrict(b, s))
    if float(vals[0]) <= l:
        raise BarrierViolationError(
            f"lower barrier crossed: min restricted eigenvalue {float(vals[0])!r} <= l = {l!r}"
        )
    return float(np.sum(1.0 / (vals - l)))


def upper_potential(a: np.ndarray, u: float, t_bound: int) -> float:
    """Sum of 1/(u - lambda_i) over the T largest eigenvalues of A.

    Raises if lambda_max(A) is at or above u. T above the dimension sums over
    the whole spectrum.
    """
    vals = eigvalsh(a)
    if vals.size == 0:
        return 0.0
    if float(vals[-1]) >= u:
        raise BarrierViolationError(
            f"upper barrier crossed: lambda_max = {float(vals[-1])!r} >= u = {u!r}"
        )
    top = vals[-min(t_bound, vals.size):]
    return float(np.sum(1.0 / (u - top)))


def _upper_potential_from_vals(vals: np.ndarray, u: float, t_bound: int) -> float:
    top = vals[-min(t_bound, vals.size):]
    return float(np.sum(1.0 / (u - top)))


def upper_gradient(a: np.ndarray, u: float, delta_u: float, t_bound: int) -> np.ndarray:
    """U_A = ((u')I - A)^(-2) / (Phi^u(A) - Phi^{u'}(A)) + ((u')I - A)^(-1), u' = u + delta_u."""
    dec = eigh(a)
    vals = dec.eigenvalues
    if vals.size and float(vals[-1]) >= u:
        raise BarrierViolationError(
            f"upper barrier crossed: lambda_max = {float(vals[-1])!r} >= u = {u!r}"
        )
    return _upper_gradient_from_eigs(dec, u, delta_u, t_bound)


def _upper_gradient_from_eigs(
    dec: SpectralDecomposition, u: float, delta_u: float, t_bound: int
) -> np.ndarray:
    vals, vecs = dec.eigenvalues, dec.eigenvectors
    gap = (u + delta_u) - vals
    dphi = _upper_potential_from_vals(vals, u, t_bound) - _upper_potential_from_vals(
        vals, u + delta_u, t_bound
    )
    if dphi <= 1e-14:
        raise DegenerateGradientError(f"upper potential difference {dphi:g} too small to normalize")
    diag = (1.0 / gap**2) / dphi + 1.0 / gap
    return symmetrize((vecs * diag) @ vecs.T)


def lower_gradient(b: np.ndarray, l: float, delta_l: float, s: Subspace) -> np.ndarray:
    """L_B = (P_S(B - l'I)P_S)^{+2} / (Phi_{l'}(B) - Phi_l(B)) - (P_S(B - l'I)P_S)^+, l' = l + delta_l.

    Supported inside S; the zero matrix for an empty S.
    """
    if s.dim == 0:
        return np.zeros_like(b)
    q = s.basis
    r = symmetrize(q.T @ b @ q)
    rvals, rvecs = np.linalg.eigh(r)
    mu = rvals - (l + delta_l)
    if float(mu.min()) <= 0:
        raise BarrierViolationError(
            f"lower barrier too close: min restricted eigenvalue {float(rvals.min())!r}"
            f" <= l + delta_l = {l + delta_l!r}"
        )
    dphi = float(np.sum(1.0 / mu) - np.sum(1.0 / (rvals - l)))
    if dphi <= 1e-14:
        raise DegenerateGradientError(f"lower potential difference {dphi:g} too small to normalize")
    diag = (1.0 / mu**2) / dphi - 1.0 / mu
    g_s = (rvecs * diag) @ rvecs.T
    return symmetrize(q @ g_s @ q.T)


def _selection_scores(
    problem: EngineProblem, state: EngineState, schedule: EngineSchedule, zv: np.ndarray
) -> tuple[np.ndarray, np.ndarray, int]:
    """Quadratic forms of every candidate against both gradients.

    Returns (upper side U_A.Y_i + max(N,T) cost_i, lower side L_B.(Z Y_i Z), k_eff).
    """
    mx = max(problem.N, problem.T)
    dec_a = eigh(state.A)
    if float(dec_a.eigenvalues[-1]) >= state.u:
        raise BarrierViolationError(
            f"upper barrier crossed before selection: lambda_max = {float(dec_a.eigenvalues[-1])!r}"
            f" >= u = {state.u!r}"
        )
    u_a = _upper_gradient_from_eigs(dec_a, state.u, schedule.delta_u, problem.T)
    quad_u = np.einsum("ij,jm,im->m", u_a, problem.vectors, problem.vectors)
    k_eff = state.S.dim
    if k_eff > 0:
        l_b = lower_gradient(state.B, state.l, schedule.delta_l, state.S)
        quad_l = np.einsum("ij,jm,im->m", l_b, zv, zv)
    else:
        quad_l = np.zeros(problem.num_updates)
    return quad_u + mx * problem.costs, quad_l, k_eff


def _select(
    problem: EngineProblem,
    state: EngineState,
    schedule: EngineSchedule,
    zv: np.ndarray,
) -> tuple[int, float, float]:
    """Index, step size, and selection slack for the current state."""
    lhs, rhs, k_eff = _selection_scores(problem, state, schedule, zv)
    if k_eff == 0:
        idx = int(np.argmin(lhs))
        if lhs[idx] <= 0:
            raise InfeasibleStepError(
                "degenerate candidate: U_A.Y + max(N,T) cost vanished",
                {"q": state.q, "lhs_min": float(lhs[idx])},
            )
        return idx, 1.0 / float(lhs[idx]), float(-lhs[idx])
    slack = rhs - lhs
    idx = int(np.argmax(slack))
    if slack[idx] < 0:
        raise InfeasibleStepError(
            "no candidate satisfies U_A.Y_i + max(N,T) cost_i <= L_B.(Z Y_i Z)",
            {
                "q": state.q,
                "max_slack": float(slack[idx]),
                "upper_potential": upper_potential(state.A, state.u, problem.T),
                "lower_potential": lower_potential(state.B, state.l, state.S),
                "sum_lhs": float(lhs.sum()),
                "sum_rhs": float(rhs.sum()),
            },
        )
    return idx, 1.0 / float(rhs[idx]), float(slack[idx])


def select_update(
    problem: EngineProblem,
    state: EngineState,
    schedule: EngineSchedule,
    zv: np.ndarray | None = None,
) -> tuple[int, float]:
    """Pick the update index and step size for the current state.

    Feasible indices satisfy U_A.Y_i + max(N,T) cost_i <= L_B.(Z Y_i Z); among
    them the one with maximum slack (lowest index on ties) is chosen, with
    t = 1/(L_B.(Z Y_i Z)). With an empty S the lower side vanishes identically
    and the step becomes t = 1/(U_A.Y_i + max(N,T) cost_i) at the index
    minimizing that quantity. Either way cost_i * t <= 1/max(N,T).
    """
    if zv is None:
        zv = state.Z @ problem.vectors
    idx, t, _ = _select(problem, state, schedule, zv)
    return idx, t


def run_engine(problem: EngineProblem, collect_trace: bool = True) -> EngineResult:
    """Run exactly N selection steps and certify the outcome.

    Each step picks (i, t) via select_update, adds t Y_i to A (and t Z Y_i Z
    to B), then shifts both barriers: l += delta_l, u += delta_u. Potentials
    are re-evaluated from fresh eigensolves every step and must not increase
    beyond 1e-9; the final certificate is checked before returning.
    """
    problem.validate()
    d, m = problem.dim, problem.num_updates
    k_eff = min(problem.k, d)
    dec_x = eigh(problem.X)
    s = Subspace(dec_x.eigenvectors[:, :k_eff])
    z, perturbation = compute_Z(problem.X, problem.Mstar, s)
    zv = z @ problem.vectors
    schedule = init_schedule(problem.k, problem.N, problem.T)
    mx = max(problem.N, problem.T)

    state = EngineState(
        q=0,
        weights=np.zeros(m),
        A=problem.X.copy(),
        B=np.zeros((d, d)),
        l=schedule.l0,
        u=schedule.u0,
        S=s,
        Z=z,
    )

    phi_u = upper_potential(state.A, state.u, problem.T)
    phi_l = lower_potential(state.B, state.l, state.S)
    if phi_u > schedule.eps_u + 1e-9:
        raise NumericalError(
            f"starting upper potential {phi_u!r} exceeds eps_u = {schedule.eps_u!r}"
        )
    if phi_l > schedule.eps_l + 1e-9:
        raise NumericalError(
            f"starting lower potential {phi_l!r} exceeds eps_l = {schedule.eps_l!r}"
        )

    trace = []
    max_increase = 0.0
    for q in range(1, problem.N + 1):
        state.q = q
        idx, t, slack = _select(problem, state, schedule, zv)
        v = problem.vectors[:, idx]
        state.weights[idx] += t
        state.A = symmetrize(state.A + t * np.outer(v, v))
        zvi = zv[:, idx]
        state.B = symmetrize(state.B + t * np.outer(zvi, zvi))
        state.l += schedule.delta_l
        state.u += schedule.delta_u

        new_phi_u = upper_potential(state.A, state.u, problem.T)
        new_phi_l = lower_potential(state.B, state.l, state.S)
        upper_inc = new_phi_u - phi_u
        lower_inc = new_phi_l - phi_l
        max_increase = max(max_increase, upper_inc, lower_inc)
        if upper_inc > 1e-9 or lower_inc > 1e-9:
            raise NumericalError(
                f"potential increased at step {q}: upper by {upper_inc:g}, lower by {lower_inc:g}"
            )
        if collect_trace:
            trace.append(
                StepRecord(
                    q=q,
                    index=idx,
                    t=t,
                    slack=slack,
                    l=state.l,
                    u=state.u,
                    lower_potential=new_phi_l,
                    upper_potential=new_phi_u,
                    lower_increase=lower_inc,
                    upper_increase=upper_inc,
                )
            )
        phi_u, phi_l = new_phi_u, new_phi_l

        cost_so_far = float(state.weights @ problem.costs)
        if cost_so_far > q / mx + 1e-9:
            raise NumericalError(
                f"running cost {cost_so_far!r} exceeds q/max(N,T) = {q / mx!r} at step {q}"
            )

    return _certify(problem, state, schedule, perturbation, dec_x, tuple(trace), max_increase)


def _certify(
    problem: EngineProblem,
    state: EngineState,
    schedule: EngineSchedule,
    perturbation: float,
    dec_x: SpectralDecomposition,
    trace: tuple,
    max_increase: float,
) -> EngineResult:
    d = problem.dim
    k_eff = state.S.dim
    mx = max(problem.N, problem.T)
    theta_max = 2.0 * (problem.N + problem.T) / mx + 1.0
    theta_min = (problem.N / 2.0 - 2.0 * problem.k) / mx

    m_final = symmetrize(problem.X + (problem.vectors * state.weights) @ problem.vectors.T)
    dev = float(np.max(np.abs(m_final - state.A)))
    if dev > 1e-8:
        raise NumericalError(f"A drifted from X + sum w_i Y_i by {dev:g}")
    mvals = eigvalsh(state.A)
    lam_min_m, lam_max_m = float(mvals[0]), float(mvals[-1])

    if lam_max_m > theta_max + 1e-9:
        raise NumericalError(f"lambda_max(M) = {lam_max_m!r} exceeds theta_max = {theta_max!r}")

    if k_eff > 0:
        bvals = eigvalsh(restrict(state.B, state.S))
        lam_min_b = float(bvals[0])
        if lam_min_b < theta_min - 1e-9:
            raise NumericalError(
                f"lambda_min(B|S) = {lam_min_b!r} below theta_min = {theta_min!r}"
            )
    else:
        lam_min_b = float("inf")

    mstar_vals = eigvalsh(problem.Mstar)
    lam_min_mstar = float(mstar_vals[0])
    lam_star = float(dec_x.eigenvalues[k_eff]) if k_eff < d else float("inf")

    cost_fraction = min(1.0, problem.N / problem.T)
    if k_eff < d:
        denom = (
            math.sqrt(max(lam_star, 0.0))
            + math.sqrt(theta_max)
            + math.sqrt(max(theta_min * lam_min_mstar, 0.0))
        ) ** 2
        certified_floor = theta_min * lam_star * lam_min_mstar / denom if denom > 0 else 0.0
        explicit_floor = cost_fraction * lam_star * lam_min_mstar / LOWER_CONSTANT_DIVISOR
    else:
        # S is the whole working space: M >= X + theta_min (M* - X) >= theta_min M*.
        certified_floor = theta_min * lam_min_mstar
        explicit_floor = cost_fraction * lam_min_mstar / LOWER_CONSTANT_DIVISOR
    if lam_min_m < certified_floor - 1e-9:
        raise NumericalError(
            f"lambda_min(M) = {lam_min_m!r} below certified floor {certified_floor!r}"
        )
    if lam_min_m < explicit_floor - 1e-9:
        raise NumericalError(
            f"lambda_min(M) = {lam_min_m!r} below explicit floor {explicit_floor!r}"
        )

    total_cost = float(state.weights @ problem.costs)
    if total_cost > cost_fraction + 1e-9:
        raise NumericalError(f"total cost {total_cost!r} exceeds min(1, N/T) = {cost_fraction!r}")
    support = int(np.count_nonzero(state.weights))
    if support > problem.N:
        raise NumericalError(f"support {support} exceeds N = {problem.N}")

    return EngineResult(
        weights=state.weights.copy(),
        M=state.A,
        theta_min=theta_min,
        theta_max=theta_max,
        lambda_min=lam_min_m,
        lambda_max=lam_max_m,
        lambda_star=lam_star,
        lambda_min_mstar=lam_min_mstar,
        certified_floor=certified_floor,
        explicit_floor=explicit_floor,
        lambda_min_b_restricted=lam_min_b,
        total_cost=total_cost,
        cost_bound=cost_fraction,
        support=support,
        perturbation=perturbation,
        schedule=schedule,
        trace=trace,
        max_potential_increase=max_increase,
    )
