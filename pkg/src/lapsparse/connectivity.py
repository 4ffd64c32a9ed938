"""Algebraic-connectivity maximization by adding k candidate edges.

Three layers: a fractional solver maximizing the concave map
w -> lambda_2(L_base + sum_e w_e L_e) over {0 <= w <= 1, sum w <= k}
(projected supergradient ascent — a stand-in for the SDP relaxation),
a rounding step that funnels the fractional solution through the
selection engine to get at most 8k+1 reweighted edges with a certified
lambda_2 floor, and an exhaustive oracle for small instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import (
    NumericalError,
    PreconditionError,
    TooLargeError,
    WeightedGraph,
    eigh,
    eigvalsh,
    laplacian,
    symmetrize,
)
from .engine import (
    LOWER_CONSTANT_DIVISOR,
    EngineProblem,
    EngineResult,
    run_engine,
)

SOLVER_ITERATION_CAP = 5000
DEGENERACY_TOL = 1e-8
WEIGHT_DROP_REL = 1e-9


@dataclass(frozen=True)
class ConnectivityInstance:
    """Base graph, disjoint unit-weight candidate edges, budget k, and the
    degree scale Delta = max degree over the base and candidate graphs
    (weighted degrees for the base, edge counts for the candidates)."""

    base: WeightedGraph
    candidates: tuple
    k: int
    delta: float = field(default=0.0)

    def __init__(self, base: WeightedGraph, candidates, k: int, delta: float | None = None):
        if k < 0:
            raise PreconditionError(f"budget k must be nonnegative, got {k}")
        pairs = []
        for u, v in candidates:
            u, v = int(u), int(v)
            if u == v:
                raise PreconditionError(f"candidate self-loop at vertex {u}")
            if not (0 <= u < base.n and 0 <= v < base.n):
                raise PreconditionError(f"candidate ({u},{v}) outside vertex range 0..{base.n - 1}")
            pairs.append((min(u, v), max(u, v)))
        if len(set(pairs)) != len(pairs):
            raise PreconditionError("duplicate candidate edges")
        overlap = set(pairs) & set(base.edge_pairs())
        if overlap:
            raise PreconditionError(f"candidates overlap base edges: {sorted(overlap)}")
        pairs = tuple(sorted(pairs))
        measured = _max_degree(base, pairs)
        if delta is None:
            delta = measured
        elif delta < measured - 1e-9:
            raise PreconditionError(f"delta {delta} below the measured max degree {measured}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "candidates", pairs)
        object.__setattr__(self, "k", int(k))
        object.__setattr__(self, "delta", float(delta))


def _max_degree(base: WeightedGraph, pairs) -> float:
    degrees = [0.0]
    if base.num_edges:
        degrees.append(float(np.max(base.weighted_degrees())))
    if pairs:
        counts = np.zeros(base.n)
        for u, v in pairs:
            counts[u] += 1.0
            counts[v] += 1.0
        degrees.append(float(np.max(counts)))
    return max(degrees)


@dataclass(frozen=True)
class FractionalSolution:
    """Fractional edge weights with the exact lambda_2 they achieve."""

    weights: np.ndarray
    lambda_sdp: float
    iterations: int
    gradient_norm: float
    converged: bool


@dataclass(frozen=True)
class RoundedSolution:
    """At most 8k+1 reweighted candidate edges with a certified floor.

    lambda2_weighted is lambda_2 of base plus the reweighted selection
    (the certified quantity); lambda2_unweighted is lambda_2 of base plus
    the selected edges at unit weight (reported, not certified). The
    certificate is floor = lambda_k2 * lambda_sdp / (72 (4 Delta)^2),
    or lambda_sdp / 72 when k + 2 > n.
    """

    selected: tuple
    weights: tuple
    lambda2_weighted: float
    lambda2_unweighted: float
    lambda_sdp: float
    lambda_k2: float
    floor: float
    engine: EngineResult | None


def _graph_lambda2_with(base: WeightedGraph, pairs, weights) -> float:
    """lambda_2 of base plus the given weighted edges."""
    lap = laplacian(base)
    for (u, v), w in zip(pairs, weights):
        lap[u, u] += w
        lap[v, v] += w
        lap[u, v] -= w
        lap[v, u] -= w
    return float(eigvalsh(symmetrize(lap))[1])


def _incidence_rows(n: int, pairs) -> np.ndarray:
    rows = np.zeros((len(pairs), n))
    for i, (u, v) in enumerate(pairs):
        rows[i, u] = 1.0
        rows[i, v] = -1.0
    return rows


def _lambda2_with_gradient(lb: np.ndarray, inc: np.ndarray, w: np.ndarray):
    """Exact lambda_2 at w and a supergradient over the candidates.

    Near-degenerate eigenvalues (within 1e-8 of lambda_2) are handled by
    averaging (x_u - x_v)^2 over an orthonormal basis of the cluster."""
    lap = symmetrize(lb + inc.T @ (w[:, None] * inc))
    dec = eigh(lap)
    vals, vecs = dec.eigenvalues, dec.eigenvectors
    lam2 = float(vals[1])
    cluster = [j for j in range(1, len(vals)) if vals[j] - vals[1] <= DEGENERACY_TOL]
    basis = vecs[:, cluster]
    diffs = inc @ basis
    grad = np.mean(diffs * diffs, axis=1)
    return lam2, grad


def _lambda2(lb: np.ndarray, inc: np.ndarray, w: np.ndarray) -> float:
    lap = symmetrize(lb + inc.T @ (w[:, None] * inc))
    return float(eigvalsh(lap)[1])


def _project_capped_box(v: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto {0 <= w <= 1, sum w <= cap}."""
    w = np.clip(v, 0.0, 1.0)
    if float(w.sum()) <= cap + 1e-12:
        return w
    lo, hi = 0.0, float(np.max(v))
    for _ in range(100):
        tau = 0.5 * (lo + hi)
        if float(np.clip(v - tau, 0.0, 1.0).sum()) > cap:
            lo = tau
        else:
            hi = tau
    return np.clip(v - hi, 0.0, 1.0)


def _fill_budget(w: np.ndarray, cap: float) -> np.ndarray:
    """Spread any unused budget over unsaturated coordinates; lambda_2 is
    nondecreasing in every weight, so this never hurts the objective."""
    w = np.clip(w, 0.0, 1.0)
    for _ in range(len(w) + 1):
        slack = cap - float(w.sum())
        if slack <= 1e-12:
            break
        free = w < 1.0 - 1e-12
        if not free.any():
            break
        w[free] = np.minimum(w[free] + slack / int(free.sum()), 1.0)
    return w


def _greedy_integral(lb: np.ndarray, inc: np.ndarray, k: int) -> np.ndarray:
    """Indicator of the greedy one-at-a-time unit-weight selection."""
    m = inc.shape[0]
    w = np.zeros(m)
    for _ in range(min(k, m)):
        best_i, best_val = -1, -math.inf
        for i in range(m):
            if w[i] > 0.0:
                continue
            w[i] = 1.0
            val = _lambda2(lb, inc, w)
            w[i] = 0.0
            if val > best_val:
                best_i, best_val = i, val
        w[best_i] = 1.0
    return w


def solve_fractional(inst: ConnectivityInstance, tol: float = 1e-4) -> FractionalSolution:
    """Maximize lambda_2(L_base + sum w_e L_e) over {0<=w<=1, sum w <= k}.

    Projected supergradient ascent with step a/sqrt(iter) over a few step
    scales, restarting each phase from the best iterate, under a global
    iteration cap. Deterministic. Returns the best iterate with its exact
    lambda_2; hitting the cap sets converged=False rather than raising.
    """
    m = len(inst.candidates)
    if m < 1:
        raise PreconditionError("need at least one candidate edge")
    if inst.base.n < 2:
        raise PreconditionError("lambda_2 needs at least 2 vertices")
    lb = laplacian(inst.base)
    inc = _incidence_rows(inst.base.n, inst.candidates)
    cap = float(min(inst.k, m))
    if inst.k == 0:
        w = np.zeros(m)
        lam, grad = _lambda2_with_gradient(lb, inc, w)
        return FractionalSolution(w, lam, 0, float(np.linalg.norm(grad)), True)

    inits = [_fill_budget(np.full(m, min(1.0, cap / m)), cap)]
    if m * inst.k <= 20000:
        inits.append(_greedy_integral(lb, inc, inst.k))

    best_w = inits[0].copy()
    best_val = -math.inf
    total = 0
    capped = False
    last_phase_gain = math.inf
    phase_budget = max(1, SOLVER_ITERATION_CAP // (len(inits) * 4))
    for w0 in inits:
        w = w0.copy()
        for a in (2.0, 0.5, 0.1, 0.02):
            phase_start_best = best_val
            for it in range(1, phase_budget + 1):
                if total >= SOLVER_ITERATION_CAP:
                    capped = True
                    break
                total += 1
                val, grad = _lambda2_with_gradient(lb, inc, w)
                if val > best_val:
                    best_val = val
                    best_w = w.copy()
                gnorm = float(np.linalg.norm(grad))
                if gnorm < 1e-14:
                    break
                w = _project_capped_box(w + (a / math.sqrt(it)) * grad / gnorm, cap)
            last_phase_gain = best_val - phase_start_best
            if capped:
                break
            w = best_w.copy()
        if capped:
            break

    filled = _fill_budget(best_w.copy(), cap)
    filled_val = _lambda2(lb, inc, filled)
    if filled_val >= best_val:
        best_w, best_val = filled, filled_val
    lam, grad = _lambda2_with_gradient(lb, inc, best_w)
    if lam >= best_val:
        best_val = lam
    total_w = float(best_w.sum())
    if total_w > inst.k + 1e-8 or float(best_w.min()) < -1e-10 or float(best_w.max()) > 1.0 + 1e-10:
        raise NumericalError(f"solver left the feasible region: sum={total_w!r}")
    converged = (not capped) and last_phase_gain <= tol
    return FractionalSolution(
        weights=best_w,
        lambda_sdp=float(best_val),
        iterations=total,
        gradient_norm=float(np.linalg.norm(grad)),
        converged=converged,
    )


def lambda_k2_bound(g: WeightedGraph, k: int) -> float:
    """lambda_{k+2}(L_G), the ceiling no k-edge addition can beat;
    +infinity when k + 2 > n (the ceiling is vacuous there)."""
    if k < 0:
        raise PreconditionError(f"k must be nonnegative, got {k}")
    if k + 2 > g.n:
        return math.inf
    return float(eigvalsh(laplacian(g))[k + 1])


def round_solution(inst: ConnectivityInstance, frac: FractionalSolution) -> RoundedSolution:
    """Sparsify the fractional solution to at most 8k+1 reweighted edges.

    The engine runs on X = H L_base H^T / (4 Delta) with H an orthonormal
    basis of the all-ones complement, vectors sqrt(w_e/(4 Delta)) H b_e, and
    certifies lambda_2 of the reweighted solution against the floor
    lambda_{k+2}(L_base) * lambda_sdp / (72 (4 Delta)^2) (lambda_sdp / 72
    when k + 2 > n).
    """
    n = inst.base.n
    m = len(inst.candidates)
    if len(frac.weights) != m:
        raise PreconditionError(f"fractional solution has {len(frac.weights)} weights for {m} candidates")
    lam_k2 = lambda_k2_bound(inst.base, inst.k)
    four_delta = 4.0 * inst.delta
    if four_delta <= 0.0:
        raise PreconditionError("Delta must be positive to round (no edges anywhere)")
    lam2_base = float(eigvalsh(laplacian(inst.base))[1])
    if math.isfinite(lam_k2):
        floor = lam_k2 * frac.lambda_sdp / (LOWER_CONSTANT_DIVISOR * four_delta**2)
    else:
        floor = frac.lambda_sdp / LOWER_CONSTANT_DIVISOR

    total_w = float(np.sum(frac.weights))
    kept = [i for i in range(m) if frac.weights[i] > WEIGHT_DROP_REL * max(total_w, 1e-300)]
    if inst.k == 0 or not kept:
        return RoundedSolution(
            selected=(),
            weights=(),
            lambda2_weighted=lam2_base,
            lambda2_unweighted=lam2_base,
            lambda_sdp=frac.lambda_sdp,
            lambda_k2=lam_k2,
            floor=floor,
            engine=None,
        )

    if len(kept) <= 8 * inst.k + 1:
        # Already within the support budget: keep the fractional weights as
        # they are. The floor holds outright because lambda_{k+2} <= 2 Delta
        # << 72 (4 Delta)^2, so lambda_sdp itself clears it.
        selected = tuple(inst.candidates[i] for i in kept)
        weights = tuple(float(frac.weights[i]) for i in kept)
        lam2_weighted = _graph_lambda2_with(inst.base, selected, weights)
        lam2_unweighted = _graph_lambda2_with(inst.base, selected, (1.0,) * len(selected))
        if lam2_weighted < floor * (1.0 - 1e-6) - 1e-12:
            raise NumericalError(
                f"sparse-support lambda_2 {lam2_weighted!r} fell below the floor {floor!r}"
            )
        return RoundedSolution(
            selected=selected,
            weights=weights,
            lambda2_weighted=lam2_weighted,
            lambda2_unweighted=lam2_unweighted,
            lambda_sdp=frac.lambda_sdp,
            lambda_k2=lam_k2,
            floor=floor,
            engine=None,
        )

    h = scipy.linalg.helmert(n)
    lb = laplacian(inst.base)
    x = symmetrize(h @ lb @ h.T / four_delta)
    vectors = np.zeros((n - 1, len(kept)))
    lap_frac = lb.copy()
    for j, i in enumerate(kept):
        u, v = inst.candidates[i]
        w_e = float(frac.weights[i])
        vectors[:, j] = math.sqrt(w_e / four_delta) * (h[:, u] - h[:, v])
        lap_frac[u, u] += w_e
        lap_frac[v, v] += w_e
        lap_frac[u, v] -= w_e
        lap_frac[v, u] -= w_e
    mstar = symmetrize(h @ lap_frac @ h.T / four_delta)
    kept_w = np.array([frac.weights[i] for i in kept])
    costs = kept_w / float(kept_w.sum())
    costs[-1] = 1.0 - float(costs[:-1].sum())
    problem = EngineProblem(
        X=x,
        vectors=vectors,
        costs=costs,
        Mstar=mstar,
        k=inst.k,
        N=8 * inst.k + 1,
    )
    result = run_engine(problem)

    selected = []
    weights = []
    for j in result.support_indices:
        i = kept[j]
        selected.append(inst.candidates[i])
        weights.append(float(result.weights[j] * frac.weights[i]))
    lam2_weighted = _graph_lambda2_with(inst.base, selected, weights)
    lam2_unweighted = _graph_lambda2_with(inst.base, selected, (1.0,) * len(selected))

    if lam2_weighted < floor * (1.0 - 1e-6) - 1e-12:
        raise NumericalError(
            f"rounded lambda_2 {lam2_weighted!r} fell below the certified floor {floor!r}"
        )
    agreement = abs(lam2_weighted - four_delta * result.lambda_min)
    if agreement > 1e-6 * max(1.0, lam2_weighted):
        raise NumericalError(
            f"graph-level lambda_2 {lam2_weighted!r} and engine lambda_min disagree by {agreement!r}"
        )
    return RoundedSolution(
        selected=tuple(selected),
        weights=tuple(weights),
        lambda2_weighted=lam2_weighted,
        lambda2_unweighted=lam2_unweighted,
        lambda_sdp=frac.lambda_sdp,
        lambda_k2=lam_k2,
        floor=floor,
        engine=result,
    )


def brute_force_opt(inst: ConnectivityInstance):
    """Exact maximum of lambda_2 over all <=k-subsets of the candidates.

    Returns (best lambda_2, best edge set); ties keep the first subset in
    size-ascending, index-lexicographic order."""
    m = len(inst.candidates)
    k = min(inst.k, m)
    if math.comb(m, k) > 10**6:
        raise TooLargeError(f"C({m},{k}) subsets exceed the 1e6 enumeration cap")
    if inst.base.n < 2:
        raise PreconditionError("lambda_2 needs at least 2 vertices")
    lb = laplacian(inst.base)
    inc = _incidence_rows(inst.base.n, inst.candidates)
    best_val = -math.inf
    best_set: tuple = ()
    w = np.zeros(m)
    for size in range(0, k + 1):
        for subset in itertools.combinations(range(m), size):
            w[:] = 0.0
            w[list(subset)] = 1.0
            val = _lambda2(lb, inc, w)
            if val > best_val:
                best_val = val
                best_set = tuple(inst.candidates[i] for i in subset)
    return best_val, best_set
