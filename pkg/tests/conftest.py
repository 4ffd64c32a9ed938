"""Shared random builders used across the test modules.

Everything here is deterministic given a seed so failures reproduce exactly.
"""
from __future__ import annotations

import math

import numpy as np

from lapsparse.core import WeightedGraph
from lapsparse.engine import EngineProblem


def random_connected_graph(
    rng: np.random.Generator,
    n: int,
    extra_edges: int = 0,
    wmin: float = 0.5,
    wmax: float = 2.0,
) -> WeightedGraph:
    """Random spanning tree plus `extra_edges` distinct chords, uniform weights."""
    order = rng.permutation(n)
    edges = []
    present = set()
    for i in range(1, n):
        u = int(order[i])
        v = int(order[rng.integers(0, i)])
        a, b = min(u, v), max(u, v)
        present.add((a, b))
        edges.append((a, b, float(rng.uniform(wmin, wmax))))
    missing = [
        (u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in present
    ]
    if missing and extra_edges > 0:
        take = rng.choice(len(missing), size=min(extra_edges, len(missing)), replace=False)
        for j in take:
            u, v = missing[int(j)]
            edges.append((u, v, float(rng.uniform(wmin, wmax))))
    return WeightedGraph(n, edges)


def random_psd(rng: np.random.Generator, d: int, lo: float = 0.5, hi: float = 2.0) -> np.ndarray:
    """Random PSD matrix with eigenvalues uniform in [lo, hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    vals = rng.uniform(lo, hi, size=d)
    return (q * vals) @ q.T


def random_projection(rng: np.random.Generator, d: int, r: int) -> np.ndarray:
    """Orthogonal projection onto a random r-dimensional subspace."""
    q, _ = np.linalg.qr(rng.standard_normal((d, max(r, 1))))
    q = q[:, :r]
    return q @ q.T


def make_engine_instance(
    seed: int, n: int = 40, m: int = 300, k: int = 1, n_budget: int | None = None
) -> EngineProblem:
    """Random dense engine instance with lambda_max(M*) = 1.

    X is a Wishart-style PSD matrix rescaled to a random top eigenvalue
    alpha in [0.2, 0.8]; the update directions are scaled rank-one Gaussians
    whose common factor beta is bisected so lambda_max(X + sum_i Y_i) = 1,
    which keeps the certified floor non-vacuous. Costs are a random point on
    the simplex.
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    x_raw = a @ a.T / n
    alpha = float(rng.uniform(0.2, 0.8))
    x = x_raw * (alpha / float(np.linalg.eigvalsh(x_raw)[-1]))
    g = rng.standard_normal((n, m)) / math.sqrt(n * m)
    gram = g @ g.T

    def top(beta: float) -> float:
        return float(np.linalg.eigvalsh(x + beta * gram)[-1])

    lo, hi = 0.0, 1.0
    while top(hi) < 1.0:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if top(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    beta = hi
    vectors = math.sqrt(beta) * g
    mstar = x + vectors @ vectors.T
    costs = rng.exponential(size=m)
    costs /= costs.sum()
    costs[-1] = 1.0 - float(costs[:-1].sum())
    if n_budget is None:
        n_budget = 8 * k + 1
    return EngineProblem(X=x, vectors=vectors, costs=costs, Mstar=mstar, k=k, N=n_budget)
