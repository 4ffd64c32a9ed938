"""Low-stretch spanning trees, stretch reports, and ultrasparsifiers.

The pipeline: pick a spanning tree T with small total stretch from a
candidate ensemble, scale W = G / (c3 * kappa) with kappa = c1 * st_T(G) / k,
sparsify W against T through the selection engine, and return U = T + W_k
together with the measured generalized-eigenvalue sandwich of (L_G, L_U).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.csgraph

from .core import (
    DisconnectedError,
    NumericalError,
    PreconditionError,
    WeightedGraph,
    laplacian,
    pencil_eigenvalues,
    pseudoinverse,
)
from .patch import PatchParams, PatchSparsifier, sparsify_patch


@dataclass(frozen=True)
class SpanningTree:
    """Rooted spanning tree with the structures stretch queries need.

    parent[v] is v's parent (-1 at the root, vertex 0); parent_weight[v] the
    weight of the edge to the parent; depth[v] the edge count to the root;
    resistance_to_root[v] the sum of 1/w along the root path. ancestors is
    the binary-lifting table for lowest-common-ancestor queries.
    """

    n: int
    parent: np.ndarray
    parent_weight: np.ndarray
    depth: np.ndarray
    resistance_to_root: np.ndarray
    ancestors: np.ndarray

    @staticmethod
    def build(n: int, edges) -> "SpanningTree":
        """Root the given n-1 tree edges at vertex 0 and precompute tables."""
        edges = [(int(u), int(v), float(w)) for u, v, w in edges]
        if len(edges) != n - 1:
            raise PreconditionError(f"a spanning tree on {n} vertices needs {n - 1} edges, got {len(edges)}")
        adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for u, v, w in edges:
            adj[u].append((v, w))
            adj[v].append((u, w))
        parent = np.full(n, -1, dtype=int)
        parent_weight = np.zeros(n)
        depth = np.zeros(n, dtype=int)
        resistance = np.zeros(n)
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        stack = [0]
        order = []
        while stack:
            x = stack.pop()
            order.append(x)
            for y, w in adj[x]:
                if not seen[y]:
                    seen[y] = True
                    parent[y] = x
                    parent_weight[y] = w
                    depth[y] = depth[x] + 1
                    resistance[y] = resistance[x] + 1.0 / w
                    stack.append(y)
        if not bool(seen.all()):
            raise DisconnectedError("edge set does not span all vertices")
        levels = max(1, int(math.ceil(math.log2(max(n, 2)))))
        anc = np.full((levels, n), -1, dtype=int)
        anc[0] = parent
        for j in range(1, levels):
            prev = anc[j - 1]
            anc[j] = np.where(prev >= 0, prev[prev], -1)
        return SpanningTree(
            n=n,
            parent=parent,
            parent_weight=parent_weight,
            depth=depth,
            resistance_to_root=resistance,
            ancestors=anc,
        )

    def graph(self) -> WeightedGraph:
        edges = [
            (v, int(self.parent[v]), float(self.parent_weight[v]))
            for v in range(self.n)
            if self.parent[v] >= 0
        ]
        return WeightedGraph(self.n, edges)

    def lca(self, u: int, v: int) -> int:
        """Lowest common ancestor by binary lifting."""
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise PreconditionError(f"vertex ({u}, {v}) outside the tree on {self.n} vertices")
        du, dv = int(self.depth[u]), int(self.depth[v])
        if du < dv:
            u, v, du, dv = v, u, dv, du
        diff = du - dv
        j = 0
        while diff:
            if diff & 1:
                u = int(self.ancestors[j, u])
            diff >>= 1
            j += 1
        if u == v:
            return u
        for j in range(self.ancestors.shape[0] - 1, -1, -1):
            au, av = int(self.ancestors[j, u]), int(self.ancestors[j, v])
            if au != av:
                u, v = au, av
        return int(self.parent[u])


@dataclass(frozen=True)
class StretchReport:
    """Per-edge and total stretch of G against a spanning tree.

    trace and tail_counts are filled by sw_trace_check; tail_counts maps each
    probe threshold t to the number of pencil eigenvalues above t.
    """

    per_edge: tuple
    total: float
    trace: float | None = None
    tail_counts: tuple | None = None


def _spt_edges(g: WeightedGraph, root: int) -> list:
    """Shortest-path tree edges from `root` with edge lengths 1/w."""
    rows, cols, lens = [], [], []
    for u, v, w in g.edges:
        rows += [u, v]
        cols += [v, u]
        lens += [1.0 / w, 1.0 / w]
    graph = scipy.sparse.csr_matrix((lens, (rows, cols)), shape=(g.n, g.n))
    _, pred = scipy.sparse.csgraph.dijkstra(graph, indices=root, return_predecessors=True)
    weight = {}
    for u, v, w in g.edges:
        weight[(u, v)] = w
        weight[(v, u)] = w
    edges = []
    for v in range(g.n):
        p = int(pred[v])
        if p >= 0:
            edges.append((p, v, weight[(p, v)]))
    return edges


def _max_weight_tree_edges(g: WeightedGraph) -> list:
    """Maximum-weight spanning tree via the affine flip w -> w_max + 1 - w."""
    wmax = max(w for _, _, w in g.edges)
    rows = [u for u, v, _ in g.edges]
    cols = [v for _, v, _ in g.edges]
    flipped = [wmax + 1.0 - w for _, _, w in g.edges]
    graph = scipy.sparse.csr_matrix((flipped, (rows, cols)), shape=(g.n, g.n))
    mst = scipy.sparse.csgraph.minimum_spanning_tree(graph).tocoo()
    weight = {}
    for u, v, w in g.edges:
        weight[(u, v)] = w
        weight[(v, u)] = w
    return [(int(u), int(v), weight[(int(u), int(v))]) for u, v in zip(mst.row, mst.col)]


def candidate_trees(g: WeightedGraph, seed: int = 0) -> list:
    """The spanning-tree ensemble: shortest-path trees (lengths 1/w) from
    min(n, 16) seeded random roots, then the maximum-weight spanning tree."""
    if not g.is_connected():
        raise DisconnectedError("low-stretch tree needs a connected graph")
    if g.n < 2:
        raise PreconditionError("need at least 2 vertices")
    rng = np.random.default_rng(seed)
    roots = rng.choice(g.n, size=min(g.n, 16), replace=False)
    trees = [SpanningTree.build(g.n, _spt_edges(g, int(r))) for r in roots]
    trees.append(SpanningTree.build(g.n, _max_weight_tree_edges(g)))
    return trees


def low_stretch_tree(g: WeightedGraph, seed: int = 0) -> SpanningTree:
    """The ensemble member minimizing total stretch (first index on ties)."""
    best = None
    best_total = math.inf
    for tree in candidate_trees(g, seed):
        total = tree_stretch(g, tree).total
        if total < best_total:
            best, best_total = tree, total
    return best


def tree_stretch(g: WeightedGraph, tree: SpanningTree) -> StretchReport:
    """Stretch of every edge of G over its unique tree path.

    st(e=(u,v)) = w_e * (R(u) + R(v) - 2 R(lca(u,v))) with R the root-path
    resistance prefix sums, so each edge costs one LCA query.
    """
    if tree.n != g.n:
        raise PreconditionError(f"tree spans {tree.n} vertices, graph has {g.n}")
    tree_pairs = {}
    for v in range(tree.n):
        p = int(tree.parent[v])
        if p >= 0:
            tree_pairs[(min(v, p), max(v, p))] = float(tree.parent_weight[v])
    graph_pairs = g.edge_pairs()
    for (u, v), w in tree_pairs.items():
        if (u, v) not in graph_pairs:
            raise PreconditionError(f"tree edge ({u},{v}) is not an edge of the graph")
    per_edge = []
    resistance = tree.resistance_to_root
    for u, v, w in g.edges:
        a = tree.lca(u, v)
        path_resistance = float(resistance[u] + resistance[v] - 2.0 * resistance[a])
        # w * path resistance; below 1 is possible when a light tree path
        # undercuts a heavy edge, so no lower bound is enforced here.
        per_edge.append(w * path_resistance)
    return StretchReport(per_edge=tuple(per_edge), total=float(sum(per_edge)))


def sw_trace_check(
    g: WeightedGraph, tree: SpanningTree, probes: tuple = (1.0, 2.0, 5.0, 10.0)
) -> tuple[float, float]:
    """Trace identity and eigenvalue tail of the (L_G, L_T) pencil.

    Returns (Tr(L_G L_T^+), st_T(G)); raises unless they agree within
    1e-7 * stretch and the tail counts #{lambda > t} stay below st/t for
    every probe t.
    """
    report = tree_stretch(g, tree)
    l_g = laplacian(g)
    l_t = laplacian(tree.graph())
    trace = float(np.sum(l_g * pseudoinverse(l_t)))
    stretch = report.total
    if abs(trace - stretch) > 1e-7 * stretch:
        raise NumericalError(
            f"trace {trace!r} and total stretch {stretch!r} disagree beyond 1e-7 relative"
        )
    vals = pencil_eigenvalues(l_g, l_t)
    for t in probes:
        count = int(np.sum(vals > t))
        if count > stretch / t + 1e-9:
            raise NumericalError(
                f"tail bound violated at t = {t}: {count} eigenvalues above t"
                f" but st/t = {stretch / t!r}"
            )
    return trace, stretch


@dataclass(frozen=True)
class UltraResult:
    """Ultrasparsifier U = T + W_k with its measured and certified sandwich.

    gen_lower/gen_upper bound the (L_G, L_U) pencil; kappa_measured is their
    ratio (the relative condition number); certified_lower is the engine-backed
    floor 1 / (theta_max * (1 + 1/(c3 kappa_target))).
    """

    u: WeightedGraph
    kappa_target: float
    gen_lower: float
    gen_upper: float
    kappa_measured: float
    certified_lower: float
    edge_count: int
    c1: float
    c3: float
    stretch: StretchReport
    trace_residual: float
    patch: PatchSparsifier | None
    patch_params: PatchParams | None
    tree: SpanningTree


def build_ultrasparsifier(
    g: WeightedGraph, k: int, c1: float = 4.0, c3: float = 1.0, seed: int = 0
) -> UltraResult:
    """Spanning tree plus at most 8k+1 reweighted edges approximating G.

    Tree inputs short-circuit to U = G. Otherwise kappa = c1 * st_T(G) / k,
    W = G / (c3 kappa), W_k = sparsify_patch(T, W, k, 8k+1), U = T + W_k.
    """
    if k < 1:
        raise PreconditionError(f"k must be at least 1, got {k}")
    if c1 <= 0 or c3 <= 0:
        raise PreconditionError(f"constants must be positive, got c1={c1}, c3={c3}")
    if not g.is_connected():
        raise DisconnectedError("ultrasparsifier needs a connected input graph")
    if g.n < 2:
        raise PreconditionError("need at least 2 vertices")

    if g.num_edges == g.n - 1:
        # G is already a tree: U = G and the sandwich is exactly 1.
        tree = SpanningTree.build(g.n, g.edges)
        report = tree_stretch(g, tree)
        trace, stretch = sw_trace_check(g, tree)
        vals = pencil_eigenvalues(laplacian(g), laplacian(g))
        return UltraResult(
            u=g,
            kappa_target=c1 * stretch / k,
            gen_lower=float(vals[0]),
            gen_upper=float(vals[-1]),
            kappa_measured=float(vals[-1]) / float(vals[0]),
            certified_lower=float(vals[0]),
            edge_count=g.num_edges,
            c1=c1,
            c3=c3,
            stretch=report,
            trace_residual=abs(trace - stretch),
            patch=None,
            patch_params=None,
            tree=tree,
        )

    tree = low_stretch_tree(g, seed)
    report = tree_stretch(g, tree)
    trace, stretch = sw_trace_check(g, tree)
    kappa_target = c1 * stretch / k
    scale = 1.0 / (c3 * kappa_target)
    t_graph = tree.graph()
    w = g.scale(scale)
    patch = sparsify_patch(t_graph, w, k, 8 * k + 1)
    u = t_graph.union(patch.wk)

    vals = pencil_eigenvalues(laplacian(g), laplacian(u))
    gen_lower, gen_upper = float(vals[0]), float(vals[-1])
    certified_lower = 1.0 / (patch.certified_upper * (1.0 + scale))
    if gen_lower < certified_lower - 1e-9:
        raise NumericalError(
            f"measured sandwich lower {gen_lower!r} fell below certified {certified_lower!r}"
        )
    return UltraResult(
        u=u,
        kappa_target=kappa_target,
        gen_lower=gen_lower,
        gen_upper=gen_upper,
        kappa_measured=gen_upper / gen_lower,
        certified_lower=certified_lower,
        edge_count=u.num_edges,
        c1=c1,
        c3=c3,
        stretch=report,
        trace_residual=abs(trace - stretch),
        patch=patch,
        patch_params=patch.params,
        tree=tree,
    )
