"""Weighted graphs and dense symmetric-matrix utilities.

Everything downstream works on dense numpy arrays at desk scale (n up to a
few hundred): Laplacians, eigendecompositions, pseudoinverses, subspace
restrictions, and generalized condition numbers of PSD pencils.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.csgraph

# Rank decisions: eigenvalues below REL_RANK_TOL * lambda_max count as zero.
REL_RANK_TOL = 1e-10
# Inputs claiming symmetry must satisfy it to this absolute tolerance.
SYMMETRY_TOL = 1e-12


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ToolkitError):
    """Malformed input file or value."""


class PreconditionError(ToolkitError):
    """An operation's documented precondition does not hold."""


class NumericalError(ToolkitError):
    """A numerical guarantee failed (barrier crossed, certificate violated, ...)."""


class BudgetTooSmallError(PreconditionError):
    """Update budget N must exceed 8k."""


class DisconnectedError(PreconditionError):
    """Operation requires a connected graph."""


class InvalidKError(PreconditionError):
    """Subspace size k is out of range for the instance."""


class IncompatibleImagesError(PreconditionError):
    """Two PSD matrices do not share the same image."""


class TooLargeError(PreconditionError):
    """Instance exceeds the documented enumeration budget."""


class BarrierViolationError(NumericalError):
    """An eigenvalue crossed a barrier it must stay clear of."""


class DegenerateGradientError(NumericalError):
    """Potential difference too small to normalize a gradient."""


class SingularUpdateError(NumericalError):
    """Rank-one inverse update has a vanishing denominator."""


class InfeasibleStepError(NumericalError):
    """No update index satisfies the selection inequality.

    Carries diagnostic state so failed runs can be analyzed.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose. Cheap re-symmetrization after updates."""
    return (a + a.T) / 2.0


def check_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Raise unless `a` is square and symmetric within absolute tolerance `tol`."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise PreconditionError(f"expected a square matrix, got shape {a.shape}")
    dev = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if dev > tol:
        raise PreconditionError(f"matrix not symmetric: max |A - A^T| = {dev:g} > {tol:g}")
    return a


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected weighted graph on vertices 0..n-1.

    Edges are stored canonically: u < v, sorted lexicographically, parallel
    input edges merged by weight addition. Self-loops and non-positive
    weights are rejected. Instances are immutable.
    """

    n: int
    edges: tuple  # tuple of (u, v, w) with u < v

    def __init__(self, n: int, edges):
        if n < 0:
            raise PreconditionError(f"vertex count must be nonnegative, got {n}")
        merged: dict[tuple[int, int], float] = {}
        for item in edges:
            u, v, w = item
            u, v = int(u), int(v)
            w = float(w)
            if not (0 <= u < n and 0 <= v < n):
                raise PreconditionError(f"edge ({u},{v}) out of range for n={n}")
            if u == v:
                raise PreconditionError(f"self-loop at vertex {u} rejected")
            if not (w > 0) or not math.isfinite(w):
                raise PreconditionError(f"edge ({u},{v}) needs a positive finite weight, got {w}")
            key = (u, v) if u < v else (v, u)
            merged[key] = merged.get(key, 0.0) + w
        canon = tuple((u, v, merged[(u, v)]) for (u, v) in sorted(merged))
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "edges", canon)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_pairs(self) -> set:
        return {(u, v) for u, v, _ in self.edges}

    def weight_sum(self) -> float:
        return float(sum(w for _, _, w in self.edges))

    def scale(self, c: float) -> "WeightedGraph":
        """Multiply every edge weight by c > 0."""
        if not (c > 0):
            raise PreconditionError(f"scale factor must be positive, got {c}")
        return WeightedGraph(self.n, [(u, v, c * w) for u, v, w in self.edges])

    def union(self, other: "WeightedGraph") -> "WeightedGraph":
        """Edge-wise sum of two graphs on the same vertex set."""
        if other.n != self.n:
            raise PreconditionError(f"vertex count mismatch: {self.n} vs {other.n}")
        return WeightedGraph(self.n, list(self.edges) + list(other.edges))

    def weighted_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n)
        for u, v, w in self.edges:
            deg[u] += w
            deg[v] += w
        return deg

    def adjacency(self) -> scipy.sparse.csr_matrix:
        if not self.edges:
            return scipy.sparse.csr_matrix((self.n, self.n))
        u = np.array([e[0] for e in self.edges])
        v = np.array([e[1] for e in self.edges])
        w = np.array([e[2] for e in self.edges])
        a = scipy.sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(self.n, self.n),
        )
        return a.tocsr()

    def component_labels(self) -> np.ndarray:
        """Connected-component label per vertex (deterministic scipy labeling)."""
        if self.n == 0:
            return np.zeros(0, dtype=int)
        _, labels = scipy.sparse.csgraph.connected_components(self.adjacency(), directed=False)
        return labels

    def is_connected(self) -> bool:
        return self.n <= 1 or int(self.component_labels().max()) == 0

    def subgraph(self, vertices) -> tuple["WeightedGraph", np.ndarray]:
        """Induced subgraph on `vertices` plus the old-id array (new -> old)."""
        old_ids = np.asarray(sorted(int(v) for v in vertices), dtype=int)
        pos = {int(o): i for i, o in enumerate(old_ids)}
        sub_edges = [
            (pos[u], pos[v], w) for u, v, w in self.edges if u in pos and v in pos
        ]
        return WeightedGraph(len(old_ids), sub_edges), old_ids


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues in ascending order with matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class Subspace:
    """A subspace given by an orthonormal basis matrix of shape (n, d)."""

    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    def projection(self) -> np.ndarray:
        """The orthogonal projection matrix P = Q Q^T."""
        return self.basis @ self.basis.T


def laplacian(g: WeightedGraph) -> np.ndarray:
    """Dense Laplacian: weighted degrees on the diagonal, -w off-diagonal."""
    lap = np.zeros((g.n, g.n))
    for u, v, w in g.edges:
        lap[u, u] += w
        lap[v, v] += w
        lap[u, v] -= w
        lap[v, u] -= w
    return lap


def incidence_vector(n: int, u: int, v: int) -> np.ndarray:
    """Signed edge-incidence vector e_u - e_v, so L_e = b b^T for a unit edge."""
    b = np.zeros(n)
    b[u] = 1.0
    b[v] = -1.0
    return b


def eigh(a: np.ndarray) -> SpectralDecomposition:
    """Full symmetric eigendecomposition, eigenvalues ascending."""
    a = check_symmetric(a)
    if a.shape[0] == 0:
        return SpectralDecomposition(np.zeros(0), np.zeros((0, 0)))
    try:
        vals, vecs = scipy.linalg.eigh(a)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"symmetric eigensolver failed to converge: {exc}") from exc
    return SpectralDecomposition(vals, vecs)


def eigvalsh(a: np.ndarray) -> np.ndarray:
    """Eigenvalues only, ascending."""
    a = check_symmetric(a)
    if a.shape[0] == 0:
        return np.zeros(0)
    try:
        return scipy.linalg.eigvalsh(a)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError(f"symmetric eigensolver failed to converge: {exc}") from exc


def _rank_split(dec: SpectralDecomposition, rel_tol: float) -> np.ndarray:
    """Boolean mask of eigenvalues treated as nonzero."""
    vals = dec.eigenvalues
    if vals.size == 0:
        return np.zeros(0, dtype=bool)
    lam_max = float(np.max(np.abs(vals)))
    return np.abs(vals) > rel_tol * max(lam_max, 1e-300)


def pseudoinverse(a: np.ndarray, rel_tol: float = REL_RANK_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix.

    Eigenvalues below rel_tol * lambda_max are treated as exact zeros.
    """
    dec = eigh(a)
    keep = _rank_split(dec, rel_tol)
    inv = np.where(keep, 1.0 / np.where(keep, dec.eigenvalues, 1.0), 0.0)
    return symmetrize((dec.eigenvectors * inv) @ dec.eigenvectors.T)


def pinv_sqrt(a: np.ndarray, rel_tol: float = REL_RANK_TOL) -> np.ndarray:
    """Symmetric PSD square root of the pseudoinverse, (A^+)^(1/2)."""
    dec = eigh(a)
    keep = _rank_split(dec, rel_tol)
    vals = np.where(keep, dec.eigenvalues, 1.0)
    inv_rt = np.where(keep, 1.0 / np.sqrt(np.abs(vals)), 0.0)
    return symmetrize((dec.eigenvectors * inv_rt) @ dec.eigenvectors.T)


def matrix_image(a: np.ndarray, rel_tol: float = REL_RANK_TOL) -> Subspace:
    """Orthonormal basis of the image (column space) of a symmetric matrix."""
    dec = eigh(a)
    keep = _rank_split(dec, rel_tol)
    return Subspace(dec.eigenvectors[:, keep])


def sm_pinv_update(adag: np.ndarray, p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rank-one pseudoinverse update (A + P v v^T P)^+ from A^+.

    `adag` is the pseudoinverse of a symmetric A and `p` projects onto im(A);
    the update direction is projected into the image, and the result is
    A^+ - (A^+ v v^T A^+) / (1 + v^T A^+ v).
    """
    adag = check_symmetric(adag)
    v = np.asarray(v, dtype=float)
    av = adag @ v
    denom = 1.0 + float(v @ av)
    if abs(denom) <= 1e-12:
        raise SingularUpdateError(f"update denominator 1 + A^+ . vv^T = {denom:g} is numerically zero")
    return symmetrize(adag - np.outer(av, av) / denom)


def restrict(a: np.ndarray, s: Subspace) -> np.ndarray:
    """The d x d restriction Q^T A Q of a symmetric matrix to a subspace."""
    a = check_symmetric(a)
    q = s.basis
    return symmetrize(q.T @ a @ q)


def pencil_eigenvalues(a: np.ndarray, b: np.ndarray, rel_tol: float = REL_RANK_TOL) -> np.ndarray:
    """Generalized eigenvalues of the PSD pencil (A, B) on the image of B.

    Returns the ascending eigenvalues of (B^+)^(1/2) A (B^+)^(1/2) restricted
    to im(B); these are the stationary values of x^T A x / x^T B x over
    x in im(B).
    """
    a = check_symmetric(a)
    b = check_symmetric(b)
    f = pinv_sqrt(b, rel_tol)
    img = matrix_image(b, rel_tol)
    return eigvalsh(restrict(f @ a @ f, img))


def relative_condition_number(a: np.ndarray, b: np.ndarray, rel_tol: float = REL_RANK_TOL) -> float:
    """max x^T A x / x^T B x times max x^T B x / x^T A x over the shared image.

    Preconditions: A, B PSD with im(A) = im(B), checked via rank equality and
    projection alignment within 1e-8.
    """
    a = check_symmetric(a)
    b = check_symmetric(b)
    img_a = matrix_image(a, rel_tol)
    img_b = matrix_image(b, rel_tol)
    if img_a.dim != img_b.dim:
        raise IncompatibleImagesError(
            f"rank mismatch: rank(A) = {img_a.dim}, rank(B) = {img_b.dim}"
        )
    align = float(np.max(np.abs(img_a.projection() - img_b.projection()))) if img_a.dim else 0.0
    if align > 1e-8:
        raise IncompatibleImagesError(f"images differ: max |P_A - P_B| = {align:g} > 1e-8")
    if img_b.dim == 0:
        return 1.0
    vals = pencil_eigenvalues(a, b, rel_tol)
    lam_min, lam_max = float(vals[0]), float(vals[-1])
    if lam_min <= 0:
        raise NumericalError(f"pencil eigenvalue {lam_min:g} <= 0 despite matching images")
    return lam_max / lam_min
