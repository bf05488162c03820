"""Exterior powers in small dimension: compound matrices, wedge norms,
Plücker coordinates, principal angles and covering numbers.

Minors are indexed by k-subsets of {0..d-1} in lexicographic order, the order
produced by ``itertools.combinations(range(d), k)``. Serialized compound
matrices are row-major in that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

GRAM_TOL = 1e-12


class NotApplicable(ValueError):
    """Raised when a lemma's hypothesis is not met by the inputs."""


@lru_cache(maxsize=None)
def subsets(d: int, k: int) -> tuple:
    return tuple(combinations(range(d), k))


@dataclass(frozen=True)
class ExteriorMatrix:
    k: int
    d: int
    entries: np.ndarray

    @property
    def index(self) -> tuple:
        return subsets(self.d, self.k)


@dataclass(frozen=True)
class KFrame:
    """k vectors of R^d stored as the rows of a (k, d) array."""

    vectors: np.ndarray

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if V.shape[0] > V.shape[1]:
            raise ValueError(f"a frame holds at most d vectors, got shape {V.shape}")
        if np.linalg.det(V @ V.T) <= GRAM_TOL:
            raise ValueError("degenerate frame: Gram determinant <= 1e-12")
        object.__setattr__(self, "vectors", V)


@dataclass(frozen=True)
class Subspace:
    """A k-plane of R^d with orthonormal basis rows."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if np.max(np.abs(B @ B.T - np.eye(B.shape[0]))) > 1e-10:
            raise ValueError("basis rows must be orthonormal")
        object.__setattr__(self, "basis", B)

    @classmethod
    def span(cls, vectors) -> "Subspace":
        V = np.atleast_2d(np.asarray(vectors, dtype=float))
        Q, _ = np.linalg.qr(V.T)
        return cls(Q.T)

    @property
    def projector(self) -> np.ndarray:
        return self.basis.T @ self.basis


def compound_stack(A: np.ndarray, k: int) -> np.ndarray:
    """Batched compound matrices: A has shape (..., d, d) (or (..., d, m) for
    rectangular maps); returns shape (..., C(d,k), C(m,k))."""
    A = np.asarray(A, dtype=float)
    d, m = A.shape[-2], A.shape[-1]
    if not 1 <= k <= min(d, m):
        raise ValueError(f"k={k} outside [1, {min(d, m)}]")
    if k == 1:
        return A.copy()
    rows = np.array(subsets(d, k))
    cols = np.array(subsets(m, k))
    sub = A[..., rows[:, None, :, None], cols[None, :, None, :]]
    return np.linalg.det(sub)


def compound_matrix(A, k: int) -> ExteriorMatrix:
    """The matrix of k x k minors representing the k-th exterior power of A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("compound_matrix expects a square matrix")
    return ExteriorMatrix(k=k, d=A.shape[0], entries=compound_stack(A, k))


def wedge_norms(A: np.ndarray) -> np.ndarray:
    """All exterior norms at once: out[..., j-1] = ||wedge^j A|| for j=1..d."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return np.cumprod(s, axis=-1)


def wedge_norm(A, k: int) -> float:
    """||wedge^k A||: product of the k largest singular values."""
    A = np.asarray(A, dtype=float)
    if not 1 <= k <= A.shape[-1]:
        raise ValueError(f"k={k} outside [1, {A.shape[-1]}]")
    return wedge_norms(A)[..., k - 1]


def wedge_vector(M: np.ndarray) -> np.ndarray:
    """Minor coordinates of the columns of M (shape (..., d, k)) wedged together."""
    M = np.asarray(M, dtype=float)
    d, k = M.shape[-2], M.shape[-1]
    if k == 1:
        return M[..., 0].copy()
    rows = np.array(subsets(d, k))
    return np.linalg.det(M[..., rows, :])


def wedge_volume(M: np.ndarray) -> np.ndarray:
    """|m_1 ^ ... ^ m_k| for the columns of M, via sqrt of the Gram determinant."""
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 1:
        return np.linalg.norm(M[..., 0], axis=-1)
    G = np.swapaxes(M, -1, -2) @ M
    return np.sqrt(np.maximum(np.linalg.det(G), 0.0))


def _fix_sign(z: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(z) > 1e-14)
    if nz.size and z[nz[0]] < 0:
        return -z
    return z


def plucker_embed(frame) -> np.ndarray:
    """Unit Plücker vector of the plane spanned by a frame, first nonzero entry positive."""
    if not isinstance(frame, KFrame):
        frame = KFrame(frame)
    z = wedge_vector(frame.vectors.T)
    return _fix_sign(z / np.linalg.norm(z))


@dataclass(frozen=True)
class AngleReport:
    stationary: np.ndarray  # ascending
    cayley: float
    maxmin: float


def subspace_angles(F: Subspace, G: Subspace) -> AngleReport:
    if F.basis.shape != G.basis.shape:
        raise ValueError("subspaces must have equal dimension")
    cos = np.clip(np.linalg.svd(F.basis @ G.basis.T, compute_uv=False), 0.0, 1.0)
    # arccos is ill-conditioned near 0; small angles come from the sines of
    # the component of G orthogonal to F
    perp = G.basis - (G.basis @ F.basis.T) @ F.basis
    sin = np.clip(np.sort(np.linalg.svd(perp, compute_uv=False)), 0.0, 1.0)
    by_cos = np.sort(np.arccos(cos))
    by_sin = np.arcsin(sin)
    theta = np.where(by_sin < np.pi / 4, by_sin, by_cos)
    # cos(cayley) = prod cos; 1 - prod cos^2 = -expm1(sum log1p(-sin^2))
    s2 = np.sin(theta) ** 2
    if np.any(s2 >= 1.0):
        one_minus = 1.0
    else:
        one_minus = -math.expm1(math.fsum(np.log1p(-s2).tolist()))
    cayley = math.atan2(math.sqrt(max(one_minus, 0.0)), float(np.prod(np.cos(theta))))
    return AngleReport(stationary=theta, cayley=cayley, maxmin=float(theta[-1]))


def projector_distance(F: Subspace, G: Subspace) -> float:
    return float(np.linalg.norm(F.projector - G.projector, 2))


@dataclass(frozen=True)
class AngleBound:
    satisfied: bool
    bound: float
    measured: float
    K: float


def angle_bound_value(K: float) -> float:
    return float(np.arccos(1.0 - K * K / (2.0 * (1.0 - K))))


def angle_bound_from_wedge(A, B, K: float) -> AngleBound:
    """Cayley-distance bound for the images of two k-column maps whose wedges
    differ by at most K relative to ||wedge^k A||, valid for K <= 1/2."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError("A and B must have the same shape")
    if K > 0.5:
        raise NotApplicable(f"K={K} exceeds 1/2")
    za, zb = wedge_vector(A), wedge_vector(B)
    na = np.linalg.norm(za)
    measured_K = np.linalg.norm(za - zb) / na
    if measured_K > K * (1.0 + 1e-12):
        raise NotApplicable(f"measured relative wedge gap {measured_K:.3e} exceeds K={K}")
    cos = float(np.dot(za, zb) / (na * np.linalg.norm(zb)))
    measured = float(np.arccos(np.clip(cos, -1.0, 1.0)))
    bound = angle_bound_value(K)
    return AngleBound(satisfied=measured <= bound + 1e-12, bound=bound, measured=measured,
                      K=float(measured_K))


def covering_number(points, R: float) -> int:
    """Greedy upper estimate of the number of radius-R balls covering a point set.

    Farthest-point traversal from the first point: the answer is the shortest
    prefix of the traversal whose covering radius is <= R. The traversal does
    not depend on R, so the count is monotone nonincreasing in R.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] == 0:
        return 0
    dist = np.linalg.norm(P - P[0], axis=1)
    count = 1
    while True:
        far = int(np.argmax(dist))
        if dist[far] <= R:
            return count
        dist = np.minimum(dist, np.linalg.norm(P - P[far], axis=1))
        count += 1
