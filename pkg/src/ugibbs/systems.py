"""Analytic diffeomorphisms of the flat torus T^d with exact derivatives.

Every map works on lifted coordinates in R^d and commutes with integer
translations, so it descends to T^d. Lifted coordinates are used for all
local geometry; reduction mod 1 happens only when a `TorusPoint` is built.

Maps are vectorized: ``forward(X)`` takes an array of shape (..., d) and
``jacobian(X)`` returns shape (..., d, d).

The zoo is addressed by string ids::

    identity2, identity3, identity4
    cat2, cat3, cat4                       linear hyperbolic automorphisms
    cat2_perturbed:eps=0.1                 A x + eps * s(x)
    product:cat2,cat2                      block products (no nesting)
    skew:ns,cat2_path[:a=0.5,eps=0.1]      north-south circle map x fiber path
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * np.pi
FD_STEP = 1e-5
PROBE_DENSITY = 32

ArrayMap = Callable[[np.ndarray], np.ndarray]

CAT_MATRICES = {
    "cat2": np.array([[2.0, 1.0], [1.0, 1.0]]),
    "cat3": np.array([[2.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]]),
    "cat4": np.kron(np.eye(2), np.array([[2.0, 1.0], [1.0, 1.0]])),
}

ZOO = (
    "identity2",
    "cat2",
    "cat2_perturbed:eps=0.1",
    "cat3",
    "product:cat2,cat2",
    "product:cat2,identity2",
    "skew:ns,cat2_path",
)


@dataclass(frozen=True)
class TorusPoint:
    """A point of T^d, coordinates reduced to [0, 1)."""

    coords: tuple

    def __post_init__(self):
        c = np.mod(np.asarray(self.coords, dtype=float), 1.0)
        # mod can return exactly 1.0 for tiny negative inputs
        c[c >= 1.0] = 0.0
        if c.ndim != 1 or c.size not in (2, 3, 4):
            raise ValueError(f"TorusPoint needs 2 to 4 coordinates, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("TorusPoint coordinates must be finite")
        object.__setattr__(self, "coords", tuple(float(v) for v in c))

    @property
    def d(self) -> int:
        return len(self.coords)

    def array(self) -> np.ndarray:
        return np.array(self.coords)


@dataclass(frozen=True)
class Jacobian:
    """The derivative d_x f^n at base point x."""

    matrix: np.ndarray
    base: TorusPoint
    n: int


@dataclass(frozen=True)
class SmoothSystem:
    """A diffeomorphism of T^d given by vectorized rules on lifted coordinates."""

    d: int
    name: str
    forward: ArrayMap
    inverse: ArrayMap
    jacobian: ArrayMap
    r: int = 3
    # set for linear automorphisms; enables exact shortcuts
    matrix: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def is_linear(self) -> bool:
        return self.matrix is not None

    def inverse_jacobian(self, X: np.ndarray) -> np.ndarray:
        """Jacobian of f^{-1} at X, i.e. (d_{f^{-1}X} f)^{-1}."""
        if self.matrix is not None:
            Ainv = np.linalg.inv(self.matrix)
            return np.broadcast_to(Ainv, np.shape(X)[:-1] + (self.d, self.d)).copy()
        return np.linalg.inv(self.jacobian(self.inverse(X)))


def _as_points(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != d:
        raise ValueError(f"expected trailing dimension {d}, got {X.shape}")
    return X


def linear_system(A, name: str) -> SmoothSystem:
    A = np.array(A, dtype=float)
    d = A.shape[0]
    if A.shape != (d, d) or not np.array_equal(A, np.round(A)):
        raise ValueError("a toral automorphism needs a square integer matrix")
    if abs(abs(np.linalg.det(A)) - 1.0) > 1e-9:
        raise ValueError("a toral automorphism needs |det| = 1")
    Ainv = np.round(np.linalg.inv(A))

    def fwd(X):
        return _as_points(X, d) @ A.T

    def inv(X):
        return _as_points(X, d) @ Ainv.T

    def jac(X):
        X = _as_points(X, d)
        return np.broadcast_to(A, X.shape[:-1] + (d, d)).copy()

    return SmoothSystem(d=d, name=name, forward=fwd, inverse=inv, jacobian=jac, r=8, matrix=A)


def identity_system(d: int = 2) -> SmoothSystem:
    return linear_system(np.eye(d), f"identity{d}")


def _newton_inverse(fwd: ArrayMap, jac: ArrayMap, Y: np.ndarray, X0: np.ndarray,
                    tol: float = 1e-15, max_iter: int = 50) -> np.ndarray:
    X = X0.copy()
    for _ in range(max_iter):
        R = fwd(X) - Y
        step = np.linalg.solve(jac(X), R[..., None])[..., 0]
        X = X - step
        if np.max(np.abs(step), initial=0.0) <= tol * (1.0 + np.max(np.abs(X), initial=0.0)):
            break
    return X


def perturbed_system(A, eps: float, name: str) -> SmoothSystem:
    """f(x) = A x + eps * s(x) with s_i(x) = sin(2 pi x_i) / (2 pi).

    ``||ds|| = 1`` so the map is a diffeomorphism whenever eps < 1/||A^{-1}||.
    """
    A = np.array(A, dtype=float)
    d = A.shape[0]
    bound = 1.0 / np.linalg.norm(np.linalg.inv(A), 2)
    # grid estimate of ||ds|| is exactly 1 (attained at x = 0)
    if not eps * 1.0 < bound:
        raise ValueError(f"eps={eps} breaks invertibility: need eps*||ds|| < {bound:.6f}")
    Ainv = np.linalg.inv(A)

    def fwd(X):
        X = _as_points(X, d)
        return X @ A.T + eps * np.sin(TWO_PI * X) / TWO_PI

    def jac(X):
        X = _as_points(X, d)
        J = np.broadcast_to(A, X.shape[:-1] + (d, d)).copy()
        idx = np.arange(d)
        J[..., idx, idx] += eps * np.cos(TWO_PI * X)
        return J

    def inv(Y):
        Y = _as_points(Y, d)
        return _newton_inverse(fwd, jac, Y, Y @ Ainv.T)

    return SmoothSystem(d=d, name=name, forward=fwd, inverse=inv, jacobian=jac, r=8)


def product_system(a: SmoothSystem, b: SmoothSystem) -> SmoothSystem:
    da, db = a.d, b.d
    d = da + db

    def fwd(X):
        X = _as_points(X, d)
        return np.concatenate([a.forward(X[..., :da]), b.forward(X[..., da:])], axis=-1)

    def inv(X):
        X = _as_points(X, d)
        return np.concatenate([a.inverse(X[..., :da]), b.inverse(X[..., da:])], axis=-1)

    def jac(X):
        X = _as_points(X, d)
        J = np.zeros(X.shape[:-1] + (d, d))
        J[..., :da, :da] = a.jacobian(X[..., :da])
        J[..., da:, da:] = b.jacobian(X[..., da:])
        return J

    matrix = None
    if a.is_linear and b.is_linear:
        matrix = np.zeros((d, d))
        matrix[:da, :da] = a.matrix
        matrix[da:, da:] = b.matrix
    return SmoothSystem(d=d, name=f"product:{a.name},{b.name}", forward=fwd, inverse=inv,
                        jacobian=jac, r=min(a.r, b.r), matrix=matrix)


def skew_system(a: float = 0.5, eps: float = 0.1) -> SmoothSystem:
    """F(t, x) = (g(t), f_t(x)) on S^1 x T^2.

    g(t) = t + a sin(2 pi t) / (2 pi) has a repeller at 0 and an attractor at 1/2.
    f_t(x) = A x + c(t) s(x) interpolates from the cat map (t = 0) to its
    eps-perturbation (t = 1/2) with c(t) = eps (1 - cos 2 pi t) / 2.
    """
    if not 0.0 < a < 1.0:
        raise ValueError("north-south parameter a must lie in (0, 1)")
    A = CAT_MATRICES["cat2"]
    if not eps < 1.0 / np.linalg.norm(np.linalg.inv(A), 2):
        raise ValueError(f"eps={eps} breaks fiber invertibility")
    Ainv = np.linalg.inv(A)

    def c(t):
        return eps * (1.0 - np.cos(TWO_PI * t)) / 2.0

    def dc(t):
        return eps * np.pi * np.sin(TWO_PI * t)

    def g(t):
        return t + a * np.sin(TWO_PI * t) / TWO_PI

    def fwd(X):
        X = _as_points(X, 3)
        t, x = X[..., 0], X[..., 1:]
        fx = x @ A.T + c(t)[..., None] * np.sin(TWO_PI * x) / TWO_PI
        return np.concatenate([g(t)[..., None], fx], axis=-1)

    def jac(X):
        X = _as_points(X, 3)
        t, x = X[..., 0], X[..., 1:]
        J = np.zeros(X.shape[:-1] + (3, 3))
        J[..., 0, 0] = 1.0 + a * np.cos(TWO_PI * t)
        J[..., 1:, 0] = dc(t)[..., None] * np.sin(TWO_PI * x) / TWO_PI
        J[..., 1:, 1:] = A
        J[..., 1, 1] += c(t) * np.cos(TWO_PI * x[..., 0])
        J[..., 2, 2] += c(t) * np.cos(TWO_PI * x[..., 1])
        return J

    def inv(Y):
        Y = _as_points(Y, 3)
        s = Y[..., :1]
        t = _newton_inverse(lambda T: g(T), lambda T: (1.0 + a * np.cos(TWO_PI * T))[..., None],
                            s, s)
        ct = c(t)

        def fib(x):
            return x @ A.T + ct * np.sin(TWO_PI * x) / TWO_PI

        def fib_jac(x):
            J = np.broadcast_to(A, x.shape[:-1] + (2, 2)).copy()
            J[..., 0, 0] += ct[..., 0] * np.cos(TWO_PI * x[..., 0])
            J[..., 1, 1] += ct[..., 0] * np.cos(TWO_PI * x[..., 1])
            return J

        yx = Y[..., 1:]
        x = _newton_inverse(fib, fib_jac, yx, yx @ Ainv.T)
        return np.concatenate([t, x], axis=-1)

    return SmoothSystem(d=3, name=f"skew:ns,cat2_path:a={a},eps={eps}", forward=fwd,
                        inverse=inv, jacobian=jac, r=8)


def _parse_kv(text: str) -> dict:
    out = {}
    for item in filter(None, text.split(",")):
        key, _, value = item.partition("=")
        if not _:
            raise ValueError(f"expected key=value, got {item!r}")
        out[key.strip()] = float(value)
    return out


def make_system(spec: str) -> SmoothSystem:
    """Build a zoo system from its string id."""
    spec = spec.strip()
    if spec.startswith("identity"):
        d = int(spec[len("identity"):] or 2)
        return identity_system(d)
    if spec in CAT_MATRICES:
        return linear_system(CAT_MATRICES[spec], spec)
    if spec.startswith("product:"):
        parts = spec[len("product:"):].split(",")
        if len(parts) != 2:
            raise ValueError(f"product needs two components: {spec!r}")
        return product_system(make_system(parts[0]), make_system(parts[1]))
    if spec.startswith("skew:"):
        body = spec[len("skew:"):]
        head, _, extra = body.partition(":")
        if head.replace(" ", "") != "ns,cat2_path":
            raise ValueError(f"unknown skew product {head!r}")
        return skew_system(**_parse_kv(extra))
    name, _, extra = spec.partition(":")
    if name.endswith("_perturbed") and name[: -len("_perturbed")] in CAT_MATRICES:
        kv = _parse_kv(extra)
        eps = kv.pop("eps", 0.1)
        if kv:
            raise ValueError(f"unknown parameters {sorted(kv)} for {name}")
        return perturbed_system(CAT_MATRICES[name[: -len("_perturbed")]], eps, spec)
    raise ValueError(f"unknown system id {spec!r}")


def apply_orbit(system: SmoothSystem, x: TorusPoint, n: int) -> list:
    """Orbit x, f x, ..., f^n x as torus points."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    pts = [x]
    y = x.array()
    for _ in range(n):
        y = np.mod(system.forward(y), 1.0)
        pts.append(TorusPoint(tuple(y)))
        y = np.array(pts[-1].coords)
    return pts


def orbit_array(system: SmoothSystem, X: np.ndarray, n: int, inverse: bool = False) -> np.ndarray:
    """Lifted-free orbit of a batch of points, shape (n+1, ..., d), reduced mod 1."""
    step = system.inverse if inverse else system.forward
    X = np.mod(np.asarray(X, dtype=float), 1.0)
    out = np.empty((n + 1,) + X.shape)
    out[0] = X
    for i in range(n):
        X = np.mod(step(X), 1.0)
        out[i + 1] = X
    return out


def jacobian_cocycle(system: SmoothSystem, x: TorusPoint, n: int) -> Jacobian:
    """d_x f^n as the ordered chain-rule product; negative n uses f^{-1}."""
    d = system.d
    if system.is_linear:
        A = system.matrix if n >= 0 else np.round(np.linalg.inv(system.matrix))
        return Jacobian(np.linalg.matrix_power(A, abs(n)), x, n)
    M = np.eye(d)
    y = x.array()
    if n >= 0:
        for _ in range(n):
            M = system.jacobian(y) @ M
            y = np.mod(system.forward(y), 1.0)
    else:
        for _ in range(-n):
            M = system.inverse_jacobian(y) @ M
            y = np.mod(system.inverse(y), 1.0)
    return Jacobian(M, x, n)


def batch_cocycle(system: SmoothSystem, X: np.ndarray, n: int) -> np.ndarray:
    """d f^n at every point of a batch; n may be negative."""
    X = np.mod(np.asarray(X, dtype=float), 1.0)
    M = np.broadcast_to(np.eye(system.d), X.shape[:-1] + (system.d, system.d)).copy()
    if system.is_linear:
        A = system.matrix if n >= 0 else np.round(np.linalg.inv(system.matrix))
        return M @ np.linalg.matrix_power(A, abs(n))
    for _ in range(abs(n)):
        if n >= 0:
            M = system.jacobian(X) @ M
            X = np.mod(system.forward(X), 1.0)
        else:
            M = system.inverse_jacobian(X) @ M
            X = np.mod(system.inverse(X), 1.0)
    return M


def probe_grid(d: int, density: int) -> np.ndarray:
    """Regular grid of density^d points of [0,1)^d, shape (density^d, d)."""
    axis = np.arange(density) / density
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _nested_density(grid_density: int) -> int:
    # powers of two give nested grids, so the sup estimate is monotone in density
    return 1 << int(np.ceil(np.log2(grid_density)))


def derivative_bound(system: SmoothSystem, n: int, grid_density: int = PROBE_DENSITY) -> float:
    """Grid estimate of max(||d f^n||, ||d f^{-n}||) over T^d."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if grid_density < 8:
        raise ValueError("grid_density must be >= 8")
    if system.is_linear:
        A = system.matrix
        Ainv = np.round(np.linalg.inv(A))
        return float(max(np.linalg.norm(np.linalg.matrix_power(A, n), 2),
                         np.linalg.norm(np.linalg.matrix_power(Ainv, n), 2)))
    X = probe_grid(system.d, _nested_density(grid_density))
    fwd = np.linalg.norm(batch_cocycle(system, X, n), 2, axis=(-2, -1))
    bwd = np.linalg.norm(batch_cocycle(system, X, -n), 2, axis=(-2, -1))
    return float(max(fwd.max(), bwd.max()))


def r_growth(system: SmoothSystem, n_max: int = 16, grid_density: int = PROBE_DENSITY) -> float:
    """(1/n) log M_{f^n} at n = n_max, a finite-horizon upper proxy for R(f)."""
    if n_max < 4:
        raise ValueError("n_max must be >= 4")
    return float(np.log(derivative_bound(system, n_max, grid_density)) / n_max)


def validate_system(system: SmoothSystem, density: int = PROBE_DENSITY) -> dict:
    """Check exact Jacobians against central differences and f o f^{-1} = id.

    Returns the worst relative Jacobian error and worst round-trip error.
    """
    X = probe_grid(system.d, density)
    J = system.jacobian(X)
    fd = np.empty_like(J)
    for j in range(system.d):
        e = np.zeros(system.d)
        e[j] = FD_STEP
        fd[..., :, j] = (system.forward(X + e) - system.forward(X - e)) / (2 * FD_STEP)
    scale = np.maximum(np.linalg.norm(J, 2, axis=(-2, -1)), 1e-300)
    jac_err = float(np.max(np.linalg.norm(J - fd, 2, axis=(-2, -1)) / scale))
    back = system.forward(system.inverse(X))
    roundtrip = float(np.max(np.abs(back - X)))
    return {"jacobian_rel_error": jac_err, "roundtrip_error": roundtrip}
