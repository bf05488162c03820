"""Embedded k-disks, bounded-geometry certificates and the colored subdivision tree.

A `Chart` is the map  t -> g^n(sigma(theta(t)))  on [0,1]^k, where g = f^p,
sigma is the root embedding and theta the affine map onto a dyadic cell of the
root parameter cube. Cells are stored exactly as (depth, integer index).

Deep charts cannot be evaluated from the root in floating point: a dyadic
cell at depth 60 is below double resolution, and g^n amplifies rounding by
e^{n p chi}. Each chart therefore carries its own tensor Chebyshev
interpolant in lifted coordinates, refitted from its parent at every level
(children are  g o parent o phi  with phi the dyadic sub-box map). For
linear systems with affine or quadratic roots the interpolant is exact.

Subdivision is certified dyadic bisection: a candidate sub-box is accepted
once the pushed chart restricted to it passes `certify_chart`; every
accepted box is at least one bisection deep, so every chain map contracts
by 1/2.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import combinations_with_replacement, product as iproduct
from typing import Optional

import numpy as np
from numpy.polynomial import chebyshev as C

from .exterior import wedge_norms, wedge_vector, wedge_volume
from .systems import SmoothSystem, TorusPoint, batch_cocycle

RED, BLUE = "red", "blue"
SNAP = 1e-9


class GeometryBlowup(RuntimeError):
    """Bisection hit the depth cap without certifying a sub-box."""


# ---------------------------------------------------------------- base disks


@dataclass(frozen=True)
class BaseEmbedding:
    """sigma(t) = origin + sum_a (t_a - 1/2) frame[a] + curvature |t - 1/2|^2 normal."""

    origin: np.ndarray
    frame: np.ndarray  # (k, d)
    curvature: float = 0.0
    normal: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.frame.shape[0]

    @property
    def d(self) -> int:
        return self.frame.shape[1]

    @property
    def is_affine(self) -> bool:
        return self.curvature == 0.0

    def eval(self, T: np.ndarray):
        T = np.atleast_2d(np.asarray(T, dtype=float)) - 0.5
        vals = self.origin + T @ self.frame
        jac = np.broadcast_to(self.frame.T, T.shape[:1] + self.frame.T.shape).copy()
        if self.curvature:
            vals = vals + self.curvature * np.sum(T * T, axis=1)[:, None] * self.normal
            jac = jac + 2.0 * self.curvature * self.normal[None, :, None] * T[:, None, :]
        return vals, jac


def affine_disk(base_point, frame, side: float) -> BaseEmbedding:
    """Flat k-disk of the given side length centered at base_point, spanned by frame."""
    F = np.atleast_2d(np.asarray(frame, dtype=float))
    Q, _ = np.linalg.qr(F.T)
    # keep the orientation of the given frame
    Q = Q * np.sign(np.sum(Q * F.T, axis=0))
    return BaseEmbedding(np.asarray(base_point, dtype=float), side * Q.T)


def quadratic_disk(base_point, frame, side: float, curvature: float, normal) -> BaseEmbedding:
    flat = affine_disk(base_point, frame, side)
    nu = np.asarray(normal, dtype=float)
    nu = nu / np.linalg.norm(nu)
    return BaseEmbedding(flat.origin, flat.frame, float(curvature), nu)


def unstable_frame(system: SmoothSystem, y, k: int, m: int = 20) -> np.ndarray:
    """Rows spanning the k most expanded directions at y (left singular vectors
    of d f^m at f^{-m} y); exact eigendirections for symmetric linear maps."""
    y = np.asarray(y, dtype=float)
    if system.is_linear:
        w, V = np.linalg.eig(system.matrix)
        order = np.argsort(-np.abs(w))[:k]
        Q, _ = np.linalg.qr(np.real(V[:, order]))
        return Q.T
    z = y
    for _ in range(m):
        z = system.inverse(z)
    U, _, _ = np.linalg.svd(batch_cocycle(system, z, m))
    return U[:, :k].T


# ---------------------------------------------------------------- Chebyshev


class ChebBasis:
    """Tensor Chebyshev interpolation on [0,1]^k."""

    def __init__(self, deg: int, k: int):
        self.deg, self.k = deg, k
        n = deg + 1
        u = np.cos(np.pi * (np.arange(n) + 0.5) / n)[::-1]
        self.nodes = (u + 1.0) / 2.0
        self.Vinv = np.linalg.inv(C.chebvander(u, deg))
        D = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            dc = C.chebder(e)
            D[: dc.size, j] = dc
        self.D = 2.0 * D  # d/dt = 2 d/du

    def node_grid(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.nodes] * self.k), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def fit(self, values: np.ndarray) -> np.ndarray:
        """values shape (M, n^k, d) in 'ij' node order -> coefficients (M, n, ..., n, d)."""
        M, d = values.shape[0], values.shape[-1]
        n = self.deg + 1
        c = values.reshape((M,) + (n,) * self.k + (d,))
        for a in range(self.k):
            c = np.moveaxis(np.tensordot(self.Vinv, c, axes=([1], [1 + a])), 0, 1 + a)
        return c

    def eval(self, coeffs: np.ndarray, T: np.ndarray):
        """Values (N, d) and Jacobians (N, d, k) of one coefficient tensor at T (N, k)."""
        T = np.atleast_2d(T)
        V = [C.chebvander(2.0 * T[:, a] - 1.0, self.deg) for a in range(self.k)]
        dV = [v @ self.D for v in V]
        vals = _contract(V, coeffs)
        cols = []
        for a in range(self.k):
            cols.append(_contract([dV[b] if b == a else V[b] for b in range(self.k)], coeffs))
        return vals, np.stack(cols, axis=-1)


def _contract(mats, coeffs):
    """sum_{i_1..i_k} prod_a mats[a][:, i_a] coeffs[i_1, .., i_k, :] for each row."""
    N, n = mats[0].shape
    R = mats[0] @ coeffs.reshape(n, -1)
    for M in mats[1:]:
        R = np.einsum("ni,nir->nr", M, R.reshape(N, n, -1))
    return R


# ---------------------------------------------------------------- cells


@dataclass(frozen=True, order=True)
class Cell:
    """Dyadic cube prod_a [index_a, index_a + 1] / 2^depth of the root parameter cube."""

    depth: int
    index: tuple

    def corner(self) -> np.ndarray:
        return np.array([i / (1 << self.depth) for i in self.index])

    @property
    def side(self) -> float:
        return math.ldexp(1.0, -self.depth)

    def child(self, j: int, offset) -> "Cell":
        return Cell(self.depth + j, tuple((i << j) + o for i, o in zip(self.index, offset)))

    def contains(self, other: "Cell") -> bool:
        if other.depth < self.depth:
            return False
        shift = other.depth - self.depth
        return all((o >> shift) == i for o, i in zip(other.index, self.index))

    def relative(self, inner: "Cell"):
        """(offset, scale) with inner = offset + scale * [0,1]^k in this cell's coordinates."""
        shift = inner.depth - self.depth
        scale = math.ldexp(1.0, -shift)
        offset = np.array([(o - (i << shift)) / (1 << shift) for o, i in zip(inner.index, self.index)])
        return offset, scale

    def volume(self) -> Fraction:
        return Fraction(1, 1 << (self.depth * len(self.index)))

    def locate(self, t: np.ndarray) -> tuple:
        """Index at this depth of the cell holding root parameter t.

        Points on a shared face go to the cell with the smaller corner.
        """
        # exact: floats are dyadic rationals, and deep cells overflow int64
        scale = 1 << self.depth
        return tuple(max(math.ceil(Fraction(float(v)) * scale) - 1, 0) for v in np.ravel(t))


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class TreeConfig:
    eps: float = 0.05
    p: int = 3
    r: int = 3
    grid: int = 17
    degree: int = 8
    max_depth: int = 12
    family_cap: int = 64
    max_nodes: int = 400_000
    safety: float = 0.9
    quad: int = 6


class _Context:
    """Shared, immutable data of one tree: system, config and sampling grids."""

    def __init__(self, system: SmoothSystem, root: BaseEmbedding, config: TreeConfig):
        if root.d != system.d:
            raise ValueError("disk and system dimensions differ")
        if config.grid < 4:
            raise ValueError("grid too coarse: need at least 4 points per axis")
        if config.r < 2:
            raise ValueError("r must be >= 2")
        self.system, self.root, self.config = system, root, config
        self.k, self.d = root.k, root.d
        if system.is_linear:
            deg = 1 if root.is_affine else 2
            self.gmat = np.linalg.matrix_power(system.matrix, config.p)
        else:
            deg = config.degree
            self.gmat = None
        self.basis = ChebBasis(deg, self.k)
        G = config.grid
        axis = np.linspace(0.0, 1.0, G)
        mesh = np.meshgrid(*([axis] * self.k), indexing="ij")
        self.grid = np.stack([m.ravel() for m in mesh], axis=-1)
        self.h = 1.0 / (G - 1)
        gx, gw = np.polynomial.legendre.leggauss(config.quad)
        gx, gw = (gx + 1.0) / 2.0, gw / 2.0
        mesh = np.meshgrid(*([gx] * self.k), indexing="ij")
        wmesh = np.meshgrid(*([gw] * self.k), indexing="ij")
        self.gauss = np.stack([m.ravel() for m in mesh], axis=-1)
        self.gauss_w = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)

    def push(self, X: np.ndarray, V: np.ndarray):
        """Apply g = f^p to points X (..., d) and tangent columns V (..., d, k)."""
        if self.gmat is not None:
            return X @ self.gmat.T, self.gmat @ V
        s = self.system
        for _ in range(self.config.p):
            V = s.jacobian(X) @ V
            X = s.forward(X)
        return X, V

    def dg(self, X: np.ndarray) -> np.ndarray:
        if self.gmat is not None:
            return np.broadcast_to(self.gmat, X.shape[:-1] + self.gmat.shape).copy()
        M = np.broadcast_to(np.eye(self.d), X.shape[:-1] + (self.d, self.d)).copy()
        s = self.system
        for _ in range(self.config.p):
            M = s.jacobian(X) @ M
            X = s.forward(X)
        return M


# ---------------------------------------------------------------- charts


class Chart:
    """One chart g^level o sigma o theta_cell, with a local interpolant."""

    __slots__ = ("ctx", "cell", "level", "coeffs", "parent", "node_id", "color",
                 "_grid", "__dict__")

    def __init__(self, ctx: _Context, cell: Cell, level: int, coeffs: np.ndarray,
                 parent: Optional["Chart"] = None, grid=None):
        self.ctx, self.cell, self.level, self.coeffs, self.parent = ctx, cell, level, coeffs, parent
        self.node_id = None
        self.color = None
        self._grid = grid

    @property
    def key(self) -> tuple:
        return (self.level, self.cell.depth, self.cell.index)

    @property
    def k(self) -> int:
        return self.ctx.k

    def eval(self, T):
        return self.ctx.basis.eval(self.coeffs, np.atleast_2d(np.asarray(T, dtype=float)))

    @property
    def grid(self):
        """(values (G^k, d), jacobians (G^k, d, k)) on the uniform sample grid."""
        if self._grid is None:
            self._grid = self.eval(self.ctx.grid)
        return self._grid

    def center(self):
        return self.eval(np.full((1, self.k), 0.5))

    @cached_property
    def volume(self) -> float:
        _, jac = self.eval(self.ctx.gauss)
        return float(np.dot(self.ctx.gauss_w, wedge_volume(jac)))

    def ancestor(self, level: int) -> "Chart":
        if not 0 <= level <= self.level:
            raise ValueError(f"no ancestor at level {level}")
        c = self
        while c.level > level:
            c = c.parent
        return c

    def chain(self) -> list:
        """Ancestors from the root down to this chart."""
        out = [self]
        while out[-1].parent is not None:
            out.append(out[-1].parent)
        return out[::-1]

    def image_of_subbox(self, inner: Cell, T: Optional[np.ndarray] = None):
        """Image points of the sub-box `inner` of this chart's cell."""
        offset, scale = self.cell.relative(inner)
        T = self.ctx.grid if T is None else T
        return self.eval(offset + scale * T)

    @cached_property
    def point_profiles(self):
        """Integer profile pairs (l, l') at every grid point."""
        vals, jac = self.grid
        return _profiles(self.ctx, vals, jac)

    @cached_property
    def hyp_floor(self) -> int:
        """min over the grid of l - l', a lower bound valid for every point of the chart."""
        l, lp = self.point_profiles
        return int(np.min(l - lp))


def _snap_floor(v):
    return np.floor(np.asarray(v) + SNAP).astype(np.int64)


def _snap_ceil(v):
    return np.ceil(np.asarray(v) - SNAP).astype(np.int64)


def _profiles(ctx: _Context, X: np.ndarray, jac: np.ndarray):
    """(floor log |wedge^k dg (w)|, ceil log+ max_{k'<k} ||wedge^k' dg||) per point."""
    Q, _ = np.linalg.qr(jac)
    Dg = ctx.dg(X)
    l = _snap_floor(np.log(wedge_volume(Dg @ Q)))
    if ctx.k == 1:
        lp = np.zeros_like(l)
    else:
        norms = wedge_norms(Dg)[..., : ctx.k - 1]
        lp = _snap_ceil(np.maximum(np.log(np.max(norms, axis=-1)), 0.0))
    return l, lp


# ---------------------------------------------------------------- certification


@dataclass(frozen=True)
class BoundedCoupleReport:
    seminorms: tuple  # ||d^s (t -> wedge^k d sigma)||, s = 1..r-1
    sup_wedge: float
    inf_wedge: float
    norm_r: float
    bounded: bool
    strong: bool


def _multiplicity(beta) -> int:
    counts = np.bincount(beta)
    out = math.factorial(len(beta))
    for c in counts:
        out //= math.factorial(int(c))
    return out


def _certify_arrays(jac: np.ndarray, k: int, G: int, h: float, eps: float, r: int,
                    safety: float):
    """Vectorized certificate for a batch of sampled charts.

    jac has shape (M, G^k, d, k). Derivatives of order s are estimated by s-th
    divided differences along the grid axes; the norm of an s-tensor is the
    Hilbert-Schmidt norm over ordered index tuples, which dominates the
    operator norm.
    """
    M, d = jac.shape[0], jac.shape[2]
    shape = (M,) + (G,) * k
    J = jac.reshape(shape + (d, k))
    W = wedge_vector(J)
    absW = np.linalg.norm(W, axis=-1)
    red_axes = tuple(range(1, k + 1))
    sup_w = absW.max(axis=red_axes)
    inf_w = absW.min(axis=red_axes)
    semis = []
    for s in range(1, r):
        total = np.zeros(M)
        for beta in combinations_with_replacement(range(k), s):
            D = W
            for a in beta:
                D = np.diff(D, axis=1 + a) / h
            mx = np.linalg.norm(D, axis=-1).reshape(M, -1).max(axis=1)
            total += _multiplicity(beta) * mx * mx
        semis.append(np.sqrt(total))
    if k == 1:
        lip = np.linalg.norm(J[..., 0], axis=-1)
    else:
        lip = np.linalg.norm(J, 2, axis=(-2, -1))
    norms = [lip.reshape(M, -1).max(axis=1)]
    for s in range(2, r + 1):
        best = np.zeros(M)
        for alpha in combinations_with_replacement(range(k), s - 1):
            D = J
            for a in alpha:
                D = np.diff(D, axis=1 + a) / h
            best = np.maximum(best, np.sqrt(np.sum(D * D, axis=(-2, -1))).reshape(M, -1).max(axis=1))
        norms.append(best)
    norm_r = np.max(np.stack(norms), axis=0)
    semis_arr = np.stack(semis) if semis else np.zeros((0, M))
    bounded = np.all(semis_arr <= safety * sup_w / (10.0 * k), axis=0)
    strong = norm_r <= safety * eps / math.sqrt(k)
    return semis_arr, sup_w, inf_w, norm_r, bounded, strong


def certify_chart(chart: Chart, eps: float, r: Optional[int] = None) -> BoundedCoupleReport:
    """Bounded-couple and strong eps-bound flags from the chart's sample grid."""
    ctx = chart.ctx
    r = ctx.config.r if r is None else r
    if r < 2:
        raise ValueError("r must be >= 2")
    G = ctx.config.grid
    _, jac = chart.grid
    semis, sup_w, inf_w, norm_r, bounded, strong = _certify_arrays(
        jac[None], ctx.k, G, ctx.h, eps, r, ctx.config.safety)
    return BoundedCoupleReport(tuple(float(s[0]) for s in semis), float(sup_w[0]),
                               float(inf_w[0]), float(norm_r[0]), bool(bounded[0]),
                               bool(strong[0]))


def root_chart(system: SmoothSystem, disk: BaseEmbedding, config: TreeConfig) -> Chart:
    ctx = _Context(system, disk, config)
    vals, _ = disk.eval(ctx.basis.node_grid())
    coeffs = ctx.basis.fit(vals[None])[0]
    return Chart(ctx, Cell(0, (0,) * disk.k), 0, coeffs)


# ---------------------------------------------------------------- subdivision


@dataclass
class Subdivision:
    red_families: list
    blue: list
    counts: dict = field(default_factory=dict)


def _offsets(j: int, k: int) -> np.ndarray:
    return np.array(list(iproduct(range(1 << j), repeat=k)), dtype=np.int64).reshape(-1, k)


def _pushed_samples(ctx: _Context, chart: Chart, boxes_lo: np.ndarray, scale: float, T: np.ndarray):
    """Images and Jacobians of g o chart on the sub-boxes lo + scale*[0,1]^k at T."""
    S = boxes_lo[:, None, :] + scale * T[None, :, :]
    vals, jac = chart.eval(S.reshape(-1, ctx.k))
    X, V = ctx.push(vals, jac)
    return X.reshape(S.shape[:2] + (ctx.d,)), V.reshape(S.shape[:2] + (ctx.d, ctx.k)) * scale


def _boundary_params(k: int, m: int) -> np.ndarray:
    if k == 1:
        return np.array([[0.0], [1.0]])
    axis = np.linspace(0.0, 1.0, m)
    pts = []
    for a in range(k):
        for side in (0.0, 1.0):
            mesh = np.meshgrid(*([axis] * (k - 1)), indexing="ij")
            rest = np.stack([g.ravel() for g in mesh], axis=-1)
            pts.append(np.insert(rest, a, side, axis=1))
    return np.unique(np.concatenate(pts), axis=0)


def subdivide_step(system: SmoothSystem, chart: Chart, eps: Optional[float] = None) -> Subdivision:
    """Push a chart through g and split it into certified children.

    Children are dyadic sub-boxes (at least one bisection deep) on which g o chart
    is strongly eps-bounded and a bounded couple. A child is blue when its image
    comes within 2 eps of the image of the parent's boundary, red otherwise; red
    children within eps of a family witness are grouped into one family.
    """
    ctx = chart.ctx
    if system is not ctx.system:
        raise ValueError("chart was built for a different system")
    cfg = ctx.config
    eps = cfg.eps if eps is None else eps
    k, G = ctx.k, cfg.grid
    accepted = []  # (j, offsets, values, jacobians)
    pending = _offsets(1, k)
    j = 1
    while pending.size:
        if j > cfg.max_depth:
            bad = chart.cell.child(j - 1, tuple(int(v) for v in pending[0] >> 1))
            raise GeometryBlowup(f"geometry blowup: no certificate within {cfg.max_depth} "
                                 f"bisections below cell depth={bad.depth} index={bad.index}")
        scale = math.ldexp(1.0, -j)
        X, V = _pushed_samples(ctx, chart, pending * scale, scale, ctx.grid)
        _, _, _, _, bounded, strong = _certify_arrays(V, k, G, ctx.h, eps, cfg.r, cfg.safety)
        ok = bounded & strong
        if ok.any():
            accepted.append((j, pending[ok], X[ok], V[ok]))
        fail = pending[~ok]
        pending = (fail[:, None, :] * 2 + _offsets(1, k)[None]).reshape(-1, k)
        j += 1

    # boundary of the pushed parent, sampled at least as finely as the finest child grid
    m = min(257, (G - 1) * (1 << (j - 1)) + 1)
    B, _ = _pushed_samples(ctx, chart, np.zeros((1, k)), 1.0, _boundary_params(k, m))
    B = B[0]

    children = []
    nodes_T = ctx.basis.node_grid()
    for jj, offs, X, V in accepted:
        scale = math.ldexp(1.0, -jj)
        NX, _ = _pushed_samples(ctx, chart, offs * scale, scale, nodes_T)
        coeffs = ctx.basis.fit(NX)
        centers = X[:, X.shape[1] // 2, :]
        for i, off in enumerate(offs):
            dist = np.min(np.linalg.norm(X[i][:, None, :] - B[None, :, :], axis=-1))
            shift = np.floor(centers[i])
            c = coeffs[i].copy()
            c[(0,) * k] -= shift
            child = Chart(ctx, chart.cell.child(jj, tuple(int(v) for v in off)), chart.level + 1,
                          c, parent=chart, grid=(X[i] - shift, V[i]))
            child.color = BLUE if dist < 2.0 * eps else RED
            children.append((tuple((off * scale).tolist()), centers[i], child))
    children.sort(key=lambda t: t[0])

    families, blue, overflow = [], [], 0
    witness = None
    for _, center, child in children:
        if child.color == BLUE:
            blue.append(child)
            continue
        fits = (witness is not None and np.linalg.norm(center - witness) <= eps)
        if fits and len(families[-1]) >= cfg.family_cap:
            overflow += 1
            fits = False
        if fits:
            families[-1].append(child)
        else:
            families.append([child])
            witness = center
    counts = {
        "red": sum(len(f) for f in families),
        "blue": len(blue),
        "families": len(families),
        "family_overflow": overflow,
        "max_bisection": max(a[0] for a in accepted),
    }
    return Subdivision(families, blue, counts)


# ---------------------------------------------------------------- tree


@dataclass
class TreeNode:
    id: tuple
    level: int
    color: str
    charts: list
    parent: Optional[tuple]
    profile: tuple

    @property
    def name(self) -> str:
        return ".".join(map(str, self.id)) or "root"


class Tree:
    """Colored subdivision tree. Charts are expanded on demand and memoized;
    `grow_tree` expands every chart level by level."""

    def __init__(self, system: SmoothSystem, disk: BaseEmbedding, config: TreeConfig,
                 check_root: bool = True):
        self.system, self.config = system, config
        self.root = root_chart(system, disk, config)
        if check_root:
            rep = certify_chart(self.root, config.eps)
            if not (rep.bounded and rep.strong):
                raise ValueError(f"root disk is not certified strongly eps-bounded: {rep}")
        self.root.color = RED
        node = TreeNode((), 0, RED, [self.root], None, self._profile(self.root))
        self.root.node_id = node.id
        self.nodes = {node.id: node}
        self.levels = [[node.id]]
        self._children = {}
        self.truncated = False
        self.stats = []

    @property
    def ctx(self) -> _Context:
        return self.root.ctx

    @property
    def k(self) -> int:
        return self.ctx.k

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def _profile(self, chart: Chart) -> tuple:
        vals, jac = chart.center()
        l, lp = _profiles(self.ctx, vals, jac)
        return int(l[0]), int(lp[0])

    def node(self, chart: Chart) -> TreeNode:
        return self.nodes[chart.node_id]

    def expand(self, chart: Chart) -> list:
        """Children of a chart (memoized), creating their tree nodes."""
        hit = self._children.get(chart.key)
        if hit is not None:
            return hit
        sub = subdivide_step(self.system, chart, self.config.eps)
        parent = self.nodes[chart.node_id]
        slot = parent.charts.index(chart)
        groups = [(f[0].cell, RED, f) for f in sub.red_families] + \
                 [(b.cell, BLUE, [b]) for b in sub.blue]
        groups.sort(key=lambda g: tuple(g[0].corner()))
        kids = []
        for i, (_, color, charts) in enumerate(groups):
            nid = parent.id + ((slot, i),)
            node = TreeNode(nid, chart.level + 1, color, charts, parent.id, self._profile(charts[0]))
            for c in charts:
                c.node_id = nid
                c.color = color
            self.nodes[nid] = node
            while len(self.levels) <= node.level:
                self.levels.append([])
            self.levels[node.level].append(nid)
            kids.extend(charts)
        kids.sort(key=lambda c: tuple(c.cell.corner()))
        self._children[chart.key] = kids
        self.stats.append(sub.counts)
        return kids

    def charts_at(self, level: int) -> list:
        return [c for nid in self.levels[level] for c in self.nodes[nid].charts]

    def path(self, t, n: int) -> list:
        """Charts containing root parameter t at levels 0..n, expanding lazily."""
        t = np.asarray(t, dtype=float)
        out = [self.root]
        for _ in range(n):
            kids = self.expand(out[-1])
            out.append(_locate(kids, t))
        return out


def _locate(charts, t) -> Chart:
    for c in charts:
        if c.cell.locate(t) == c.cell.index:
            return c
    raise ValueError(f"parameter {t} not covered by the given charts")


def grow_tree(system: SmoothSystem, disk: BaseEmbedding, eps: float, n: int,
              config: Optional[TreeConfig] = None, **overrides) -> Tree:
    """Expand every chart for n levels. Stops early with `truncated=True` when
    the node count would exceed config.max_nodes."""
    base = config or TreeConfig()
    cfg = TreeConfig(**{**base.__dict__, "eps": eps, **overrides})
    tree = Tree(system, disk, cfg)
    for level in range(n):
        frontier = tree.charts_at(level)
        for chart in frontier:
            tree.expand(chart)
            if len(tree.nodes) > cfg.max_nodes:
                tree.truncated = True
                break
        if tree.truncated:
            # drop the partial level so every stored level is complete
            for nid in tree.levels[level + 1]:
                del tree.nodes[nid]
            tree.levels = tree.levels[: level + 1]
            tree._children = {key: v for key, v in tree._children.items() if key[0] < level}
            break
    return tree


def disk_parameter(tree: Tree, x: TorusPoint, tol: float = 1e-8) -> np.ndarray:
    """Root parameter of a torus point lying on the root disk."""
    disk = tree.ctx.root
    y = x.array()
    t = np.full(disk.k, 0.5)
    for _ in range(50):
        v, J = disk.eval(t[None])
        r = v[0] - y
        r -= np.round(r)
        step = np.linalg.lstsq(J[0], r, rcond=None)[0]
        t = t - step
        if np.max(np.abs(step)) < 1e-15:
            break
    v, _ = disk.eval(t[None])
    resid = v[0] - y
    resid -= np.round(resid)
    if np.linalg.norm(resid) > tol or np.any(t < -tol) or np.any(t > 1 + tol):
        raise ValueError("point is not on the root disk")
    return np.clip(t, 0.0, 1.0)


def atom_of(tree: Tree, x, level: int) -> Chart:
    """The level-`level` chart whose cell contains x (root parameter or TorusPoint)."""
    if level < 0:
        raise ValueError("level must be nonnegative")
    t = disk_parameter(tree, x) if isinstance(x, TorusPoint) else np.asarray(x, dtype=float)
    if t.shape != (tree.k,) or np.any(t < 0) or np.any(t > 1):
        raise ValueError("parameter outside the disk")
    return tree.path(t, level)[-1]


def hyp_profile(tree: Tree, leaf: Chart) -> list:
    """Profile pairs (l_i, l'_i) of the nodes along the path to `leaf`, i < leaf.level."""
    return [tree.node(c).profile for c in leaf.chain()[:-1]]


# ---------------------------------------------------------------- geometry gates


def distortion(chart: Chart) -> float:
    """max / min of |wedge^k d chart| over the grid."""
    w = wedge_volume(chart.grid[1])
    return float(w.max() / w.min())


def tangent_oscillation(chart: Chart) -> float:
    """Largest Cayley angle between tangent planes at two grid points."""
    z = wedge_vector(chart.grid[1])
    z = z / np.linalg.norm(z, axis=-1, keepdims=True)
    cos = np.clip(z @ z.T, -1.0, 1.0)
    return float(np.arccos(cos.min()))


def atom_diameters(tree: Tree, leaf: Chart) -> np.ndarray:
    """Image diameter of the leaf's preimage chart at every level 0..leaf.level."""
    out = []
    for anc in leaf.chain():
        pts, _ = anc.image_of_subbox(leaf.cell)
        diff = pts[:, None, :] - pts[None, :, :]
        out.append(np.sqrt(np.max(np.sum(diff * diff, axis=-1))))
    return np.array(out)


def diameter_check(tree: Tree, level: Optional[int] = None) -> dict:
    """Worst ratio diam / (eps 2^{l-n}) over all atoms at `level` and all l <= level."""
    n = tree.depth if level is None else level
    eps = tree.config.eps
    worst, count = 0.0, 0
    bound = eps * np.exp2(np.arange(n + 1) - n)
    for leaf in tree.charts_at(n):
        ratio = atom_diameters(tree, leaf) / bound
        worst = max(worst, float(ratio.max()))
        count += 1
    return {"atoms": count, "worst_ratio": worst, "passed": worst <= 1.0 + 1e-3}


def tiling_check(tree: Tree, level: int) -> bool:
    """Cells at `level` partition [0,1]^k: dyadic volumes sum to 1 and no cell nests in another."""
    cells = [c.cell for c in tree.charts_at(level)]
    if sum((c.volume() for c in cells), Fraction(0)) != 1:
        return False
    seen = set(cells)
    if len(seen) != len(cells):
        return False
    for c in cells:
        for up in range(1, c.depth + 1):
            anc = Cell(c.depth - up, tuple(i >> up for i in c.index))
            if anc in seen:
                return False
    return True


def direct_image_volume(tree: Tree, level: int, panels: int = 4096) -> float:
    """Volume of g^level(sigma([0,1]^k)) by composite Gauss-Legendre on the root."""
    ctx = tree.ctx
    k = ctx.k
    per_axis = max(1, int(round(panels ** (1.0 / k))))
    edges = np.arange(per_axis) / per_axis
    mesh = np.meshgrid(*([edges] * k), indexing="ij")
    lows = np.stack([m.ravel() for m in mesh], axis=-1)
    T = (lows[:, None, :] + ctx.gauss[None] / per_axis).reshape(-1, k)
    w = np.tile(ctx.gauss_w, lows.shape[0]) / per_axis ** k
    X, V = ctx.root.eval(T)
    for _ in range(level):
        X, V = ctx.push(X, V)
    return float(np.dot(w, wedge_volume(V)))


def volume_check(tree: Tree, level: Optional[int] = None, panels: int = 4096) -> dict:
    n = tree.depth if level is None else level
    leaves = math.fsum(c.volume for c in tree.charts_at(n))
    direct = direct_image_volume(tree, n, panels)
    rel = abs(leaves - direct) / direct
    return {"leaf_sum": leaves, "direct": direct, "relative_error": rel}


def profile_stability(tree: Tree) -> dict:
    """Largest deviation of point profiles from the node witness profile, over all families."""
    worst_l = worst_lp = 0
    for node in tree.nodes.values():
        l0, lp0 = node.profile
        for c in node.charts:
            l, lp = c.point_profiles
            worst_l = max(worst_l, int(np.max(np.abs(l - l0))))
            worst_lp = max(worst_lp, int(np.max(np.abs(lp - lp0))))
    return {"max_dev_l": worst_l, "max_dev_lp": worst_lp, "passed": max(worst_l, worst_lp) <= 1}


def level_counts(tree: Tree) -> list:
    out = []
    for level, ids in enumerate(tree.levels):
        nodes = [tree.nodes[i] for i in ids]
        out.append({
            "level": level,
            "nodes": len(nodes),
            "charts": sum(len(nd.charts) for nd in nodes),
            "red": sum(nd.color == RED for nd in nodes),
            "blue": sum(nd.color == BLUE for nd in nodes),
        })
    return out


def _higher_derivative_norm(dg, Y: np.ndarray, order: int, h: float = 1e-3) -> np.ndarray:
    """Hilbert-Schmidt size of d^order g at Y from central differences of dg."""
    d = Y.shape[-1]
    if order == 1:
        D = dg(Y)
        return np.sqrt(np.sum(D * D, axis=(-2, -1)))
    total = np.zeros(Y.shape[:-1])
    for axes in iproduct(range(d), repeat=order - 1):
        acc = 0.0
        for signs in iproduct((1.0, -1.0), repeat=order - 1):
            shift = sum(sg * h * np.eye(d)[a] for sg, a in zip(signs, axes))
            acc = acc + np.prod(signs) * dg(Y + shift)
        acc = acc / (2 * h) ** (order - 1)
        total += np.sum(acc * acc, axis=(-2, -1))
    return np.sqrt(total)


def estimate_eps0(system: SmoothSystem, p: int = 1, r: int = 3, density: int = 8,
                  fallback: float = 0.05) -> float:
    """Largest eps = 0.25 * 2^-j with (2 eps)^s ||d^s g|| <= 3 eps ||d_x g|| for
    s = 1..r at probe points x, the left side taken at x and at the 2 eps
    axis offsets of x. Returns `fallback` when no eps in the sweep passes."""
    from .systems import probe_grid

    X = probe_grid(system.d, density)

    def dg(Y):
        M = np.broadcast_to(np.eye(system.d), Y.shape[:-1] + (system.d,) * 2).copy()
        for _ in range(p):
            M = system.jacobian(Y) @ M
            Y = system.forward(Y)
        return M

    base = np.linalg.norm(dg(X), 2, axis=(-2, -1))
    offsets = np.vstack([np.zeros(system.d), np.eye(system.d), -np.eye(system.d)])
    for j in range(12):
        eps = 0.25 * 2.0 ** -j
        ok = True
        for u in offsets:
            Y = X + 2 * eps * u
            if np.any(2 * eps * np.linalg.norm(dg(Y), 2, axis=(-2, -1)) > 3 * eps * base):
                ok = False
            for s in range(2, r + 1):
                if not ok:
                    break
                if np.any((2 * eps) ** s * _higher_derivative_norm(dg, Y, s) > 3 * eps * base):
                    ok = False
            if not ok:
                break
        if ok:
            return eps
    return fallback


# ---------------------------------------------------------------- persistence


def grid_digest(chart: Chart) -> str:
    vals, _ = chart.grid
    return hashlib.sha256(np.ascontiguousarray(vals, dtype="<f8").tobytes()).hexdigest()[:16]


def write_snapshot(tree: Tree, path) -> None:
    """One JSON object per node, in level order."""
    with open(path, "w") as fh:
        for level in tree.levels:
            for nid in level:
                nd = tree.nodes[nid]
                rec = {
                    "id": nd.name,
                    "parent": None if nd.parent is None else (".".join(map(str, nd.parent)) or "root"),
                    "level": nd.level,
                    "color": nd.color,
                    "cells": [[c.cell.depth, list(c.cell.index)] for c in nd.charts],
                    "profile": list(nd.profile),
                    "grid_digest": [grid_digest(c) for c in nd.charts],
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_snapshot(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
