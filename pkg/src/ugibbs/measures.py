"""Hyperbolic and BG times, the selected set E_n, the measured-disk families
p_n^M with their projections mu_n^M, backward-Jacobian conditional densities
and the density-comparison and entropy diagnostics.

Volumes `lambda` are k-volumes on the root disk. Atoms are tree charts; a
level-l atom P stands for its preimage g^{-l} P, i.e. the root-parameter cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .disktree import RED, Chart, Tree, TreeConfig
from .exterior import wedge_norms, wedge_volume
from .systems import SmoothSystem, orbit_array

UNIT_BALL = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}


# ---------------------------------------------------------------- hyperbolic times


@dataclass(frozen=True)
class HypSequence:
    """Profile pairs (l_i, l'_i), i = 0..n-1."""

    pairs: tuple
    chi_hat: float = 0.0
    chi_hat_prime: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))

    @classmethod
    def from_values(cls, values, chi_hat=0.0, chi_hat_prime=0.0) -> "HypSequence":
        """Sequence whose differences l_i - l'_i are the given integers."""
        return cls(tuple((int(v), 0) for v in values), chi_hat, chi_hat_prime)

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def gaps(self) -> list:
        return [a - b for a, b in self.pairs]


def _gaps(seq) -> list:
    return seq.gaps if isinstance(seq, HypSequence) else [int(v) for v in seq]


def hyperbolic_times(seq, chi_hat: float) -> set:
    """Indices l in [0, n] with sum_{i<=j<l} a_j >= (l - i) chi_hat for all i <= l.

    Writing S_l = sum_{j<l} a_j - l chi_hat, l is hyperbolic iff S_l is a
    (weak) running maximum, so one pass suffices. Exact rational arithmetic.
    """
    c = Fraction(chi_hat)
    out = {0}
    S = best = Fraction(0)
    for ell, a in enumerate(_gaps(seq), start=1):
        S += a - c
        if S >= best:
            out.add(ell)
            best = S
    return out


@dataclass(frozen=True)
class PlissReport:
    hypothesis_met: bool
    density: float
    bound: float
    satisfied: bool
    slack: float


def pliss_bound_check(seq, chi_hat: float, chi_hat_prime: float) -> PlissReport:
    """Density of hyperbolic times in [1, n] against (chi' - chi) / (A - chi)."""
    a = _gaps(seq)
    n = len(a)
    if n == 0 or not chi_hat < chi_hat_prime or Fraction(sum(a)) < n * Fraction(chi_hat_prime):
        return PlissReport(False, float("nan"), float("nan"), False, float("nan"))
    A = max(a)
    hyp = hyperbolic_times(a, chi_hat)
    density = Fraction(len(hyp - {0}), n)
    bound = (Fraction(chi_hat_prime) - Fraction(chi_hat)) / (A - Fraction(chi_hat))
    return PlissReport(True, float(density), float(bound), density >= bound, float(density - bound))


# ---------------------------------------------------------------- expansion certificate


@dataclass(frozen=True)
class ExpansionReport:
    hyperbolic: tuple
    checks: int
    violations: int
    min_slack: float  # min over checks of log co-norm - (l - i) chi_hat


def _conorm_logs(ctx, X, V, steps: int) -> np.ndarray:
    """log of the smallest expansion of dg^steps on the planes spanned by V (batched)."""
    Q, _ = np.linalg.qr(V)
    for _ in range(steps):
        X, Q = ctx.push(X, Q)
    s = np.linalg.svd(Q, compute_uv=False)
    return np.log(s[..., -1])


def expansion_at_hyp_times(system: SmoothSystem, tree: Tree, leaf: Chart, chi_hat: float,
                           tol: float = 1e-6) -> ExpansionReport:
    """At each hyperbolic time l of the leaf's profile and each i < l, check
    |dg^{l-i} v| >= e^{(l-i) chi_hat} |v| for tangent vectors at the grid points
    of the level-i preimage of the leaf."""
    if system is not tree.system:
        raise ValueError("tree was built for a different system")
    chain = leaf.chain()
    prof = [tree.node(c).profile for c in chain[:-1]]
    hyp = sorted(h for h in hyperbolic_times(HypSequence(prof), chi_hat) if h > 0)
    ctx = tree.ctx
    checks = violations = 0
    min_slack = math.inf
    for i in range(leaf.level):
        if not any(h > i for h in hyp):
            continue
        X, V = chain[i].image_of_subbox(leaf.cell)
        Q, _ = np.linalg.qr(V)
        step = 0
        for ell in hyp:
            if ell <= i:
                continue
            while step < ell - i:
                X, Q = ctx.push(X, Q)
                step += 1
            conorm = np.log(np.linalg.svd(Q, compute_uv=False)[..., -1])
            slack = conorm - (ell - i) * chi_hat
            checks += slack.size
            violations += int(np.sum(np.exp(slack) < 1.0 - tol))
            min_slack = min(min_slack, float(slack.min()))
    return ExpansionReport(tuple(hyp), checks, violations, min_slack)


# ---------------------------------------------------------------- E_n selection


def block_growth(system: SmoothSystem, X: np.ndarray, V: np.ndarray, p: int) -> np.ndarray:
    """log |A_{k,p}^p(x, iota(V))| for batched points X (N, d) and frames V (N, d, k)."""
    k = V.shape[-1]
    W = V
    Y = X
    logden = np.zeros(X.shape[0])
    for _ in range(p):
        if k > 1:
            M = np.broadcast_to(np.eye(system.d), Y.shape[:-1] + (system.d, system.d)).copy()
            Z = Y
            for _ in range(p):
                M = system.jacobian(Z) @ M
                Z = system.forward(Z)
            lower = np.max(wedge_norms(M)[..., : k - 1], axis=-1)
            logden += np.maximum(np.log(lower), 0.0) / p
        W = system.jacobian(Y) @ W
        Y = system.forward(Y)
    return np.log(wedge_volume(W) / wedge_volume(V)) - logden


def unit_ball_volume(k: int) -> float:
    return UNIT_BALL.get(k, math.pi ** (k / 2) / math.gamma(k / 2 + 1))


def volume_cap(config: TreeConfig, k: int, beta: float) -> float:
    """beta C_d^{-1} eps^k / (400 A) with C_d = max(1, 1/omega_k) and A the family cap."""
    C_d = max(1.0, 1.0 / unit_ball_volume(k))
    return beta * config.eps ** k / (C_d * 400.0 * config.family_cap)


def root_volume(tree: Tree, chart: Chart) -> float:
    """lambda of the chart's preimage on the root disk."""
    ctx = tree.ctx
    lo, side = chart.cell.corner(), chart.cell.side
    _, jac = ctx.root.eval(lo + side * ctx.gauss)
    return float(np.dot(ctx.gauss_w, wedge_volume(jac))) * side ** ctx.k


@dataclass
class PathRecord:
    chart: Chart  # level-n atom
    volume: float
    growth: float  # log |A^{np}_{k,p}| at the atom center
    bg: frozenset
    selected: bool

    @property
    def bg_density(self) -> float:
        return len(self.bg) / self.chart.level


@dataclass
class Selection:
    n: int
    p: int
    chi: float
    chi_prime: float
    beta: float
    records: list
    message: str = ""
    histogram: dict = field(default_factory=dict)

    @property
    def selected(self) -> list:
        return [r for r in self.records if r.selected]

    @property
    def empty(self) -> bool:
        return not self.selected

    @property
    def volume(self) -> float:
        return math.fsum(r.volume for r in self.selected)

    @property
    def total_volume(self) -> float:
        return math.fsum(r.volume for r in self.records)

    @property
    def coverage(self) -> float:
        return self.volume / self.total_volume


def path_record(tree: Tree, chain: list, chi: float, chi_prime: float, beta: float) -> PathRecord:
    """Growth, BG times and selection status of the atom at the end of `chain`."""
    cfg = tree.config
    n = len(chain) - 1
    leaf = chain[-1]
    growth = 0.0
    for c in chain[:-1]:
        offset, scale = c.cell.relative(leaf.cell)
        X, V = c.eval(offset + 0.5 * scale)
        growth += float(block_growth(tree.system, X, V, cfg.p)[0])
    cap = volume_cap(cfg, tree.k, beta)
    # per-chart grid minima of l - l' bound the profile of every point of the atom
    hyp = hyperbolic_times([c.hyp_floor for c in chain[:-1]], cfg.p * chi)
    bg = frozenset(ell for ell in range(n)
                   if chain[ell].color == RED and ell in hyp and chain[ell].volume > cap)
    selected = growth >= n * cfg.p * chi_prime and len(bg) >= beta * n
    return PathRecord(leaf, root_volume(tree, leaf), growth, bg, selected)


def select_E_n(system: SmoothSystem, tree: Tree, chi_prime: float, beta: float, n: int,
               chi: Optional[float] = None) -> Selection:
    """Level-n atoms with cocycle growth >= e^{n p chi'} and BG density >= beta.

    BG times are red levels above the volume cap that are (p chi)-hyperbolic
    for every point of the atom; chi defaults to chi'/2.
    """
    if system is not tree.system:
        raise ValueError("tree was built for a different system")
    if tree.depth < n:
        raise ValueError(f"tree depth {tree.depth} < n = {n}")
    chi = chi_prime / 2.0 if chi is None else chi
    records = [path_record(tree, leaf.chain(), chi, chi_prime, beta) for leaf in tree.charts_at(n)]
    hist = {}
    for r in records:
        key = round(r.bg_density, 6)
        hist[key] = hist.get(key, 0) + 1
    sel = Selection(n, tree.config.p, chi, chi_prime, beta, records, histogram=dict(sorted(hist.items())))
    if sel.empty:
        sel.message = "no E_n at these parameters"
    return sel


# ---------------------------------------------------------------- p_n^M and mu_n^M


@dataclass(frozen=True)
class MeasuredDisk:
    """A chart with a discrete sub-probability on its parameter cube."""

    chart: Chart
    params: np.ndarray  # (m, k) points of [0,1]^k
    weights: np.ndarray  # (m,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or not 0 < w.sum() <= 1 + 1e-12:
            raise ValueError("weights must be nonnegative with sum in (0, 1]")


@dataclass
class DiskFamilyMeasure:
    atoms: list  # (MeasuredDisk, mass, level)
    n: int
    M: int
    beta: float
    p: int

    @property
    def mass(self) -> float:
        return math.fsum(m for _, m, _ in self.atoms)


def bg_M(selection: Selection, M: int) -> dict:
    """BG_n^M(x) for every selected atom x: levels l < n such that some selected
    y in the same level-l atom has a BG time in [l, l + M]."""
    sel = selection.selected
    n = selection.n
    groups = {}
    for idx, r in enumerate(sel):
        chain = r.chart.chain()
        for ell in range(n):
            groups.setdefault((ell, chain[ell].key), []).append(idx)
    out = {idx: set() for idx in range(len(sel))}
    for (ell, _), members in groups.items():
        hit = any(any(ell <= b <= ell + M for b in sel[j].bg) for j in members)
        if hit:
            for j in members:
                out[j].add(ell)
    return out


def build_p_n_M(tree: Tree, selection: Selection, M: int) -> DiskFamilyMeasure:
    """Atoms (level-l chart, restricted normalized volume) of mass
    (1/n) lambda(P cap E_n) / lambda(E_n) for every P with l in BG_n^M."""
    if selection.empty:
        raise ValueError("selection is empty")
    sel = selection.selected
    n = selection.n
    total = selection.volume
    bgm = bg_M(selection, M)
    groups = {}
    for idx, r in enumerate(sel):
        chain = r.chart.chain()
        for ell in bgm[idx]:
            groups.setdefault((ell, chain[ell].key), (chain[ell], []))[1].append(r)
    atoms = []
    for (ell, _), (P, members) in sorted(groups.items(), key=lambda kv: kv[0]):
        vols = np.array([r.volume for r in members])
        vP = math.fsum(vols)
        params = np.array([_relative_center(P, r.chart) for r in members])
        atoms.append((MeasuredDisk(P, params, vols / vP), vP / (n * total), ell))
    return DiskFamilyMeasure(atoms, n, M, selection.beta, selection.p)


def _relative_center(outer: Chart, inner: Chart) -> np.ndarray:
    offset, scale = outer.cell.relative(inner.cell)
    return offset + 0.5 * scale


@dataclass(frozen=True)
class WeightedPoints:
    points: np.ndarray  # (m, d) in [0,1)^d
    weights: np.ndarray

    @property
    def mass(self) -> float:
        return math.fsum(self.weights)

    def push(self, system: SmoothSystem, steps: int = 1) -> "WeightedPoints":
        X = self.points
        for _ in range(steps):
            X = system.forward(X)
        return WeightedPoints(np.mod(X, 1.0), self.weights)


def project_mu(family: DiskFamilyMeasure, d: Optional[int] = None) -> WeightedPoints:
    """Push every atom's weights through its chart."""
    pts, wts = [], []
    for disk, mass, _ in family.atoms:
        X, _ = disk.chart.eval(disk.params)
        pts.append(np.mod(X, 1.0))
        wts.append(mass * disk.weights)
    if not pts:
        return WeightedPoints(np.zeros((0, d or 2)), np.zeros(0))
    return WeightedPoints(np.concatenate(pts), np.concatenate(wts))


def invariance_defect(selection: Selection, M: int) -> float:
    """Mass of (mu_n^M - g_* mu_n^{M+1})^+, computed exactly on atoms.

    g_* mu^{M+1} carries (x, l) for l - 1 in BG^{M+1}(x); any (x, l) of mu^M not
    matched that way contributes its lambda_n mass / n.
    """
    a, b = bg_M(selection, M), bg_M(selection, M + 1)
    sel = selection.selected
    total = selection.volume
    lost = math.fsum(r.volume * sum(1 for ell in a[i] if ell == 0 or (ell - 1) not in b[i])
                     for i, r in enumerate(sel))
    return lost / (selection.n * total)


# ---------------------------------------------------------------- empirical metric


@lru_cache(maxsize=None)
def _dictionary(d: int, seed: int = 2024):
    """Tier 1: trigonometric characters with frequencies in {-3..3}^d (one per
    +-pair); tier 2: 20 seeded Lipschitz tent bumps with values in [0, 1]."""
    freqs = [f for f in np.ndindex(*([7] * d))]
    freqs = np.array(freqs) - 3
    keep = []
    for f in freqs:
        if not f.any() or np.abs(f).max() > 3:
            continue
        nz = f[np.flatnonzero(f)[0]]
        if nz > 0:
            keep.append(f)
    rng = np.random.default_rng(seed)
    centers = rng.random((20, d))
    radii = rng.uniform(0.1, 0.5, 20)
    return np.array(keep, dtype=float), centers, radii


def torus_diff(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    D = X - Y
    return D - np.round(D)


def _features(P: WeightedPoints, d: int):
    freqs, centers, radii = _dictionary(d)
    X = P.points
    phase = 2.0 * np.pi * X @ freqs.T
    chars = P.weights @ np.exp(1j * phase)
    dist = np.linalg.norm(torus_diff(X[:, None, :], centers[None]), axis=-1)
    bumps = P.weights @ np.maximum(0.0, 1.0 - dist / radii)
    return chars, bumps


def empirical_distance(nu: WeightedPoints, eta: WeightedPoints) -> float:
    """sum_N 2^-N mean_{h in C_N} |nu(h) - eta(h)| over the fixed dictionary.

    Characters enter through |nu(e_k) - eta(e_k)| (complex modulus), bumps are
    real with values in [0, 1]. A seminorm distance: symmetric, triangle
    inequality, zero iff the two measures agree on the dictionary.
    """
    d = nu.points.shape[1] if nu.points.size else eta.points.shape[1]
    c1, b1 = _features(nu, d)
    c2, b2 = _features(eta, d)
    return 0.5 * float(np.mean(np.abs(c1 - c2))) + 0.25 * float(np.mean(np.abs(b1 - b2)))


# ---------------------------------------------------------------- conditional densities


class SingularChart(ValueError):
    pass


@dataclass(frozen=True)
class ConditionalDensity:
    chart: Chart
    ell: int
    params: np.ndarray  # (m, k) uniform grid of [0,1]^k
    log_density: np.ndarray  # w.r.t. the chart's own k-volume
    oscillation: float
    cauchy: float  # sup |log rho_ell - log rho_{ell-1}|, nan for ell = 0

    def mass(self, offset, scale: float) -> float:
        """nu-mass of the sub-box offset + scale [0,1]^k (trapezoid rule on the grid)."""
        m = int(round(self.params.shape[0] ** (1.0 / self.chart.k)))
        sub = np.asarray(offset) + scale * self.params
        vals = np.exp(_log_density_at(self.chart, self.ell, sub))
        _, jac = self.chart.eval(sub)
        w = _trapezoid_weights(m, self.chart.k) * scale ** self.chart.k
        return float(np.dot(w, vals * wedge_volume(jac)) / self._norm)

    @property
    def _norm(self) -> float:
        m = int(round(self.params.shape[0] ** (1.0 / self.chart.k)))
        _, jac = self.chart.eval(self.params)
        w = _trapezoid_weights(m, self.chart.k)
        return float(np.dot(w, np.exp(_log_density_at(self.chart, self.ell, self.params))
                            * wedge_volume(jac)))


def _trapezoid_weights(m: int, k: int) -> np.ndarray:
    w1 = np.full(m, 1.0 / (m - 1))
    w1[[0, -1]] *= 0.5
    mesh = np.meshgrid(*([w1] * k), indexing="ij")
    return np.prod(np.stack([x.ravel() for x in mesh], axis=-1), axis=-1)


def _uniform_grid(m: int, k: int) -> np.ndarray:
    axis = np.linspace(0.0, 1.0, m)
    mesh = np.meshgrid(*([axis] * k), indexing="ij")
    return np.stack([x.ravel() for x in mesh], axis=-1)


def _log_density_at(chart: Chart, ell: int, T: np.ndarray) -> np.ndarray:
    """Unnormalized log of |wedge^k d(anc o phi)| / |wedge^k d chart| at T,
    anc the level-(L - ell) ancestor and phi the chart's sub-box map."""
    anc = chart.ancestor(chart.level - ell)
    offset, scale = anc.cell.relative(chart.cell)
    _, ja = anc.eval(offset + scale * T)
    _, jc = chart.eval(T)
    wa, wc = wedge_volume(ja), wedge_volume(jc)
    if np.any(wa < 1e-300) or np.any(wc < 1e-300):
        raise SingularChart(f"singular restriction on chart at level {chart.level}")
    return np.log(wa) - np.log(wc)


def nu_conditional(system: SmoothSystem, chart: Chart, ell: int, grid: Optional[int] = None
                   ) -> ConditionalDensity:
    """nu^(ell): normalized leaf volume pulled back ell levels, as a density
    against the chart's k-volume."""
    if system is not chart.ctx.system:
        raise ValueError("chart was built for a different system")
    if not 0 <= ell <= chart.level:
        raise ValueError(f"ell must lie in [0, {chart.level}]")
    k = chart.k
    m = grid or (129 if k == 1 else 33)
    T = _uniform_grid(m, k)
    w = _trapezoid_weights(m, k)
    _, jc = chart.eval(T)
    vol = wedge_volume(jc)

    def normalized(j):
        raw = _log_density_at(chart, j, T)
        return raw - math.log(np.dot(w, np.exp(raw - raw.max()) * vol)) - raw.max()

    logd = normalized(ell)
    cauchy = float(np.max(np.abs(logd - normalized(ell - 1)))) if ell > 0 else float("nan")
    return ConditionalDensity(chart, ell, T, logd, float(logd.max() - logd.min()), cauchy)


def cauchy_fit(increments: Sequence[float]):
    """Least-squares fit log I_l = log C + l log theta over l = 1..len; returns (theta, C, R^2)."""
    I = np.asarray(increments, dtype=float)
    ell = np.arange(1, I.size + 1)
    y = np.log(I)
    A = np.vstack([np.ones_like(ell, dtype=float), ell]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(coef[1])), float(np.exp(coef[0])), float(r2)


# ---------------------------------------------------------------- density comparison


@dataclass(frozen=True)
class Comparison:
    agreeing_fraction: float
    max_log_ratio: float
    atoms: int


def density_compare(rho, nu, delta: float = 0.2, weights=None) -> Comparison:
    """Per-atom ratios rho/nu; an atom agrees when the ratio is in [delta^3, delta^-3].

    rho and nu are aligned arrays of atom masses (or ratios). The agreeing
    fraction is weighted by `weights`, default rho.
    """
    rho = np.asarray(rho, dtype=float)
    nu = np.asarray(nu, dtype=float)
    w = rho if weights is None else np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore"):
        lr = np.log(rho) - np.log(nu)
    ok = np.abs(lr) <= 3.0 * math.log(1.0 / delta)
    frac = float(w[ok].sum() / w.sum()) if w.sum() > 0 else 0.0
    mx = float(np.max(np.abs(lr[ok]))) if ok.any() else float("nan")
    return Comparison(frac, mx, int(rho.size))


def compare_on_atom(tree: Tree, disk: MeasuredDisk, nu: ConditionalDensity, depth: int,
                    delta: float = 0.2) -> Comparison:
    """Compare rho and nu masses of the descendants `depth` levels below the disk's chart."""
    P = disk.chart
    if nu.chart is not P:
        raise ValueError("measures live on different charts")
    frontier = [P]
    for _ in range(depth):
        frontier = [c for ch in frontier for c in tree.expand(ch)]
    rho_m, nu_m = [], []
    for c in frontier:
        offset, scale = P.cell.relative(c.cell)
        inside = np.all((disk.params >= offset) & (disk.params <= offset + scale), axis=1)
        rho_m.append(disk.weights[inside].sum())
        nu_m.append(nu.mass(offset, scale))
    rho_m, nu_m = np.array(rho_m), np.array(nu_m)
    keep = rho_m > 0
    return density_compare(rho_m[keep], nu_m[keep], delta)


def sampled_density_compare(tree: Tree, n: int, N: int, chi_prime: float, beta: float,
                            chi: Optional[float] = None, samples: int = 30, sub_samples: int = 4,
                            delta: float = 0.2, seed: int = 0, max_draws: int = 2000) -> dict:
    """Lazy estimate of the agreeing mass fraction for deep trees.

    Draw x from lambda_n by rejection on the root disk, pick l uniformly in
    [0, n - N], and compare lambda(P' cap E_n) / lambda(P cap E_n) with
    lambda(P') / lambda(P) for the atoms P = atom_l(x), P' = atom_{l+N}(x).
    The E_n fractions inside P and P' come from `sub_samples` uniform draws
    each, counting x itself.
    """
    chi = chi_prime / 2.0 if chi is None else chi
    rng = np.random.default_rng(seed)
    k = tree.k
    cache = {}

    def in_E(t):
        key = tuple(np.asarray(t).tolist())
        if key not in cache:
            cache[key] = path_record(tree, tree.path(t, n), chi, chi_prime, beta).selected
        return cache[key]

    def frac_E(chart, t_self):
        lo, side = chart.cell.corner(), chart.cell.side
        hits = sum(in_E(np.clip(lo + side * rng.random(k), 0.0, 1.0)) for _ in range(sub_samples))
        return (1 + hits) / (1 + sub_samples)

    rho_r, nu_r = [], []
    draws = 0
    while len(rho_r) < samples and draws < max_draws:
        draws += 1
        t = rng.random(k)
        if not in_E(t):
            continue
        ell = int(rng.integers(0, n - N + 1))
        path = tree.path(t, n)
        P, Pp = path[ell], path[ell + N]
        fP, fPp = frac_E(P, t), frac_E(Pp, t)
        vol_ratio = root_volume(tree, Pp) / root_volume(tree, P)
        rho_r.append(vol_ratio * fPp / fP)
        nu_r.append(vol_ratio)
    if not rho_r:
        return {"samples": 0, "draws": draws, "agreeing_fraction": 0.0, "max_log_ratio": float("nan"),
                "selected_fraction": 0.0}
    cmp = density_compare(rho_r, nu_r, delta, weights=np.ones(len(rho_r)))
    return {"samples": len(rho_r), "draws": draws, "agreeing_fraction": cmp.agreeing_fraction,
            "max_log_ratio": cmp.max_log_ratio, "selected_fraction": len(rho_r) / draws}


# ---------------------------------------------------------------- entropy


def _dyn_dist(system, X0: np.ndarray, W: np.ndarray, n: int) -> np.ndarray:
    """max_{0<=j<=n} torus distance between f^j(x0) and f^j(x0 + w), batched."""
    X = np.broadcast_to(X0, W.shape).copy()
    worst = np.linalg.norm(torus_diff(W, 0.0), axis=-1)
    for _ in range(n):
        FX = system.forward(X)
        W = system.forward(X + W) - FX
        X = np.mod(FX, 1.0)
        worst = np.maximum(worst, np.linalg.norm(torus_diff(W, 0.0), axis=-1))
    return worst


def bowen_log_volume(system: SmoothSystem, x: np.ndarray, n: int, radius: float,
                     slices: int = 64, seed: int = 0) -> float:
    """log Lebesgue volume of B(x, n, radius) = {y : d(f^j y, f^j x) < radius, j <= n}.

    The ball is a thin tube around a local stable leaf. Thin directions are
    those stretched more than 10x by the stacked derivatives d_x f^j, j <= n.
    For each sampled point a of the long directions, Gauss-Newton centers the
    thin coordinates on the orbit (least squares over all n+1 offsets), and the
    thin slice volume comes from the linearized constraints there.
    """
    d = system.d
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    M = np.eye(d)
    Y = x.copy()
    stack = [M]
    for _ in range(n):
        M = system.jacobian(Y) @ M
        Y = system.forward(Y)
        stack.append(M)
    _, s, Vt = np.linalg.svd(np.concatenate(stack, axis=0))
    u = int(np.sum(s > 10.0))
    Et, El = Vt[:u].T, Vt[u:].T  # thin, long directions
    rng = np.random.default_rng(seed)
    nl = d - u
    if nl == 1:
        A = (np.arange(slices) + 0.5) / slices * 2.0 - 1.0
        A = radius * A[:, None]
    else:
        A = radius * (2.0 * rng.random((slices, nl)) - 1.0)
    if u == 0:
        inside = _dyn_dist(system, x, A @ El.T, n) < radius
        return math.log((2 * radius) ** nl * inside.mean()) if inside.any() else -math.inf
    # Gauss-Newton for thin coordinates b(a) minimizing sum_j |f^j(x + El a + Et b) - f^j x|^2
    B = np.zeros((A.shape[0], u))
    for _ in range(30):
        W = A @ El.T + B @ Et.T
        X = np.broadcast_to(x, W.shape).copy()
        J = np.broadcast_to(Et, W.shape + (u,)).copy()
        Rs, Js = [W], [J]
        for _ in range(n):
            J = system.jacobian(X + W) @ J
            FX = system.forward(X)
            W = system.forward(X + W) - FX
            X = np.mod(FX, 1.0)
            Rs.append(W)
            Js.append(J)
        R = np.concatenate(Rs, axis=1)  # (S, (n+1) d)
        G = np.concatenate(Js, axis=1)  # (S, (n+1) d, u)
        GtG = np.swapaxes(G, 1, 2) @ G
        step = np.linalg.solve(GtG, (np.swapaxes(G, 1, 2) @ R[..., None]))[..., 0]
        # keep iterates inside the static ball so the linearization stays local
        scale = np.minimum(1.0, radius / np.maximum(np.linalg.norm(step, axis=1), 1e-300))
        B = B - scale[:, None] * step
        if np.max(np.abs(step)) < 1e-15:
            break
    # linearized slice: |w_j + D_j Et delta| < radius for all j
    W = A @ El.T + B @ Et.T
    X = np.broadcast_to(x, W.shape).copy()
    J = np.broadcast_to(Et, W.shape + (u,)).copy()
    ws, Js = [torus_diff(W, 0.0)], [J]
    for _ in range(n):
        J = system.jacobian(X + W) @ J
        FX = system.forward(X)
        W = system.forward(X + W) - FX
        X = np.mod(FX, 1.0)
        ws.append(torus_diff(W, 0.0))
        Js.append(J)
    ws, Js = np.stack(ws, 1), np.stack(Js, 1)  # (S, n+1, d), (S, n+1, d, u)
    if u == 1:
        g = Js[..., 0]
        aa = np.sum(g * g, -1)
        bb = 2 * np.sum(ws * g, -1)
        cc = np.sum(ws * ws, -1) - radius ** 2
        disc = bb * bb - 4 * aa * cc
        ok = np.all(disc > 0, axis=1)
        sq = np.sqrt(np.maximum(disc, 0.0))
        lo = np.max((-bb - sq) / (2 * aa), axis=1)
        hi = np.min((-bb + sq) / (2 * aa), axis=1)
        width = np.where(ok, np.maximum(hi - lo, 0.0), 0.0)
    else:
        # at the least-squares center the feasible set lies in |S delta| < sqrt(n+1) r
        Z = 2.0 * rng.random((512, u)) - 1.0
        _, si, vti = np.linalg.svd(Js.reshape(Js.shape[0], -1, u))
        h = math.sqrt(n + 1) * radius / si  # (S, u): box half-widths in singular coordinates
        delta = (Z[None] * h[:, None, :]) @ vti  # (S, 512, u)
        S, m = Js.shape[0], Z.shape[0]
        lin = (Js.reshape(S, -1, u) @ np.swapaxes(delta, 1, 2)).reshape(S, n + 1, d, m)
        pts = ws[..., None] + lin
        inside = np.all(np.einsum("sjdm,sjdm->sjm", pts, pts) < radius ** 2, axis=1)
        width = np.prod(2 * h, axis=1) * inside.mean(axis=1)
    vol = (2 * radius) ** nl * width.mean()
    return math.log(vol) if vol > 0 else -math.inf


def brin_katok_entropy(system: SmoothSystem, points: np.ndarray, weights: Optional[np.ndarray],
                       n: int, r: float, reference: str = "lebesgue") -> float:
    """Weighted mean of -(1/n) log(m(B(x, n, r)) / m(B(x, 0, r))).

    reference="count": m is the empirical measure of the sample itself (the
    classical estimator; capped at log(#points)/n). reference="lebesgue": m is
    Lebesgue volume, appropriate when the sampled measure has bounded density.
    Dividing by the static ball makes the estimator vanish for the identity.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] < 1000:
        raise ValueError("need at least 1000 sample points")
    if not 0 < r < 0.5:
        raise ValueError("radius must lie in (0, 1/2)")
    w = np.full(P.shape[0], 1.0 / P.shape[0]) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    if reference == "count":
        orbit = orbit_array(system, P, n)  # (n+1, m, d)
        vals = np.empty(P.shape[0])
        for i in range(P.shape[0]):
            dist = np.linalg.norm(torus_diff(orbit, orbit[:, i:i + 1]), axis=-1)
            ball0 = np.sum(w[dist[0] < r])
            balln = np.sum(w[np.all(dist < r, axis=0)])
            vals[i] = -(math.log(balln) - math.log(ball0)) / n
        return float(np.dot(w, vals))
    if reference != "lebesgue":
        raise ValueError(f"unknown reference {reference!r}")
    # the static ball goes through the same sampler, so sampling error cancels
    vals = np.array([-(bowen_log_volume(system, x, n, r, seed=i)
                       - bowen_log_volume(system, x, 0, r, seed=i)) / n
                     for i, x in enumerate(P)])
    return float(np.dot(w, vals))


def entropy_sweep(system: SmoothSystem, points, n: int, radii=(0.05, 0.1, 0.15, 0.2, 0.25, 0.3),
                  reference: str = "lebesgue", weights=None) -> dict:
    """Estimates per radius; `best` is the largest radius, whose finite-n bias is smallest."""
    est = {float(r): brin_katok_entropy(system, points, weights, n, r, reference) for r in radii}
    best = max(est)
    return {"estimates": est, "best_radius": best, "best": est[best]}
