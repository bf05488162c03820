"""Command line: experiment stages, artifact manifests and the acceptance harness.

    ugibbs exponents|tree|measure|entropy|all [--config cfg.toml] [--seed S] [--out DIR] [--emit-plots]
    ugibbs verify fast|full
    ugibbs report --out DIR

Exit codes: 0 success, 1 check or stage failure, 2 usage or invalid config.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import disktree, exponents, exterior, measures, systems

STAGES = ("exponents", "tree", "measure", "entropy", "all")
LOG_GOLDEN = math.log((3.0 + math.sqrt(5.0)) / 2.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "cat2"
    base_point: tuple = (0.3, 0.2)
    frame: Optional[tuple] = None  # rows; None = most expanded directions
    k: int = 1
    side: float = 0.04
    eps: float = 0.05
    p: int = 3
    chi: float = 0.45
    chi_prime: float = 0.9
    beta: float = 0.1
    n: int = 3
    M: int = 3
    q: int = 30
    exp_n: int = 2000
    deltas: tuple = (0.05, 0.1, 0.2)
    entropy_n: int = 18
    entropy_points: int = 1000
    radii: tuple = (0.1, 0.2, 0.3)
    max_nodes: int = 400_000
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        for name in ("base_point", "deltas", "radii"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.frame is not None:
            object.__setattr__(self, "frame", tuple(tuple(float(v) for v in row) for row in self.frame))
        self.validate()

    def validate(self):
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(f"invalid config field '{name}': {msg}")

        try:
            sysobj = systems.make_system(self.system)
        except Exception as exc:
            raise ConfigError(f"invalid config field 'system': {exc}") from None
        need(len(self.base_point) == sysobj.d, "base_point", f"needs {sysobj.d} coordinates")
        need(1 <= self.k < sysobj.d, "k", f"must lie in [1, {sysobj.d - 1}]")
        if self.frame is not None:
            need(np.shape(self.frame) == (self.k, sysobj.d), "frame", f"must be {self.k} rows of length {sysobj.d}")
        need(0 < self.eps <= 0.25, "eps", "must lie in (0, 0.25]")
        need(0 < self.side <= 0.5, "side", "must lie in (0, 0.5]")
        need(1 <= self.p <= 10, "p", "must lie in [1, 10]")
        need(0 <= self.chi < self.chi_prime, "chi", "need 0 <= chi < chi_prime")
        need(0 < self.beta < 1, "beta", "must lie in (0, 1)")
        need(1 <= self.n <= 64, "n", "must lie in [1, 64]")
        need(self.M >= 0, "M", "must be >= 0")
        need(self.q >= 1, "q", "must be >= 1")
        need(self.exp_n >= 10, "exp_n", "must be >= 10")
        need(all(0 < d <= 1 for d in self.deltas), "deltas", "entries must lie in (0, 1]")
        need(self.entropy_n >= 1, "entropy_n", "must be >= 1")
        need(self.entropy_points >= 1000, "entropy_points", "must be >= 1000")
        need(all(0 < r < 0.5 for r in self.radii), "radii", "entries must lie in (0, 0.5)")
        need(self.max_nodes >= 1, "max_nodes", "must be >= 1")
        need(0 <= self.seed < 2 ** 64, "seed", "must be a u64")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"invalid config field '{sorted(unknown)[0]}': unknown field")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


# ---------------------------------------------------------------- artifact writing


class Artifacts:
    def __init__(self, out: Path, plots: bool):
        self.out = out
        self.plots = plots
        self.files = {}
        out.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, text: str):
        path = self.out / name
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def csv(self, name: str, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        self._write(name, buf.getvalue())

    def json(self, name: str, obj):
        self._write(name, json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n")

    def text(self, name: str, text: str):
        self._write(name, text)

    def plot(self, name: str, header, rows):
        if self.plots:
            lines = ["# " + " ".join(header)] + [" ".join(str(_fmt(v)) for v in r) for r in rows]
            self._write(name, "\n".join(lines) + "\n")

    def manifest(self, config: ExperimentConfig, stage: str, wall: float):
        man = {
            "stage": stage,
            "config_sha256": config.digest,
            "config": asdict(config),
            "versions": {"python": platform.python_version(), "numpy": np.__version__,
                         "ugibbs": _version()},
            "wall_time_s": round(wall, 3),
            "files": dict(sorted(self.files.items())),
        }
        (self.out / "manifest.json").write_text(json.dumps(man, sort_keys=True, indent=1) + "\n")


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return v


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (set, frozenset)):
        return sorted(v)
    raise TypeError(f"not serializable: {type(v)}")


# ---------------------------------------------------------------- stages


def _disk(cfg: ExperimentConfig, system):
    x0 = np.array(cfg.base_point)
    frame = np.array(cfg.frame) if cfg.frame is not None else disktree.unstable_frame(system, x0, cfg.k)
    return disktree.affine_disk(x0, frame, cfg.side)


def stage_exponents(cfg: ExperimentConfig, art: Artifacts):
    system = systems.make_system(cfg.system)
    x = systems.TorusPoint(cfg.base_point)
    rows = []
    for est in exponents.lyapunov_spectrum(system, x, cfg.exp_n):
        rows.append(("chi", est.extra["index"], 1, cfg.exp_n, "", est.value))
    for k in range(1, system.d + 1):
        for p in (1, 2, 4):
            est = exponents.lambda_kpn(system, x, k, p, cfg.exp_n)
            rows.append(("lambda_kpn", k, p, cfg.exp_n, "", est.value))
    for k in range(1, system.d):
        series = exponents.phi_series(system, x, k, cfg.q, cfg.exp_n)
        for delta in cfg.deltas:
            est = exponents.kappa_minus(series, delta)
            rows.append(("kappa_minus", k + 1, cfg.q, cfg.exp_n, delta, est.value))
        beta = exponents.beta_estimate(system, x, k, min(200, cfg.exp_n), cfg.q, cfg.exp_n)
        rows.append(("beta", k + 1, cfg.q, cfg.exp_n, "", beta.value))
    art.csv("exponents.csv", ("quantity", "index", "block", "n", "delta", "value"), rows)
    curve = []
    for n in (50, 100, 200, 500, 1000, 2000):
        if n <= cfg.exp_n:
            curve.append((n, exponents.lambda_kpn(system, x, 1, 1, n).value))
    art.plot("lambda1_convergence.dat", ("n", "lambda1"), curve)
    return {"rows": len(rows)}


def stage_tree(cfg: ExperimentConfig, art: Artifacts):
    system = systems.make_system(cfg.system)
    tree = disktree.grow_tree(system, _disk(cfg, system), cfg.eps, cfg.n, p=cfg.p,
                              max_nodes=cfg.max_nodes)
    counts = disktree.level_counts(tree)
    art.csv("tree_levels.csv", ("level", "nodes", "charts", "red", "blue"),
            [(c["level"], c["nodes"], c["charts"], c["red"], c["blue"]) for c in counts])
    snap = art.out / "tree.jsonl"
    disktree.write_snapshot(tree, snap)
    art.files["tree.jsonl"] = hashlib.sha256(snap.read_bytes()).hexdigest()
    checks = {
        "truncated": tree.truncated,
        "depth": tree.depth,
        "tiling": all(disktree.tiling_check(tree, lv) for lv in range(tree.depth + 1)),
        "volume": disktree.volume_check(tree),
        "diameter": disktree.diameter_check(tree),
        "profile_stability": disktree.profile_stability(tree),
    }
    art.json("tree_checks.json", checks)
    art.plot("tree_levels.dat", ("level", "charts"), [(c["level"], c["charts"]) for c in counts])
    return tree, checks


def stage_measure(cfg: ExperimentConfig, art: Artifacts):
    tree, _ = stage_tree(cfg, art)
    system = tree.system
    if tree.truncated:
        raise RuntimeError("tree truncated before depth n; raise max_nodes or lower n")
    sel = measures.select_E_n(system, tree, cfg.chi_prime, cfg.beta, cfg.n, chi=cfg.chi)
    summary = {"selected": len(sel.selected), "atoms": len(sel.records), "message": sel.message,
               "bg_density_histogram": {str(k): v for k, v in sel.histogram.items()}}
    if sel.empty:
        art.json("selection.json", summary)
        return summary
    summary["coverage"] = sel.coverage
    rows = []
    fams = {}
    for M in range(cfg.M + 2):
        fams[M] = measures.build_p_n_M(tree, sel, M)
        rows.append((M, fams[M].mass, len(fams[M].atoms), measures.invariance_defect(sel, M)))
    art.csv("p_n_M.csv", ("M", "mass", "atoms", "invariance_defect"), rows)
    mu = measures.project_mu(fams[cfg.M])
    art.csv("mu.csv", tuple(f"x{i}" for i in range(system.d)) + ("weight",),
            [tuple(pt) + (w,) for pt, w in zip(mu.points.tolist(), mu.weights.tolist())])
    pushed = measures.project_mu(fams[cfg.M + 1]).push(system, cfg.p)
    summary["invariance_distance"] = measures.empirical_distance(pushed, mu)
    summary["one_over_n"] = 1.0 / cfg.n
    art.json("family.json", {
        "n": cfg.n, "M": cfg.M, "beta": cfg.beta, "p": cfg.p,
        "atoms": [{"level": lv, "mass": m, "cell": [d.chart.cell.depth, list(d.chart.cell.index)],
                   "support": int(d.weights.size)} for d, m, lv in fams[cfg.M].atoms],
    })
    leaf = sel.selected[0].chart
    dens = measures.nu_conditional(system, leaf, leaf.level)
    art.csv("nu_density.csv", tuple(f"t{i}" for i in range(tree.k)) + ("log_density",),
            [tuple(t) + (v,) for t, v in zip(dens.params.tolist(), dens.log_density.tolist())])
    art.json("selection.json", summary)
    art.plot("p_n_M.dat", ("M", "mass"), [(r[0], r[1]) for r in rows])
    return summary


def stage_entropy(cfg: ExperimentConfig, art: Artifacts):
    system = systems.make_system(cfg.system)
    rng = np.random.default_rng(cfg.seed)
    pts = rng.random((cfg.entropy_points, system.d))
    sweep = measures.entropy_sweep(system, pts, cfg.entropy_n, cfg.radii)
    rows = [(r, v) for r, v in sorted(sweep["estimates"].items())]
    art.csv("entropy.csv", ("radius", "estimate"), rows)
    art.plot("entropy.dat", ("radius", "estimate"), rows)
    return sweep


def run_experiment(cfg: ExperimentConfig, stage: str, out: Optional[Path] = None,
                   plots: bool = False) -> dict:
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    art = Artifacts(Path(out or cfg.out), plots)
    t0 = time.perf_counter()
    report = {}
    todo = ("exponents", "measure", "entropy") if stage == "all" else (stage,)
    for st in todo:
        if st == "exponents":
            report[st] = stage_exponents(cfg, art)
        elif st == "tree":
            report[st] = stage_tree(cfg, art)[1]
        elif st == "measure":
            report[st] = stage_measure(cfg, art)
        else:
            report[st] = stage_entropy(cfg, art)
    art.manifest(cfg, stage, time.perf_counter() - t0)
    return report


# ---------------------------------------------------------------- acceptance checks


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] C{self.criterion:<2} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _perturbed():
    return systems.make_system("cat2_perturbed:eps=0.1")


def _segment(system, side=0.04, x0=(0.3, 0.2)):
    x0 = np.array(x0)
    return disktree.affine_disk(x0, disktree.unstable_frame(system, x0, 1), side)


def check_exponents(full: bool) -> tuple:
    cat = systems.make_system("cat2")
    x = systems.TorusPoint((0.1234, 0.5678))
    t0 = time.perf_counter()
    lam = exponents.lambda_kpn(cat, x, 1, 1, 2000).value
    dt = time.perf_counter() - t0
    spec = [e.value for e in exponents.lyapunov_spectrum(cat, x, 2000)]
    err_l = abs(lam - LOG_GOLDEN)
    err_s = max(abs(spec[0] - LOG_GOLDEN), abs(spec[1] + LOG_GOLDEN))
    ok = err_l <= 1e-3 and dt < 1.0 and err_s <= 1e-6
    return ok, f"|lambda1 err|={err_l:.2e} in {dt:.3f}s, spectrum err={err_s:.2e}"


def kappa_bruteforce(values, delta: float) -> float:
    """min over index sets of size >= delta n of the mean, by enumeration."""
    v = np.asarray(values, dtype=float)
    n = v.size
    m0 = exponents.admissible_size(n, delta)
    masks = (np.arange(1, 1 << n)[:, None] >> np.arange(n)) & 1
    sizes = masks.sum(axis=1)
    masks, sizes = masks[sizes >= m0], sizes[sizes >= m0]
    approx = (masks @ v) / sizes
    near = np.flatnonzero(approx <= approx.min() + 1e-9)
    exact = [sum(map(Fraction, v[masks[i] == 1].tolist()), Fraction(0)) / int(sizes[i]) for i in near]
    return float(min(exact))


def check_kappa(full: bool) -> tuple:
    rng = np.random.default_rng(7)
    series = 1000 if full else 200
    mism = total = 0
    for _ in range(series):
        n = int(rng.integers(1, 13))
        vals = np.round(rng.exponential(1.0, n), int(rng.integers(1, 4)))
        ps = exponents.PhiSeries(vals, q=1, k=1)
        for delta in (0.05, 0.1, 0.25, 0.5, 1.0):
            total += 1
            if exponents.kappa_minus(ps, delta).value != kappa_bruteforce(vals, delta):
                mism += 1
    return mism == 0, f"{mism} mismatches in {total} comparisons"


def check_kappa_cat(full: bool) -> tuple:
    x = systems.TorusPoint((0.1234, 0.5678))
    cat = systems.make_system("cat2")
    kap = exponents.kappa_minus(exponents.phi_series(cat, x, 1, 30, 2000), 0.1).value
    ok = abs(kap - LOG_GOLDEN) <= 2e-2
    worst = -math.inf
    names = systems.ZOO if full else systems.ZOO[:4]
    for name in names:
        s = systems.make_system(name)
        y = systems.TorusPoint(tuple(0.1234 + 0.1 * i for i in range(s.d)))
        for k in range(1, s.d):
            kap_k = exponents.kappa_minus(exponents.phi_series(s, y, k, 30, 2000), 0.1).value
            beta = exponents.beta_estimate(s, y, k, 200, 30, 2000).value
            worst = max(worst, kap_k - max(-beta, 0.0))
    ok = ok and worst <= 5e-2
    return ok, f"|kappa_2 - log lambda|={abs(kap - LOG_GOLDEN):.2e}, max(kappa - max(-beta,0))={worst:.3f}"


def minors_oracle(A, k):
    d, m = A.shape
    return np.array([[np.linalg.det(A[np.ix_(r, c)]) for c in combinations(range(m), k)]
                     for r in combinations(range(d), k)])


def check_exterior(full: bool) -> tuple:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(500 if full else 100):
        d = int(rng.integers(2, 6))
        k = int(rng.integers(1, d + 1))
        A, B = rng.normal(size=(d, d)), rng.normal(size=(d, d))
        CA = exterior.compound_matrix(A, k).entries
        ref = minors_oracle(A, k)
        worst = max(worst, np.max(np.abs(CA - ref)) / np.max(np.abs(ref)))
        CAB = exterior.compound_matrix(A @ B, k).entries
        prod = CA @ exterior.compound_matrix(B, k).entries
        worst = max(worst, np.max(np.abs(CAB - prod)) / np.max(np.abs(prod)))
        sv = np.linalg.svd(A, compute_uv=False)
        top = math.prod(sv[:k])
        worst = max(worst, abs(exterior.wedge_norm(A, k) - top) / top)
        worst = max(worst, abs(np.linalg.norm(ref, 2) - top) / top)
    return worst <= 1e-9, f"max relative error {worst:.2e}"


def hyperbolic_literal(gaps, chi_hat) -> set:
    c = Fraction(chi_hat)
    out = set()
    for ell in range(len(gaps) + 1):
        if all(sum(gaps[i:ell]) >= (ell - i) * c for i in range(ell + 1)):
            out.add(ell)
    return out


def check_pliss(full: bool) -> tuple:
    rng = np.random.default_rng(5)
    trials = 10_000 if full else 1000
    fails = mism = met = 0
    for _ in range(trials):
        n = int(rng.integers(1, 31))
        gaps = [int(v) for v in rng.integers(-3, 6, n)]
        A = max(gaps)
        chi_p = float(rng.uniform(-1.0, max(sum(gaps) / n, -0.5)))
        chi = chi_p - float(rng.uniform(0.05, 2.0))
        if hyperbolic_literal(gaps, chi) != measures.hyperbolic_times(gaps, chi):
            mism += 1
        if sum(gaps) >= n * chi_p and A > chi:
            rep = measures.pliss_bound_check(gaps, chi, chi_p)
            met += rep.hypothesis_met
            fails += not rep.satisfied
    return fails == 0 and mism == 0 and met > 0, f"{met} hypothesis-meeting runs, {fails} bound failures, {mism} scan mismatches"


def check_geometry(full: bool) -> tuple:
    system = _perturbed()
    tree = disktree.grow_tree(system, _segment(system), 0.05, 8, p=1)
    charts = [c for lv in range(tree.depth + 1) for c in tree.charts_at(lv)]
    dist = max(disktree.distortion(c) for c in charts)
    osc = max(disktree.tangent_oscillation(c) for c in charts)
    diam = disktree.diameter_check(tree)
    vol = disktree.volume_check(tree)
    tiles = all(disktree.tiling_check(tree, lv) for lv in range(tree.depth + 1))
    ok = (dist <= math.sqrt(2) * (1 + 1e-6) and osc < math.pi / 6 and diam["passed"]
          and vol["relative_error"] <= 1e-6 and tiles and not tree.truncated)
    return ok, (f"{len(charts)} charts, distortion {dist:.4f}, oscillation {osc:.2e}, "
                f"diameter ratio {diam['worst_ratio']:.3f}, volume rel err {vol['relative_error']:.1e}, tiling {tiles}")


def check_expansion(full: bool) -> tuple:
    system = _perturbed()
    tree = disktree.grow_tree(system, _segment(system), 0.05, 3, p=3)
    leaves = tree.charts_at(3)
    pick = np.linspace(0, len(leaves) - 1, 100 if full else 25).astype(int)
    reps = [measures.expansion_at_hyp_times(system, tree, leaves[i], 1.5) for i in pick]
    viol = sum(r.violations for r in reps)
    checks = sum(r.checks for r in reps)
    slack = min(r.min_slack for r in reps)
    return viol == 0 and checks > 0, f"{len(reps)} leaves, {checks} checks, {viol} violations, min slack {slack:.3f}"


def check_measures(full: bool) -> tuple:
    notes = []
    ok = True
    cat = systems.make_system("cat2")
    for system in (cat, _perturbed()):
        n = 3
        tree = disktree.grow_tree(system, _segment(system), 0.05, n, p=3)
        sel = measures.select_E_n(system, tree, 0.9, 0.1, n, chi=0.45)
        if sel.empty:
            return False, f"empty selection on {system.name}"
        masses = [measures.build_p_n_M(tree, sel, M).mass for M in range(n + 2)]
        defects = [measures.invariance_defect(sel, M) for M in range(n + 2)]
        mono = all(b >= a - 1e-15 for a, b in zip(masses, masses[1:]))
        in_range = all(sel.beta * sel.coverage - 1e-12 <= m <= 1 + 1e-12 for m in masses)
        mu = measures.project_mu(measures.build_p_n_M(tree, sel, n))
        pushed = measures.project_mu(measures.build_p_n_M(tree, sel, n + 1)).push(system, 3)
        dist = measures.empirical_distance(pushed, mu)
        inv = max(defects) <= 1 / n + 1e-12 and dist <= 1 / n + 1e-12
        ok &= mono and in_range and inv
        notes.append(f"{system.name}: mass {masses[0]:.3f}->{masses[-1]:.3f}, defect {max(defects):.3f}, dist {dist:.3f}")
    # nu: uniform for the linear chart, geometric Cauchy increments for the perturbation
    tree = disktree.Tree(cat, _segment(cat), disktree.TreeConfig(eps=0.05, p=1))
    leaf = tree.path(np.array([0.41]), 13)[-1]
    osc = max(measures.nu_conditional(cat, leaf, ell).oscillation for ell in range(13))
    system = _perturbed()
    tree = disktree.Tree(system, _segment(system), disktree.TreeConfig(eps=0.05, p=1))
    leaf = tree.path(np.array([0.41]), 13)[-1]
    inc = [measures.nu_conditional(system, leaf, ell).cauchy for ell in range(1, 13)]
    theta, _, r2 = measures.cauchy_fit(inc)
    ok &= osc <= 1e-12 and theta < 1 and r2 >= 0.9
    notes.append(f"linear nu oscillation {osc:.1e}, Cauchy theta {theta:.3f} R2 {r2:.3f}")
    return ok, "; ".join(notes)


def check_density(full: bool) -> tuple:
    cat = systems.make_system("cat2")
    tree = disktree.Tree(cat, _segment(cat), disktree.TreeConfig(eps=0.05, p=3))
    n = 64
    N = math.isqrt(n)
    res = measures.sampled_density_compare(tree, n, N, 0.9, 0.1, chi=0.45,
                                           samples=30 if full else 10, sub_samples=4, seed=3)
    ok = res["samples"] > 0 and res["agreeing_fraction"] >= 0.9
    return ok, (f"n={n}, N={N}, {res['samples']} atoms, agreeing fraction {res['agreeing_fraction']:.3f}, "
                f"max |log ratio| {res['max_log_ratio']:.3f}")


def check_entropy(full: bool) -> tuple:
    rng = np.random.default_rng(13)
    cat = systems.make_system("cat2")
    sweep = measures.entropy_sweep(cat, rng.random((1000, 2)), 18, (0.1, 0.2, 0.3))
    ok = abs(sweep["best"] - LOG_GOLDEN) <= 0.1
    notes = [f"cat2 best r={sweep['best_radius']}: {sweep['best']:.4f}"]
    names = systems.ZOO if full else ("identity2", "cat2", "cat2_perturbed:eps=0.1")
    for name in names:
        s = systems.make_system(name)
        pts = rng.random((1000, s.d))
        spec = sorted(e.value for e in exponents.lyapunov_spectrum(s, systems.TorusPoint(tuple(pts[0])), 2000))
        target = math.fsum(v for v in spec if v > 1e-3)
        est = measures.brin_katok_entropy(s, pts, None, 18, 0.3)
        ok &= est >= target - 0.15
        notes.append(f"{name}: {est:.3f} vs {target:.3f}")
    return ok, "; ".join(notes)


CHECKS = (
    (1, "exponent ground truth", check_exponents),
    (2, "kappa oracle equivalence", check_kappa),
    (3, "kappa numeric instance", check_kappa_cat),
    (4, "exterior-algebra oracles", check_exterior),
    (5, "Pliss bound and fast scan", check_pliss),
    (6, "geometry runtime gates", check_geometry),
    (7, "expansion at hyperbolic times", check_expansion),
    (8, "measure-stage contracts", check_measures),
    (9, "density comparison", check_density),
    (10, "entropy estimates", check_entropy),
)


def run_check(criterion: int, full: bool = True) -> CheckResult:
    for num, name, fn in CHECKS:
        if num == criterion:
            t0 = time.perf_counter()
            try:
                ok, detail = fn(full)
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"error: {type(exc).__name__}: {exc}"
            return CheckResult(num, name, bool(ok), detail, time.perf_counter() - t0)
    raise KeyError(criterion)


def verify(suite: str, stream=None) -> int:
    stream = stream or sys.stdout
    if suite not in ("fast", "full"):
        raise ConfigError(f"unknown suite {suite!r}")
    results = []
    for num, _, _ in CHECKS:
        res = run_check(num, full=suite == "full")
        print(res.line(), file=stream, flush=True)
        results.append(res)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed", file=stream)
    return 1 if failed else 0


# ---------------------------------------------------------------- entry point


def report(out: Path, stream=None) -> int:
    stream = stream or sys.stdout
    man_path = out / "manifest.json"
    if not man_path.exists():
        print(f"no manifest in {out}", file=sys.stderr)
        return 1
    man = json.loads(man_path.read_text())
    print(f"stage {man['stage']}  config {man['config_sha256'][:12]}  wall {man['wall_time_s']}s", file=stream)
    bad = 0
    for name, digest in man["files"].items():
        path = out / name
        ok = path.exists() and hashlib.sha256(path.read_bytes()).hexdigest() == digest
        bad += not ok
        print(f"  {'ok ' if ok else 'BAD'} {name}", file=stream)
    for name in ("tree_checks.json", "selection.json"):
        if (out / name).exists():
            print(f"{name}: {(out / name).read_text().strip()}", file=stream)
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ugibbs", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for st in ("exponents", "tree", "measure", "entropy", "all"):
        sp = sub.add_parser(st)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--emit-plots", action="store_true")
    vp = sub.add_parser("verify")
    vp.add_argument("suite", choices=("fast", "full"))
    rp = sub.add_parser("report")
    rp.add_argument("--out", type=Path, required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return verify(args.suite)
    if args.command == "report":
        return report(args.out)
    try:
        cfg = ExperimentConfig.from_toml(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = ExperimentConfig.from_dict({**asdict(cfg), "seed": args.seed})
    except (ConfigError, tomllib.TOMLDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        rep = run_experiment(cfg, args.command, args.out, args.emit_plots)
    except Exception as exc:
        print(f"error: stage {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(rep, sort_keys=True, default=_jsonable, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
