"""Finite-horizon exponent estimators built on exterior powers of d f^n.

Long products are never formed explicitly. Norms of wedge^k d_x f^n come
from running products of compound matrices, renormalized every step, with
the logarithms of the scale factors accumulated by ``math.fsum``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from itertools import product as iproduct

import numpy as np

from .exterior import KFrame, compound_stack, wedge_vector
from .systems import SmoothSystem, TorusPoint, orbit_array

TINY = 1e-300

TAGS = ("lambda_kpn", "lambda_k", "Sigma", "kappa_minus", "chi", "Phi", "beta")


@dataclass(frozen=True)
class ExponentEstimate:
    value: float
    n: int
    block: int
    tag: str
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("horizon must be >= 1")
        if self.tag not in TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")


@dataclass(frozen=True)
class PhiSeries:
    values: np.ndarray
    q: int
    k: int
    clamped: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0):
            raise ValueError("Phi values are nonnegative")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


class _Clamp:
    def __init__(self):
        self.count = 0

    def log(self, v):
        v = np.asarray(v, dtype=float)
        low = v <= TINY
        self.count += int(np.count_nonzero(low))
        return np.log(np.where(low, TINY, v))

    def log_plus(self, v):
        return np.maximum(self.log(v), 0.0)


def orbit_jacobians(system: SmoothSystem, x: TorusPoint, n: int) -> np.ndarray:
    """Jacobians d_{f^l x} f for l = 0..n-1, shape (n, d, d)."""
    if n == 0:
        return np.zeros((0, system.d, system.d))
    pts = orbit_array(system, x.array(), n - 1)
    return system.jacobian(pts)


def log_wedge_growth(J: np.ndarray, k: int) -> float:
    """log ||wedge^k (J[-1] ... J[0])|| without overflow."""
    C = compound_stack(J, k)
    M = np.eye(C.shape[-1])
    logs = []
    for step in C:
        M = step @ M
        s = np.linalg.norm(M)
        if s <= TINY:
            return -math.inf
        M /= s
        logs.append(math.log(s))
    top = np.linalg.norm(M, 2)
    if top <= TINY:
        return -math.inf
    logs.append(math.log(top))
    return math.fsum(logs)


def window_wedge_norms(J: np.ndarray, p: int, ks) -> dict:
    """For every start l with l + p <= len(J), ||wedge^j of the p-step product
    starting at l||, for each j in ks. Returns {j: array of length len(J)-p+1}."""
    n_win = J.shape[0] - p + 1
    out = {}
    for j in ks:
        C = compound_stack(J, j)
        W = C[:n_win].copy()
        for s in range(1, p):
            W = C[s:s + n_win] @ W
        out[j] = np.linalg.norm(W, 2, axis=(-2, -1)) if W.shape[-1] > 1 else np.abs(W[..., 0, 0])
    return out


def _check_k(system, k, lo=1, hi=None):
    hi = system.d if hi is None else hi
    if not lo <= k <= hi:
        raise ValueError(f"k={k} outside [{lo}, {hi}]")


def sigma_k(system: SmoothSystem, x: TorusPoint, k: int, n: int) -> ExponentEstimate:
    """(1/n) log ||wedge^k d_x f^n||."""
    _check_k(system, k)
    if n < 1:
        raise ValueError("n must be >= 1")
    val = log_wedge_growth(orbit_jacobians(system, x, n), k) / n
    return ExponentEstimate(val, n, 1, "Sigma")


def correction_logs(system: SmoothSystem, x: TorusPoint, k: int, p: int, n: int,
                    clamp: _Clamp | None = None) -> np.ndarray:
    """log+ max_{1<=j<=k-1} ||wedge^j d_{f^l x} f^p|| for l = 0..n-1."""
    if k == 1:
        return np.zeros(n)
    clamp = clamp or _Clamp()
    J = orbit_jacobians(system, x, n + p - 1)
    norms = window_wedge_norms(J, p, range(1, k))
    best = np.max(np.stack([norms[j] for j in range(1, k)]), axis=0)
    return clamp.log_plus(best)


def lambda_kpn(system: SmoothSystem, x: TorusPoint, k: int, p: int, n: int) -> ExponentEstimate:
    _check_k(system, k)
    if p < 1 or n < 1:
        raise ValueError("p and n must be >= 1")
    head = log_wedge_growth(orbit_jacobians(system, x, n), k)
    if k == 1:
        # empty correction: same arithmetic for every p
        return ExponentEstimate(head / n, n, p, "lambda_kpn")
    clamp = _Clamp()
    corr = correction_logs(system, x, k, p, n, clamp)
    val = (head - math.fsum(corr) / p) / n
    return ExponentEstimate(val, n, p, "lambda_kpn", {"clamped": clamp.count})


def lambda_k(system: SmoothSystem, x: TorusPoint, k: int, p_schedule, n: int) -> ExponentEstimate:
    """max over the p schedule of lambda_{k,p,n}; the per-p curve is kept in extra."""
    ps = list(p_schedule)
    if not ps:
        raise ValueError("p_schedule must be nonempty")
    curve = [(p, lambda_kpn(system, x, k, p, n).value) for p in ps]
    best_p, best = max(curve, key=lambda t: t[1])
    return ExponentEstimate(best, n, best_p, "lambda_k", {"curve": curve})


def cocycle_log_growth(system: SmoothSystem, x, M: np.ndarray, p: int, steps: int):
    """Propagate the k-vector of the columns of M (shape (d, k)) through the
    cocycle A_{k,p} for `steps` iterates of f starting at x (lifted array).

    Returns (log |A^steps(x, v)| / |v|, endpoint, propagated columns).
    """
    x = np.asarray(x, dtype=float)
    k = M.shape[1]
    z = wedge_vector(M)
    nz = np.linalg.norm(z)
    if nz <= TINY:
        raise ValueError("degenerate tangent frame")
    z = z / nz
    logs = []
    Jp = orbit_jacobians(system, TorusPoint(tuple(np.mod(x, 1.0))), steps + p - 1)
    if k > 1:
        norms = window_wedge_norms(Jp, p, range(1, k))
        denom = np.max(np.stack([norms[j] for j in range(1, k)]), axis=0) ** (1.0 / p)
        denom = np.maximum(denom, 1.0)
    else:
        denom = np.ones(steps)
    C = compound_stack(Jp[:steps], k)
    for i in range(steps):
        z = C[i] @ z
        s = np.linalg.norm(z)
        z /= s
        logs.append(math.log(s) - math.log(denom[i]))
    V = M.copy()
    y = x.copy()
    for i in range(steps):
        V = system.jacobian(y) @ V
        y = system.forward(y)
    return math.fsum(logs), y, V


def cocycle_growth(system: SmoothSystem, x: TorusPoint, W, k: int, p: int, n: int) -> ExponentEstimate:
    """(1/n) log |A_{k,p}^n(x, iota(W))| with the Plücker vector renormalized each step."""
    frame = W if isinstance(W, KFrame) else KFrame(W)
    if frame.vectors.shape[0] != k:
        raise ValueError("frame size must equal k")
    if p < 1 or n < 1:
        raise ValueError("p and n must be >= 1")
    total, _, _ = cocycle_log_growth(system, x.array(), frame.vectors.T, p, n)
    return ExponentEstimate(total / n, n, p, "lambda_kpn", {"cocycle": True})


def phi_series(system: SmoothSystem, x: TorusPoint, k: int, q: int, n: int) -> PhiSeries:
    """Phi^(q)_{k+1}(f^l x) = (1/q) log+ (||wedge^k d f^q|| / ||wedge^{k+1} d f^q||), l=1..n."""
    _check_k(system, k, 1, system.d - 1)
    if q < 1 or n < 1:
        raise ValueError("q and n must be >= 1")
    J = orbit_jacobians(system, x, n + q)[1:]
    norms = window_wedge_norms(J, q, (k, k + 1))
    clamp = _Clamp()
    ratio = clamp.log(norms[k]) - clamp.log(norms[k + 1])
    return PhiSeries(np.maximum(ratio, 0.0) / q, q, k, clamp.count)


def admissible_size(n: int, delta: float) -> int:
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    # guard against 0.1 * 30 = 3.0000000000000004
    m = math.ceil(delta * n - 1e-9)
    if m < 1:
        raise ValueError("ceil(delta * n) must be >= 1")
    return m


def kappa_minus(series: PhiSeries, delta: float) -> ExponentEstimate:
    """Smallest average of Phi over index sets of size >= delta*n.

    The minimum sits on the ceil(delta*n) smallest values. The mean is taken
    in exact rationals and rounded once, so equal real means give equal floats
    whatever the subset size.
    """
    v = np.sort(series.values)
    m = admissible_size(v.size, delta)
    val = float(sum(map(Fraction, v[:m].tolist()), Fraction(0)) / m)
    return ExponentEstimate(val, v.size, series.q, "kappa_minus", {"delta": delta, "size": m})


def _qr_logs(system: SmoothSystem, x: TorusPoint, n: int, burn_in: int) -> np.ndarray:
    """Per-step log |R_ii| of QR-reorthogonalized propagation, shape (n, d)."""
    J = orbit_jacobians(system, x, n + burn_in)
    # a generic fixed start frame; coordinate frames can sit on invariant
    # blocks of product systems and keep the columns unsorted
    Q, _ = np.linalg.qr(np.random.default_rng(12345).standard_normal((system.d, system.d)))
    out = np.empty((n, system.d))
    for i, Ji in enumerate(J):
        Q, R = np.linalg.qr(Ji @ Q)
        sgn = np.sign(np.diag(R))
        sgn[sgn == 0] = 1.0
        Q = Q * sgn
        if i >= burn_in:
            out[i - burn_in] = np.log(np.abs(np.diag(R)) + TINY)
    return out


def lyapunov_spectrum(system: SmoothSystem, x: TorusPoint, n: int,
                      burn_in: int | None = None) -> list:
    """QR estimate of the Lyapunov spectrum, descending.

    The frame is first aligned for ``burn_in`` steps (default n // 10) so the
    transient does not bias the averages.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    burn_in = max(1, n // 10) if burn_in is None else burn_in
    logs = _qr_logs(system, x, n, burn_in)
    vals = sorted((math.fsum(logs[:, j]) / n for j in range(system.d)), reverse=True)
    return [ExponentEstimate(v, n, 1, "chi", {"index": j + 1}) for j, v in enumerate(vals)]


def beta_estimate(system: SmoothSystem, x: TorusPoint, k: int, window: int, q: int,
                  n: int) -> ExponentEstimate:
    """Largest windowed estimate of chi_{k+1} over windows [t, t+window), t = 0, q, 2q, ...

    The QR frame is carried across windows, so each window average is a local
    growth rate of the (k+1)-th direction.
    """
    _check_k(system, k, 1, system.d - 1)
    if not 1 <= window <= n:
        raise ValueError("need 1 <= window <= n")
    if q < 1:
        raise ValueError("stride q must be >= 1")
    logs = _qr_logs(system, x, n, max(1, n // 10))[:, k]
    csum = np.concatenate([[0.0], np.cumsum(logs)])
    starts = np.arange(0, n - window + 1, q)
    means = (csum[starts + window] - csum[starts]) / window
    return ExponentEstimate(float(means.max()), n, q, "beta",
                            {"window": window, "windows": means.tolist()})


def kappa_sweep(system: SmoothSystem, x: TorusPoint, k: int, deltas=(0.05, 0.1, 0.2),
                qs=(10, 20, 40), ns=(500, 1000, 2000)) -> list:
    """Rows (delta, q, n, value) of kappa_minus over the parameter grid."""
    rows = []
    for q, n in iproduct(qs, ns):
        series = phi_series(system, x, k, q, n)
        for delta in deltas:
            rows.append((delta, q, n, kappa_minus(series, delta).value))
    return sorted(rows)
