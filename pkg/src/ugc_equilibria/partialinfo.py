"""Symmetric equilibria of the partial-information mechanisms.

M5  top-K allocation, binary actions: a participation cut-off
M6  top-K allocation, continuous actions: a calibrated bidding curve
M7  proportional allocation, binary actions: a participation cut-off

Types are i.i.d. draws from ``cfg.distribution``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicHermiteSpline

from .core import GameConfig, Mechanism, compare_exact, exact

QUAD_EPSABS = 1e-11
QUAD_LIMIT = 2000  # at most 21 * 2000 integrand evaluations per call
ROOT_XTOL = 1e-13


def _require(cfg: GameConfig, *mechs: Mechanism):
    if cfg.mechanism not in mechs:
        names = "/".join(m.value for m in mechs)
        raise ValueError(f"expected a {names} config, got {cfg.mechanism.value}")


def _quad(func, a: float, b: float, cfg: GameConfig) -> float:
    if b <= a:
        return 0.0
    pts = [p for p in cfg.distribution.breakpoints if a < p < b]
    val, _ = integrate.quad(func, a, b, epsabs=QUAD_EPSABS, epsrel=1e-12,
                            limit=QUAD_LIMIT, points=pts or None)
    return val


# ---------------------------------------------------------------------------
# win probability in the top-K race
# ---------------------------------------------------------------------------

def win_probability(x, cfg: GameConfig):
    """Probability that a type-``x`` user ranks in the top K when all others play their type.

    ``T(x) = sum_{j<K} C(N-1, j) F(x)^(N-1-j) (1 - F(x))^j``, and 1 when N <= K.
    The binomial tail is evaluated as the regularized incomplete beta
    ``I_F(N-K, K)``, which stays monotone to the last bit where the plain
    sum jitters by an ulp near 1; ``win_probability_sum`` is the direct sum.
    """
    N, K = cfg.n_users, cfg.top_k
    F = np.asarray(cfg.distribution.cdf(x), dtype=float)
    out = np.ones_like(F) if N - K <= 0 else special.betainc(N - K, K, F)
    return out if out.ndim else float(out)


def win_probability_sum(x, cfg: GameConfig):
    """``T(x)`` by its binomial sum."""
    N, K = cfg.n_users, cfg.top_k
    F = np.asarray(cfg.distribution.cdf(x), dtype=float)
    if N - K <= 0:
        out = np.ones_like(F)
    else:
        out = sum(comb(N - 1, j) * F ** (N - 1 - j) * (1.0 - F) ** j for j in range(K))
    return out if out.ndim else float(out)


def win_probability_derivative(x, cfg: GameConfig):
    """``dT/dx = (N-1) f(x) C(N-2, K-1) F^(N-K-1) (1-F)^(K-1)``."""
    N, K = cfg.n_users, cfg.top_k
    if N - K < 1:
        raise ValueError("the derivative is only defined for N - K >= 1")
    F = np.asarray(cfg.distribution.cdf(x), dtype=float)
    f = np.asarray(cfg.distribution.density(x), dtype=float)
    out = (N - 1) * f * comb(N - 2, K - 1) * F ** (N - K - 1) * (1.0 - F) ** (K - 1)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CutoffEquilibrium:
    """Participate with the full type iff the type is at least ``threshold``."""

    mechanism: Mechanism
    threshold: float
    residual: float
    notes: str = ""
    residual_std_error: float | None = None
    threshold_std_error: float | None = None
    seed: int | None = None
    mc_samples: int | None = None

    def __call__(self, types):
        types = np.asarray(types, dtype=float)
        return np.where(types >= self.threshold, types, 0.0)

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism.value,
            "threshold": self.threshold,
            "residual": self.residual,
            "residual_std_error": self.residual_std_error,
            "threshold_std_error": self.threshold_std_error,
            "seed": self.seed,
            "mc_samples": self.mc_samples,
            "notes": self.notes,
        }


def solve_m5(cfg: GameConfig) -> CutoffEquilibrium:
    """Cut-off solving ``(R/K) T(x) = c``; ``T`` is non-decreasing so bisection applies."""
    _require(cfg, Mechanism.M5)
    N, K, R, c = cfg.n_users, cfg.top_k, cfg.reward, cfg.cost
    if compare_exact(R, K * exact(c)) <= 0:
        raise ValueError("M5 needs R > Kc; the marginal region R <= Kc is not analysed")
    if N <= K:
        return CutoffEquilibrium(Mechanism.M5, 0.0, R / K - c,
                                 "N <= K: every participant is rewarded, everybody takes part")

    def excess(x):
        return R / K * win_probability(x, cfg) - c

    lo_val = excess(0.0)
    if lo_val >= 0:
        return CutoffEquilibrium(Mechanism.M5, 0.0, lo_val, "positive margin at x = 0")
    x = optimize.bisect(excess, 0.0, 1.0, xtol=1e-15, maxiter=200)
    return CutoffEquilibrium(Mechanism.M5, float(x), float(excess(x)), "bisection on (R/K) T(x) - c")


# ---------------------------------------------------------------------------
# M6: the unconstrained curve and its calibration
# ---------------------------------------------------------------------------

def _beta_scale(cfg: GameConfig) -> float:
    N, K = cfg.n_users, cfg.top_k
    if N - K < 1:
        raise ValueError("the bidding curve needs N - K >= 1")
    return cfg.reward * (N - 1) / (cfg.cost * K) * comb(N - 2, K - 1)


def _beta_integrand(cfg: GameConfig) -> Callable[[float], float]:
    N, K, dist = cfg.n_users, cfg.top_k, cfg.distribution

    def g(t):
        F = float(dist.cdf(t))
        return t * F ** (N - K - 1) * (1.0 - F) ** (K - 1) * float(dist.density(t))

    return g


def beta_uncalibrated(x, cfg: GameConfig):
    """The curve solving the first-order condition, by adaptive quadrature.

    ``beta(x) = R(N-1)/(cK) C(N-2, K-1) int_0^x t F^(N-K-1) (1-F)^(K-1) dF(t)``.
    Accepts a scalar or an array; arrays are integrated piece by piece in
    sorted order and accumulated.
    """
    _require(cfg, Mechanism.M6)
    scale = _beta_scale(cfg)
    g = _beta_integrand(cfg)
    xs = np.asarray(x, dtype=float)
    if xs.ndim == 0:
        return scale * _quad(g, 0.0, float(xs), cfg)
    order = np.argsort(xs, kind="stable")
    out = np.empty_like(xs)
    acc, prev = 0.0, 0.0
    for k in order:
        acc += _quad(g, prev, xs[k], cfg)
        prev = xs[k]
        out[k] = scale * acc
    return out


def beta_uniform_closed_form(x, cfg: GameConfig):
    """Polynomial form of the curve for uniform types (alternating binomial sum)."""
    _require(cfg, Mechanism.M6)
    N, K = cfg.n_users, cfg.top_k
    x = np.asarray(x, dtype=float)
    pre = cfg.reward / (cfg.cost * K) * (N - 1) * comb(N - 2, K - 1)
    out = pre * sum((-1) ** (K - k - 1) * comb(K - 1, k) * x ** (N - k) / (N - k) for k in range(K))
    return out if out.ndim else float(out)


def beta_derivative(x, cfg: GameConfig):
    """``beta'(x) = (R / (cK)) x T'(x)``."""
    _require(cfg, Mechanism.M6)
    x = np.asarray(x, dtype=float)
    out = cfg.reward / (cfg.cost * cfg.top_k) * x * win_probability_derivative(x, cfg)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float
    kind: str  # "original", "diagonal" or "shifted"
    offset: float = 0.0

    def __post_init__(self):
        for name in ("lo", "hi", "offset"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "kind": self.kind, "offset": self.offset}


@dataclass(frozen=True)
class SymmetricStrategy:
    """A monotone bidding curve ``beta*`` on [0, 1] made of labelled segments.

    Segment ``k`` covers ``(lo, hi]`` (the first one also contains 0). On a
    diagonal segment ``beta*(x) = x``; elsewhere ``beta*(x) = beta(x) + offset``.
    """

    segments: tuple[Segment, ...]
    grid_x: np.ndarray = field(repr=False, compare=False)
    beta: Callable = field(repr=False, compare=False)
    flags: tuple[str, ...] = ()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        his = np.array([s.hi for s in self.segments])
        idx = np.clip(np.searchsorted(his, x, side="left"), 0, len(his) - 1)
        diag = np.array([s.kind == "diagonal" for s in self.segments])
        offs = np.array([s.offset for s in self.segments])
        out = np.where(diag[idx], x, self.beta(x) + offs[idx])
        return out if out.ndim else float(out)

    def kind_at(self, x) -> np.ndarray:
        his = np.array([s.hi for s in self.segments])
        idx = np.clip(np.searchsorted(his, np.asarray(x, dtype=float), side="left"), 0, len(his) - 1)
        return np.array([s.kind for s in self.segments])[idx]

    @property
    def grid(self):
        """``(x, beta*(x), segment kind)`` on the calibration grid."""
        return self.grid_x, np.asarray(self(self.grid_x)), self.kind_at(self.grid_x)

    @property
    def kinds(self) -> set[str]:
        return {s.kind for s in self.segments}

    def invariant_violations(self, tol: float = 1e-9) -> list[str]:
        xs, vals, _ = self.grid
        bad = []
        if abs(float(self(0.0))) > 1e-12:
            bad.append(f"beta*(0) = {float(self(0.0))}")
        for left, right in zip(self.segments, self.segments[1:]):
            a = left.hi if left.kind == "diagonal" else float(self.beta(left.hi)) + left.offset
            b = left.hi if right.kind == "diagonal" else float(self.beta(left.hi)) + right.offset
            if abs(a - b) >= tol:
                bad.append(f"jump of {abs(a - b):.3e} at x = {left.hi}")
        if np.any(np.diff(vals) < -1e-12):
            bad.append("beta* decreases on the grid")
        if np.any(vals > xs + 1e-12):
            i = int(np.argmax(vals - xs))
            bad.append(f"beta*({xs[i]}) = {vals[i]} exceeds the type")
        return bad

    def to_dict(self) -> dict:
        return {
            "segments": [s.to_dict() for s in self.segments],
            "flags": list(self.flags),
            "grid_resolution": len(self.grid_x) - 1,
        }


def _beta_spline(cfg: GameConfig, xs: np.ndarray) -> CubicHermiteSpline:
    """Cubic Hermite interpolant of beta through quadrature values and exact slopes."""
    vals = beta_uncalibrated(xs, cfg)
    slopes = np.asarray(beta_derivative(xs, cfg), dtype=float)
    return CubicHermiteSpline(xs, vals, slopes)


def calibrate_beta(cfg: GameConfig, grid_resolution: int = 4096,
                   max_passes: int = 64) -> SymmetricStrategy:
    """Repair the unconstrained curve wherever it asks for more than the type.

    Sweeping left to right: at the first up-crossing ``x1`` of the diagonal,
    follow the diagonal up to the first ``x_p`` where ``beta' = 1`` and shift
    the rest of the curve down so it continues from ``(x_p, x_p)``. Repeat
    from ``x_p`` until ``beta* <= x`` everywhere. If the slope never falls
    back to 1 before the curve leaves [0, 1] the diagonal is kept up to 1
    and ``flags`` records it.
    """
    _require(cfg, Mechanism.M6)
    if grid_resolution < 1000:
        raise ValueError("grid_resolution must be at least 1000")
    xs = np.linspace(0.0, 1.0, grid_resolution + 1)
    beta = _beta_spline(cfg, xs)

    def slope_gap(x):
        return beta_derivative(x, cfg) - 1.0

    segments: list[Segment] = []
    flags: list[str] = []
    start, offset = 0.0, 0.0
    for _ in range(max_passes):
        kind = "original" if offset == 0.0 else "shifted"

        def excess(x, off=offset):
            return beta(x) + off - x

        rest = xs[xs > start]
        vals = excess(rest)
        hit = np.nonzero(vals > 1e-12)[0]
        if hit.size == 0:
            segments.append(Segment(start, 1.0, kind, offset))
            break
        j = hit[0]
        left = rest[j - 1] if j > 0 else start
        x1 = optimize.brentq(excess, left, rest[j], xtol=ROOT_XTOL) if excess(left) < 0 else left

        # the crossing interval ends where the curve falls back under the diagonal
        back = np.nonzero(vals[j:] <= 0)[0]
        x2 = rest[j + back[0]] if back.size else 1.0
        sweep = np.linspace(x1, x2, 4 * max(int((x2 - x1) * grid_resolution), 1) + 1)
        below = np.nonzero(slope_gap(sweep[1:]) <= 0)[0]
        segments.append(Segment(start, x1, kind, offset))
        if below.size == 0:
            if x2 < 1.0:
                raise RuntimeError(f"no unit-slope point between crossings {x1} and {x2}")
            segments.append(Segment(x1, 1.0, "diagonal"))
            flags.append(f"no point with beta' = 1 after x1 = {x1:.12g}; diagonal kept up to 1")
            break
        a, b = sweep[below[0]], sweep[below[0] + 1]
        xp = optimize.brentq(slope_gap, a, b, xtol=ROOT_XTOL) if slope_gap(a) > 0 else a
        segments.append(Segment(x1, xp, "diagonal"))
        offset = xp - float(beta(xp))
        start = xp
    else:
        raise RuntimeError(f"calibration did not finish within {max_passes} passes")

    segments = [s for s in segments if s.hi > s.lo]
    return SymmetricStrategy(tuple(segments), xs, beta, tuple(flags))


def strategy_from_segments(cfg: GameConfig, segments, grid_resolution: int = 4096,
                           flags=()) -> SymmetricStrategy:
    """Rebuild a strategy from its segment list (e.g. read back from JSON)."""
    _require(cfg, Mechanism.M6)
    xs = np.linspace(0.0, 1.0, grid_resolution + 1)
    spline = _beta_spline(cfg, xs)
    segs = tuple(s if isinstance(s, Segment) else Segment(float(s["lo"]), float(s["hi"]), s["kind"],
                                                         float(s.get("offset", 0.0)))
                 for s in segments)
    return SymmetricStrategy(segs, xs, spline, tuple(flags))


# ---------------------------------------------------------------------------
# M7: proportional sharing with a participation cut-off
# ---------------------------------------------------------------------------

class ParticipationValue:
    """Estimator of ``y(q, t)``: expected reward of participating with type ``q``
    when every other user participates iff her type is at least ``t``.

    ``y(q, t) = sum_k C(N-1, k) F(t)^(N-1-k) (1-F(t))^k u(q, k; t)``, where
    ``u(q, k; t)`` averages ``R q / (q + T_1 + ... + T_k)`` over i.i.d. draws
    from F truncated to ``[t, 1]``. Terms with ``k <= quadrature_max_k`` are
    integrated (``k = 0`` is exactly ``R``, ``k = 1`` by quadrature); higher
    ones use Monte Carlo with one fixed block of uniforms, so ``y`` is a
    deterministic continuous function of ``(q, t)`` for a given seed.
    """

    def __init__(self, cfg: GameConfig, mc_samples: int = 200_000, seed: int = 0,
                 quadrature_max_k: int = 1):
        self.cfg = cfg
        self.quadrature_max_k = quadrature_max_k
        self.seed = seed
        n_mc = max(cfg.n_users - 1 - quadrature_max_k, 0)
        self.mc_samples = mc_samples if n_mc else 0
        rng = np.random.default_rng(seed)
        self._u = rng.random((self.mc_samples, cfg.n_users - 1)) if n_mc else None

    def weights(self, t: float) -> np.ndarray:
        N = self.cfg.n_users
        Ft = float(self.cfg.distribution.cdf(t))
        k = np.arange(N)
        return np.array([comb(N - 1, int(j)) for j in k]) * Ft ** (N - 1 - k) * (1.0 - Ft) ** k

    def _single_rival(self, q: float, t: float) -> float:
        cfg, dist = self.cfg, self.cfg.distribution
        mass = 1.0 - float(dist.cdf(t))
        val = _quad(lambda s: q / (q + s) * float(dist.density(s)), t, 1.0, cfg)
        return cfg.reward * val / mass

    def __call__(self, q: float, t: float) -> tuple[float, float]:
        """``(estimate, standard error)`` of ``y(q, t)``."""
        R = self.cfg.reward
        w = self.weights(t)
        exact_part = w[0] * R
        if q == 0.0:
            return float(exact_part), 0.0
        mc_ks = []
        for k in range(1, len(w)):
            if w[k] == 0.0:
                continue
            if k == 1 and self.quadrature_max_k >= 1:
                exact_part += w[1] * self._single_rival(q, t)
            else:
                mc_ks.append(k)
        if not mc_ks:
            return float(exact_part), 0.0
        draws = self.cfg.distribution.truncated_quantile(self._u, t)
        sums = np.cumsum(draws, axis=1)
        per_sample = np.zeros(self.mc_samples)
        for k in mc_ks:
            per_sample += w[k] * R * q / (q + sums[:, k - 1])
        est = exact_part + per_sample.mean()
        se = per_sample.std(ddof=1) / math.sqrt(self.mc_samples)
        return float(est), float(se)


def solve_m7(cfg: GameConfig, mc_samples: int = 200_000, seed: int = 0,
             quadrature_max_k: int = 1, bracket_points: int = 33) -> CutoffEquilibrium:
    """Cut-off ``x*`` with ``y(x*, x*) = c`` located by a bracketing sweep and bisection.

    ``y(0, 0) - c = -c < 0`` and ``y(1, 1) - c = R - c > 0``, so a sign change
    exists. The reported ``threshold_std_error`` propagates the Monte Carlo
    error of ``y`` through the local slope of ``y(t, t)``.
    """
    _require(cfg, Mechanism.M7)
    R, c = cfg.reward, cfg.cost
    if compare_exact(R, c) <= 0:
        raise ValueError("M7 needs R > c")
    if cfg.n_users == 1:
        return CutoffEquilibrium(Mechanism.M7, 0.0, R - c, "single user: always participates",
                                 0.0, 0.0, seed, 0)
    y = ParticipationValue(cfg, mc_samples, seed, quadrature_max_k)

    def excess(t):
        return y(t, t)[0] - c

    ts = np.linspace(0.0, 1.0, bracket_points)
    vals = [excess(float(t)) for t in ts]
    j = next(i for i in range(1, len(ts)) if vals[i - 1] < 0 <= vals[i])
    x = optimize.brentq(excess, ts[j - 1], ts[j], xtol=1e-12)
    est, se = y(x, x)
    h = 1e-4
    a, b = max(x - h, 0.0), min(x + h, 1.0)
    slope = (excess(b) - excess(a)) / (b - a)
    return CutoffEquilibrium(
        Mechanism.M7, float(x), float(est - c),
        f"bracketing sweep over {bracket_points} points, bisection on y(t, t) - c",
        se, se / abs(slope) if slope else math.inf, seed, y.mc_samples,
    )


def solve(cfg: GameConfig, mc_samples: int = 200_000, seed: int = 0, grid_resolution: int = 4096):
    mech = cfg.mechanism
    if mech is Mechanism.M5:
        return solve_m5(cfg)
    if mech is Mechanism.M6:
        return calibrate_beta(cfg, grid_resolution)
    if mech is Mechanism.M7:
        return solve_m7(cfg, mc_samples, seed)
    raise ValueError(f"{mech.value} is not a partial-information mechanism")
