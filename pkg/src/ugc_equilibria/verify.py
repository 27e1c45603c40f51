"""Brute-force and stochastic oracles that certify or refute solver output.

Nothing here calls into the solvers. Deviation searches are written from
the utility definitions directly so they can serve as ground truth.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ActionProfile,
    GameConfig,
    Mechanism,
    exact,
    exact_utility,
    utility,
    validate_profile,
)

#: Step used to approach a supremum that is not attained (e.g. "just above v").
ETA = 1e-9

CONTINUOUS_TOL = 1e-9


@dataclass(frozen=True)
class DeviationReport:
    is_equilibrium: bool
    worst_deviator: int | None
    best_deviation: float | None
    gain: float
    method: str
    tolerance: float
    std_error: float | None = None
    deviator_type: float | None = None
    gains: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {
            "is_equilibrium": self.is_equilibrium,
            "worst_deviator": self.worst_deviator,
            "best_deviation": self.best_deviation,
            "gain": self.gain,
            "method": self.method,
            "tolerance": self.tolerance,
            "std_error": self.std_error,
            "deviator_type": self.deviator_type,
            "gains": list(self.gains),
        }


# ---------------------------------------------------------------------------
# full information: unilateral deviations
# ---------------------------------------------------------------------------

def _proportional_best_deviation(i: int, acts: np.ndarray, cfg: GameConfig):
    """Exact maximiser of ``R z/(z + X) - c z/q`` over ``z in [0, q]``.

    The objective is concave in ``z`` when ``X > 0`` so the clipped
    stationary point is global. With ``X = 0`` the supremum ``R`` is only
    approached as ``z -> 0+``.
    """
    q, R, c = cfg.types[i], cfg.reward, cfg.cost
    x_minus = float(acts.sum() - acts[i])
    if x_minus <= 0.0:
        z = min(q, ETA)
        return z, R - c * z / q
    z = min(max(math.sqrt(R * q * x_minus / c) - x_minus, 0.0), q)
    u = R * z / (z + x_minus) - c * z / q if z > 0 else 0.0
    return z, u


def _topk_utilities(z: np.ndarray, others: np.ndarray, k: int, R: float, c: float, q: float):
    """Top-K utility of contributing each ``z`` against fixed ``others``."""
    pos = np.sort(others[others > 0])
    lo = np.searchsorted(pos, z, side="left")
    hi = np.searchsorted(pos, z, side="right")
    above = len(pos) - hi
    tied = 1 + (hi - lo)
    slots = k - above
    share = np.where(tied <= slots, R / k, R * np.maximum(slots, 0) / (k * tied))
    reward = np.where((z > 0) & (slots > 0), share, 0.0)
    return reward - c * z / q


def _topk_candidates(others: np.ndarray, q: float) -> np.ndarray:
    # reward is a step function of z with jumps at the others' values and
    # cost is increasing, so the supremum sits at a tie or just above one
    pos = others[others > 0]
    cands = np.concatenate(([0.0, ETA, q], pos, pos + ETA))
    return np.unique(cands[cands <= q])


def _topk_best_deviation(i: int, acts: np.ndarray, cfg: GameConfig, grid_step: float | None):
    q = cfg.types[i]
    others = np.delete(acts, i)
    cands = _topk_candidates(others, q)
    if grid_step:
        cands = np.unique(np.concatenate((cands, np.arange(0.0, q, grid_step))))
    u = _topk_utilities(cands, others, cfg.top_k, cfg.reward, cfg.cost, q)
    j = int(np.argmax(u))
    return float(cands[j]), float(u[j])


def _continuous_gains(acts: np.ndarray, cfg: GameConfig, grid_step: float | None = None):
    profile = ActionProfile(acts)
    out = []
    for i in range(cfg.n_users):
        if cfg.mechanism.allocation == "topk":
            z, u_best = _topk_best_deviation(i, acts, cfg, grid_step)
        else:
            z, u_best = _proportional_best_deviation(i, acts, cfg)
        out.append((z, u_best - utility(i, profile, cfg)))
    return out


def verify_pne(profile: ActionProfile, cfg: GameConfig, tol: float | None = None) -> DeviationReport:
    """Search every user's best unilateral deviation from ``profile``.

    Binary mechanisms flip each user's participation bit and compare exact
    rational utilities (default ``tol = 0``). The proportional continuous
    mechanism uses the closed-form maximiser of the concave utility. The
    top-K continuous mechanism scans a ``1e-4`` grid refined with the
    break points of the step-shaped reward (ties and "just above" ties).
    """
    mech = cfg.mechanism
    if not mech.full_information:
        raise ValueError(f"verify_pne handles full-information mechanisms, not {mech.value}")
    check = validate_profile(profile, cfg)
    if not check.ok:
        raise ValueError(f"invalid profile: {check.violations}")

    if mech.binary:
        tol = 0.0 if tol is None else tol
        acts = list(profile.actions)
        gains, moves = [], []
        for i in range(cfg.n_users):
            flipped = list(acts)
            flipped[i] = 0.0 if acts[i] > 0 else cfg.types[i]
            g = exact_utility(i, flipped, cfg) - exact_utility(i, acts, cfg)
            gains.append(g)
            moves.append(flipped[i])
        worst = max(range(len(gains)), key=lambda i: gains[i])
        ok = all(g <= exact(tol) for g in gains)
        return DeviationReport(ok, worst, moves[worst], float(gains[worst]), "subset-enum", tol,
                               gains=tuple(float(g) for g in gains))

    tol = CONTINUOUS_TOL if tol is None else tol
    if mech is Mechanism.M4:
        res, method = _continuous_gains(profile.array, cfg), "analytic-BR"
    else:
        res, method = _continuous_gains(profile.array, cfg, grid_step=1e-4), "grid"
    gains = [g for _, g in res]
    worst = int(np.argmax(gains))
    return DeviationReport(gains[worst] <= tol, worst, res[worst][0], gains[worst], method, tol,
                           gains=tuple(gains))


# ---------------------------------------------------------------------------
# binary mechanisms: exhaustive support enumeration
# ---------------------------------------------------------------------------

def _mask_chunks(n: int, chunk: int = 1 << 15):
    bits = np.arange(n)
    for start in range(0, 1 << n, chunk):
        ids = np.arange(start, min(start + chunk, 1 << n))
        yield ids, ((ids[:, None] >> bits) & 1).astype(bool)


def _topk_binary_tables(cfg: GameConfig):
    # staying / joining decisions depend only on (free slots s, tie size t)
    N, K = cfg.n_users, cfg.top_k
    R, c = exact(cfg.reward), exact(cfg.cost)
    stay = np.zeros((K + 1, N + 2), dtype=bool)
    join = np.zeros((K + 1, N + 2), dtype=bool)
    for s in range(1, K + 1):
        for t in range(1, N + 2):
            lhs, rhs = R * min(s, t), c * K * t
            stay[s, t] = lhs >= rhs
            join[s, t] = lhs > rhs
    return stay, join


def enumerate_binary_equilibria(cfg: GameConfig, max_users: int = 20) -> list[ActionProfile]:
    """All pure equilibria of a binary full-information game, by support.

    Profiles are returned in increasing order of their support bitmask
    (bit ``i`` set when user ``i`` participates).
    """
    mech = cfg.mechanism
    if not (mech.binary and mech.full_information):
        raise ValueError(f"{mech.value} is not a binary full-information mechanism")
    N = cfg.n_users
    if N > max_users:
        raise ValueError(f"N = {N} exceeds the enumeration cap of {max_users}")
    q = cfg.q
    found = []
    if mech.allocation == "topk":
        stay, join = _topk_binary_tables(cfg)
        G = (q[None, :] > q[:, None]).astype(np.int32)
        E = (q[None, :] == q[:, None]).astype(np.int32)
        K = cfg.top_k
        for ids, masks in _mask_chunks(N):
            m = masks.astype(np.int32)
            above = m @ G.T
            ties = m @ E.T
            slots = K - above
            s_idx = np.clip(slots, 0, K)
            t_member = np.clip(ties, 0, N + 1)
            t_joiner = np.clip(ties + 1, 0, N + 1)
            stays = (slots > 0) & stay[s_idx, t_member]
            joins = (slots > 0) & join[s_idx, t_joiner]
            eq = np.all(np.where(masks, stays, ~joins), axis=1)
            found.extend(int(x) for x in ids[eq])
    else:
        R, c = cfg.reward, cfg.cost
        for ids, masks in _mask_chunks(N):
            S = masks @ q
            with np.errstate(divide="ignore", invalid="ignore"):
                leave = np.where(masks, c - R * q[None, :] / S[:, None], -np.inf)
            join = np.where(masks, -np.inf, R * q[None, :] / (S[:, None] + q[None, :]) - c)
            gain = np.maximum(leave, join).max(axis=1)
            cands = ids[gain <= 1e-9]
            # borderline rows are settled in exact arithmetic
            for x in cands:
                prof = _mask_profile(int(x), cfg)
                if verify_pne(prof, cfg).is_equilibrium:
                    found.append(int(x))
    return [_mask_profile(x, cfg) for x in sorted(found)]


def _mask_profile(mask: int, cfg: GameConfig) -> ActionProfile:
    return ActionProfile([q if (mask >> i) & 1 else 0.0 for i, q in enumerate(cfg.types)])


# ---------------------------------------------------------------------------
# continuous mechanisms: grid scan for stable points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanResult:
    no_equilibrium: bool
    n_profiles: int
    threshold: float
    witnesses: dict = field(default_factory=dict, repr=False)
    stable_profiles: tuple[tuple[float, ...], ...] = ()
    note: str = ""

    def to_dict(self, max_listed: int = 20) -> dict:
        return {
            "no_equilibrium": self.no_equilibrium,
            "n_profiles": self.n_profiles,
            "threshold": self.threshold,
            "n_stable": len(self.stable_profiles),
            "stable_profiles": [list(p) for p in self.stable_profiles[:max_listed]],
            "witnesses": [
                {"profile": list(p), "user": u, "deviation": z, "gain": g}
                for p, (u, z, g) in itertools.islice(self.witnesses.items(), max_listed)
            ],
            "note": self.note,
        }


def _user_grid(q: float, step: float) -> np.ndarray:
    pts = np.round(np.arange(0.0, q + 1e-12, step), 12)
    pts = pts[pts <= q]
    if q - pts[-1] > 1e-12:
        pts = np.append(pts, q)
    return pts


def grid_nonexistence_scan(cfg: GameConfig, step: float = 0.05,
                           max_profiles: int = 2_000_000) -> ScanResult:
    """Look for grid profiles where nobody gains more than ``step * c``.

    Returns ``no_equilibrium=True`` iff every grid profile has a profitable
    deviation above that threshold; ``witnesses`` maps each profile to
    ``(user, deviation, gain)``. This corroborates, not proves, nonexistence.
    """
    mech = cfg.mechanism
    if mech not in (Mechanism.M2, Mechanism.M4):
        raise ValueError(f"grid scan needs a continuous full-information mechanism, not {mech.value}")
    if cfg.n_users > 4:
        raise ValueError("grid scan supports at most 4 users")
    threshold = step * cfg.cost
    if mech is Mechanism.M2 and cfg.n_users <= cfg.top_k:
        return ScanResult(False, 0, threshold,
                          note="degenerate: N <= K, every participant earns R/K regardless of quality")
    grids = [_user_grid(q, step) for q in cfg.types]
    n_profiles = math.prod(len(g) for g in grids)
    if n_profiles > max_profiles:
        raise ValueError(f"scan budget exceeded: {n_profiles} profiles > {max_profiles}")

    witnesses, stable = {}, []
    for point in itertools.product(*grids):
        acts = np.array(point)
        res = _continuous_gains(acts, cfg)
        i = max(range(len(res)), key=lambda j: res[j][1])
        z, g = res[i]
        key = tuple(float(v) for v in point)
        if g > threshold:
            witnesses[key] = (i, float(z), float(g))
        else:
            stable.append(key)
    return ScanResult(not stable, n_profiles, threshold, witnesses, tuple(stable))


# ---------------------------------------------------------------------------
# partial information: Monte Carlo deviation check
# ---------------------------------------------------------------------------

def _strategy_actions(strategy, types: np.ndarray) -> np.ndarray:
    if hasattr(strategy, "threshold"):
        return np.where(types >= strategy.threshold, types, 0.0)
    return np.asarray(strategy(types), dtype=float)


def mc_symmetric_check(strategy, cfg: GameConfig, samples: int = 1_000_000, seed: int = 0,
                       n_types: int = 20, n_deviations: int = 101, z: float = 3.0,
                       chunk: int = 250_000) -> DeviationReport:
    """Monte Carlo check of a symmetric strategy in a partial-information game.

    ``samples`` profiles of the other N-1 users are drawn from F and play
    ``strategy``. A designated deviator, for each of ``n_types`` sampled
    types ``q``, compares the prescribed action with its alternatives:
    ``{0, q}`` in binary mechanisms, otherwise ``beta*(x)`` for ``x`` on an
    ``n_deviations``-point grid together with ``0`` and ``q``. The check
    passes iff no alternative beats the prescribed action by more than
    ``z`` standard errors of the paired difference.
    """
    mech = cfg.mechanism
    if mech.full_information:
        raise ValueError(f"{mech.value} is a full-information mechanism")
    dist, N = cfg.distribution, cfg.n_users
    rng = np.random.default_rng(seed)
    n_others = N - 1

    # summary statistic of the others per sample: K-th largest action for
    # top-K, total contributed quality for proportional
    stats = []
    for start in range(0, samples, chunk):
        m = min(chunk, samples - start)
        acts = _strategy_actions(strategy, dist.sample(rng, (m, n_others)))
        if mech.allocation == "topk":
            K = cfg.top_k
            if n_others < K:
                stats.append(np.zeros(m))
            else:
                stats.append(np.partition(acts, n_others - K, axis=1)[:, n_others - K])
        else:
            stats.append(acts.sum(axis=1))
    stat = np.concatenate(stats) if stats else np.zeros(0)
    if mech.allocation == "topk":
        stat = np.sort(stat)

    dev_types = np.sort(dist.sample(rng, n_types))
    if mech.binary:
        grid_actions = None
    else:
        grid_actions = _strategy_actions(strategy, np.linspace(0.0, 1.0, n_deviations))

    best = None  # (margin, gain, se, action, q)
    for q in dev_types:
        q = float(q)
        if q <= 0.0:
            continue
        a0 = float(_strategy_actions(strategy, np.array([q]))[0])
        if mech.binary:
            cands = np.array([0.0, q])
        else:
            cands = np.unique(np.concatenate(([0.0, q], grid_actions[grid_actions <= q])))
        cands = cands[cands != a0]
        if cands.size == 0:
            continue
        if mech.allocation == "topk":
            gain, se = _topk_mc_gain(stat, cands, a0, q, cfg)
        else:
            gain, se = _proportional_mc_gain(stat, cands, a0, q, cfg)
        margin = gain - z * se
        j = int(np.argmax(margin))
        if best is None or margin[j] > best[0]:
            best = (float(margin[j]), float(gain[j]), float(se[j]), float(cands[j]), q)

    if best is None:
        return DeviationReport(True, 0, None, 0.0, "monte-carlo", 0.0, 0.0, None)
    margin, gain, se, action, q = best
    return DeviationReport(margin <= 0.0, 0, action, gain, "monte-carlo", z * se, se, q)


def _topk_mc_gain(tau_sorted: np.ndarray, cands: np.ndarray, a0: float, q: float, cfg: GameConfig):
    # a wins iff a > 0 and a beats the K-th largest of the others
    M = tau_sorted.size
    R, c, K = cfg.reward, cfg.cost, cfg.top_k

    def win_rate(a):
        a = np.asarray(a, dtype=float)
        return np.where(a > 0, np.searchsorted(tau_sorted, a, side="left") / M, 0.0)

    p = win_rate(cands) - win_rate(a0)
    gain = R / K * p - c * (cands - a0) / q
    # the paired indicator difference takes values in {0, sign(p)}; the
    # Agresti-Coull adjustment keeps the error positive when no sample
    # separates the two actions
    p_adj = (np.abs(p) * M + 2.0) / (M + 4.0)
    se = R / K * np.sqrt(p_adj * (1.0 - p_adj) / (M + 4.0))
    return gain, se


def _proportional_mc_gain(totals: np.ndarray, cands: np.ndarray, a0: float, q: float, cfg: GameConfig):
    M = totals.size
    R, c = cfg.reward, cfg.cost

    def rewards(a):
        if a <= 0:
            return np.zeros(M)
        return R * a / (a + totals)

    r0 = rewards(a0)
    gains, ses = [], []
    for a in cands:
        d = rewards(float(a)) - r0
        gains.append(d.mean() - c * (a - a0) / q)
        ses.append(d.std(ddof=1) / math.sqrt(M))
    return np.array(gains), np.array(ses)

