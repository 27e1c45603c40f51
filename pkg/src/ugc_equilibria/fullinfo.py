"""Equilibrium solvers for the four full-information mechanisms.

M1  top-K allocation, binary actions
M2  top-K allocation, continuous actions
M3  proportional allocation, binary actions
M4  proportional allocation, continuous actions
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from math import comb

import numpy as np

from .core import ActionProfile, GameConfig, Mechanism, compare_exact, exact
from .verify import enumerate_binary_equilibria, verify_pne

#: slack on the strict feasibility inequalities 0 < x < q of local solutions
FEASIBILITY_SLACK = 1e-12


class Verdict(str, enum.Enum):
    UNIQUE = "unique"
    MULTIPLE = "multiple"
    NONE = "none"
    MARGINAL = "marginal-multiplicity"


class EquilibriumSearchError(RuntimeError):
    """The M4 search exhausted every local game without a certified profile."""


@dataclass(frozen=True)
class EquilibriumOutcome:
    verdict: Verdict
    profiles: tuple[ActionProfile, ...] = ()
    certificate: tuple[float, ...] = ()
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "profiles": [list(p.actions) for p in self.profiles],
            "certificate": list(self.certificate),
            "notes": self.notes,
        }


def _require(cfg: GameConfig, mech: Mechanism):
    if cfg.mechanism is not mech:
        raise ValueError(f"expected a {mech.value} config, got {cfg.mechanism.value}")


def _certify(profiles, cfg: GameConfig, tol=None) -> tuple[float, ...]:
    gains = []
    for p in profiles:
        report = verify_pne(p, cfg, tol)
        if not report.is_equilibrium:
            raise EquilibriumSearchError(
                f"profile {p.actions} failed certification: user {report.worst_deviator} "
                f"gains {report.gain:.3e} by moving to {report.best_deviation}"
            )
        gains.append(report.gain)
    return tuple(gains)


def _top_set_profile(cfg: GameConfig, members) -> ActionProfile:
    members = set(members)
    return ActionProfile([q if i in members else 0.0 for i, q in enumerate(cfg.types)])


# ---------------------------------------------------------------------------
# M1
# ---------------------------------------------------------------------------

def solve_m1(cfg: GameConfig) -> EquilibriumOutcome:
    """Top-K, binary: nobody, everybody-in-the-top-K, or the marginal case."""
    _require(cfg, Mechanism.M1)
    N, K = cfg.n_users, cfg.top_k
    zero = ActionProfile([0.0] * N)
    side = compare_exact(cfg.reward, K * exact(cfg.cost))
    if side < 0:
        return EquilibriumOutcome(Verdict.UNIQUE, (zero,), _certify([zero], cfg),
                                  "R < Kc: nobody contributes")
    if side == 0:
        top = _top_set_profile(cfg, range(min(K, N)))
        count = sum(comb(N, k) for k in range(min(K, N) + 1))
        reps = (zero, top)
        return EquilibriumOutcome(
            Verdict.MARGINAL, reps, _certify(reps, cfg),
            f"R = Kc: every group of at most K users contributing is an equilibrium "
            f"({count} supports); all-zero and the top-K set are listed",
        )

    # R > Kc: the users strictly above the K-th type always contribute; a tie
    # group at the K-th type shares the remaining slots
    q = cfg.types
    if N <= K:
        prof = _top_set_profile(cfg, range(N))
        return EquilibriumOutcome(Verdict.UNIQUE, (prof,), _certify([prof], cfg),
                                  "R > Kc and N <= K: everybody contributes")
    qk = q[K - 1]
    above = [i for i in range(N) if q[i] > qk]
    tied = [i for i in range(N) if q[i] == qk]
    slots = K - len(above)
    R, c = exact(cfg.reward), exact(cfg.cost)
    # largest number of tied participants that still break even
    n_tied = slots
    while n_tied < len(tied) and R * slots >= c * K * (n_tied + 1):
        n_tied += 1
    prof = _top_set_profile(cfg, above + tied[:n_tied])
    # joining at exact break-even leaves the smaller group stable as well
    break_even = n_tied > slots and R * slots == c * K * n_tied
    if n_tied == len(tied) and not break_even:
        verdict, note = Verdict.UNIQUE, "R > Kc: the top K users contribute"
    elif n_tied == len(tied):
        verdict = Verdict.MULTIPLE
        note = (f"R > Kc with {len(tied)} users tied at the K-th type: the last of them "
                f"breaks even, so smaller groups are stable too")
    else:
        verdict = Verdict.MULTIPLE
        note = (f"R > Kc with {len(tied)} users tied at the K-th type: any {n_tied} of them "
                f"can take part; the lowest indices are listed")
    if n_tied > slots:
        note += f"; {n_tied} tied users share {slots} slot(s)"
    return EquilibriumOutcome(verdict, (prof,), _certify([prof], cfg), note)


# ---------------------------------------------------------------------------
# M2
# ---------------------------------------------------------------------------

def solve_m2(cfg: GameConfig, confirm: bool = False, step: float = 0.05) -> EquilibriumOutcome:
    """Top-K, continuous: no pure equilibrium exists.

    Any participant who is not tied can shade her quality down and keep her
    rank, and nobody at zero is safe from a small positive entry. The one
    escape is a tie among more than K users who all sit at a shared maximal
    type and break even on the split reward; that case is returned as an
    equilibrium. With ``confirm`` the verdict is corroborated by a grid scan
    (N <= 4).
    """
    _require(cfg, Mechanism.M2)
    from .verify import grid_nonexistence_scan

    N, K = cfg.n_users, cfg.top_k
    R, c = exact(cfg.reward), exact(cfg.cost)
    q = cfg.types
    top = [i for i in range(N) if q[i] == q[0]]
    # t tied users at the common cap each get R/t; need t > K and R/t >= c
    t = len(top)
    while t > K and R < c * t:
        t -= 1
    if t > K:
        prof = _top_set_profile(cfg, top[:t])
        verdict = Verdict.UNIQUE if t == len(top) else Verdict.MULTIPLE
        return EquilibriumOutcome(
            verdict, (prof,), _certify([prof], cfg),
            f"{t} users tied at the maximal type share the reward at their caps",
        )

    if compare_exact(cfg.reward, K * c) > 0 and N > K:
        notes = "R > Kc and N > K: contributors would undercut each other towards zero"
    else:
        notes = ("outside the main case R > Kc, N > K: still no equilibrium since any "
                 "participant can lower her quality without losing reward and the empty "
                 "profile invites entry")
    if confirm:
        if N <= K:
            notes += "; grid scan not applicable (N <= K)"
        else:
            scan = grid_nonexistence_scan(cfg, step)
            notes += (f"; grid scan at step {step}: "
                      f"{'no' if scan.no_equilibrium else len(scan.stable_profiles)} stable profiles "
                      f"out of {scan.n_profiles}")
    return EquilibriumOutcome(Verdict.NONE, (), (), notes)


# ---------------------------------------------------------------------------
# M3
# ---------------------------------------------------------------------------

def m3_prefix_index(cfg: GameConfig) -> int:
    """Number j of leading users with ``R q_j / sum_{k<=j} q_k > c`` (R > c)."""
    R, c = exact(cfg.reward), exact(cfg.cost)
    total, j = exact(0), 0
    for i, q in enumerate(cfg.types):
        qe = exact(q)
        total += qe
        if R * qe > c * total:
            j = i + 1
        else:
            break
    return j


def solve_m3(cfg: GameConfig, enumeration_cap: int = 20) -> EquilibriumOutcome:
    """Proportional, binary.

    For R > c the prefix of the ``m3_prefix_index`` strongest users is an
    equilibrium; other supports may be as well, so for N up to
    ``enumeration_cap`` all of them are found by exhaustive search.
    """
    _require(cfg, Mechanism.M3)
    N = cfg.n_users
    zero = ActionProfile([0.0] * N)
    side = compare_exact(cfg.reward, cfg.cost)
    if side < 0:
        return EquilibriumOutcome(Verdict.UNIQUE, (zero,), _certify([zero], cfg),
                                  "R < c: nobody contributes")
    if side == 0:
        singles = tuple(_top_set_profile(cfg, [i]) for i in range(N))
        profs = (zero,) + singles
        return EquilibriumOutcome(Verdict.MARGINAL, profs, _certify(profs, cfg),
                                  "R = c: nobody, or any single user, contributing")
    j = m3_prefix_index(cfg)
    prefix = _top_set_profile(cfg, range(j))
    profiles = [prefix]
    note = f"prefix equilibrium with the first {j} users"
    if N <= enumeration_cap:
        others = [p for p in enumerate_binary_equilibria(cfg, enumeration_cap) if p != prefix]
        profiles.extend(others)
        note += f"; exhaustive search found {len(profiles)} equilibria in total"
    else:
        note += f"; N > {enumeration_cap}, other equilibria not enumerated (uniqueness not checked)"
    verdict = Verdict.UNIQUE if len(profiles) == 1 else Verdict.MULTIPLE
    return EquilibriumOutcome(verdict, tuple(profiles), _certify(profiles, cfg), note)


# ---------------------------------------------------------------------------
# M4
# ---------------------------------------------------------------------------

def best_response_m4(q_i: float, x_minus: float, cfg: GameConfig, epsilon: float = 0.0) -> float | None:
    """Best quality for a user of type ``q_i`` against total ``x_minus``.

    The unconstrained stationary point ``sqrt(R q x_minus / c) - x_minus``
    clipped to ``[epsilon, q_i]``. Returns ``None`` when ``x_minus == 0``:
    any positive contribution is then beaten by half of it.
    """
    if x_minus < 0:
        raise ValueError("x_minus must be non-negative")
    if not 0.0 < q_i <= 1.0:
        raise ValueError("q_i must lie in (0, 1]")
    if x_minus == 0.0:
        return None
    x = math.sqrt(cfg.reward * q_i * x_minus / cfg.cost) - x_minus
    return min(max(x, epsilon), q_i)


@dataclass(frozen=True)
class DynamicsResult:
    profile: ActionProfile | None
    converged: bool
    iterations: int
    damping: float
    history: tuple[tuple[float, ...], ...] = ()
    no_best_response: bool = False

    def to_dict(self) -> dict:
        return {
            "profile": None if self.profile is None else list(self.profile.actions),
            "converged": self.converged,
            "iterations": self.iterations,
            "damping": self.damping,
            "no_best_response": self.no_best_response,
        }


def _iterate(q: np.ndarray, R: float, c: float, eps: float, damping: float,
             max_iters: int, tol: float):
    x = q.copy()
    history = [tuple(x)]
    for it in range(1, max_iters + 1):
        x_minus = x.sum() - x
        br = np.clip(np.sqrt(R * q * x_minus / c) - x_minus, eps, q)
        new = (1.0 - damping) * x + damping * br
        history.append(tuple(new))
        if np.max(np.abs(new - x)) < tol:
            return new, True, it, history
        x = new
    return x, False, max_iters, history


def perturbed_dynamics(cfg: GameConfig, epsilon: float = 1e-8, max_iters: int = 10_000,
                       tol: float = 1e-13) -> DynamicsResult:
    """Simultaneous best-response iteration in the game with actions floored at ``epsilon``.

    Starts from ``x = q``. If the plain update does not settle, it is rerun
    once with half-step damping.
    """
    _require(cfg, Mechanism.M4)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    q = cfg.q
    if epsilon >= q.min():
        raise ValueError("epsilon must be below every type")
    if cfg.n_users == 1:
        return DynamicsResult(None, False, 0, 1.0, no_best_response=True)
    result = None
    for damping in (1.0, 0.5):
        x, ok, its, hist = _iterate(q, cfg.reward, cfg.cost, epsilon, damping, max_iters, tol)
        result = DynamicsResult(ActionProfile(x), ok, its, damping, tuple(hist))
        if ok:
            break
    return result


def eq_interior(cfg: GameConfig, n: int) -> np.ndarray:
    """Unconstrained joint best response of the local game on the first ``n`` users."""
    if not 2 <= n <= cfg.n_users:
        raise ValueError(f"local size n={n} must lie in [2, {cfg.n_users}]")
    q = cfg.q[:n]
    inv = np.sum(1.0 / q)
    total = cfg.reward * (n - 1) / (cfg.cost * inv)
    return total * (1.0 - (n - 1) / (q * inv))


@dataclass(frozen=True)
class LocalGameSolution:
    n: int
    m: int
    profile: ActionProfile
    feasible: bool
    reason: str = ""


def eq_boundary(cfg: GameConfig, n: int, m: int) -> LocalGameSolution:
    """Local game on the first ``n`` users with the first ``m`` pinned at ``x = q``.

    The remaining users take the interior best response to the pinned total.
    ``feasible`` means all of them land inside ``(0, q_i)`` and the pinned
    users do not want to lower their contribution.
    """
    if not 1 <= m <= n <= cfg.n_users:
        raise ValueError(f"need 1 <= m <= n <= N, got m={m}, n={n}")
    if n == 1:
        raise ValueError("a single pinned user has no opponents (x_minus = 0)")
    R, c = cfg.reward, cfg.cost
    q = cfg.q[:n]
    Qm = float(q[:m].sum())
    slack = FEASIBILITY_SLACK

    if m == n:
        # every user contributes her type; need R >= c Q^2 / (q (Q - q)) at the extremes
        acts = q.copy()
        need = max(c * Qm ** 2 / (q[i] * (Qm - q[i])) for i in {0, m - 1})
        ok = R >= need * (1.0 - slack)
        reason = "" if ok else f"R = {R} < {need}"
        return LocalGameSolution(n, m, ActionProfile(acts), ok, reason)

    free = q[m:]
    A = float(np.sum(c / (R * free)))
    d = n - m - 1
    s = (d + math.sqrt(d * d + 4.0 * Qm * A)) / (2.0 * A)
    x_free = s - c * s * s / (R * free)
    acts = np.concatenate((q[:m], x_free))

    if R < 4.0 * c:
        return LocalGameSolution(n, m, ActionProfile(np.clip(acts, 0, q)), False,
                                 "R < 4c: no user can be pinned at her type")
    if np.any(x_free <= -slack) or np.any(x_free >= free + slack):
        return LocalGameSolution(n, m, ActionProfile(np.clip(acts, 0, q)), False,
                                 "free users outside (0, q)")
    root = math.sqrt(1.0 - 4.0 * c / R)
    lower = R * q[0] / (2.0 * c) * (1.0 - root)
    upper = R * q[m - 1] / (2.0 * c) * (1.0 + root)
    total = Qm + float(x_free.sum())
    ok = lower * (1.0 - slack) <= total <= upper * (1.0 + slack)
    reason = "" if ok else f"pinned users would deviate: total {total} outside [{lower}, {upper}]"
    return LocalGameSolution(n, m, ActionProfile(np.clip(acts, 0, q)), ok, reason)


def _lifts(local: np.ndarray, n: int, cfg: GameConfig) -> bool:
    # outsiders stay out iff the local total is at least R q_{n+1} / c
    if n == cfg.n_users:
        return True
    need = cfg.reward * cfg.types[n] / cfg.cost
    return float(local.sum()) >= need * (1.0 - FEASIBILITY_SLACK)


def solve_m4(cfg: GameConfig, all_equilibria: bool = False, tol: float = 1e-9) -> EquilibriumOutcome:
    """Proportional, continuous: search the induced local games.

    For local sizes ``n = 2..N`` the interior candidate and the candidates
    with ``m = 1..n`` pinned users are built; each feasible one is extended
    with zeros, kept if the outsiders would stay out, and certified with the
    analytic deviation check. The traversal always runs to the end so the
    verdict can tell one equilibrium from several; only the first is
    returned unless ``all_equilibria``.
    """
    _require(cfg, Mechanism.M4)
    N = cfg.n_users
    if N < 2:
        raise ValueError("M4 needs at least two users (a lone user has no best response)")
    q = cfg.q
    found: list[tuple[int, int, ActionProfile, float]] = []
    diagnostics = []

    def consider(n, m, local):
        if not _lifts(local, n, cfg):
            diagnostics.append(f"n={n} m={m}: outsiders would enter")
            return
        full = ActionProfile(np.concatenate((local, np.zeros(N - n))))
        report = verify_pne(full, cfg, tol)
        if not report.is_equilibrium:
            diagnostics.append(f"n={n} m={m}: certification gain {report.gain:.3e}")
            return
        if any(np.max(np.abs(full.array - p.array)) < 1e-9 for _, _, p, _ in found):
            return
        found.append((n, m, full, report.gain))

    for n in range(2, N + 1):
        y = eq_interior(cfg, n)
        if np.all(y >= -FEASIBILITY_SLACK) and np.all(y <= q[:n] + FEASIBILITY_SLACK):
            consider(n, 0, np.clip(y, 0.0, q[:n]))
        for m in range(1, n + 1):
            sol = eq_boundary(cfg, n, m)
            if sol.feasible:
                consider(n, m, sol.profile.array)
            else:
                diagnostics.append(f"n={n} m={m}: {sol.reason}")

    if not found:
        raise EquilibriumSearchError("no certified equilibrium found:\n  " + "\n  ".join(diagnostics))
    verdict = Verdict.UNIQUE if len(found) == 1 else Verdict.MULTIPLE
    keep = found if all_equilibria else found[:1]
    notes = "; ".join(f"local game n={n}, pinned m={m}" for n, m, _, _ in keep)
    if len(found) > 1 and not all_equilibria:
        notes += f"; {len(found)} equilibria exist, first listed"
    return EquilibriumOutcome(verdict, tuple(p for _, _, p, _ in keep),
                              tuple(g for _, _, _, g in keep), notes)


def solve(cfg: GameConfig, all_equilibria: bool = False) -> EquilibriumOutcome:
    mech = cfg.mechanism
    if mech is Mechanism.M1:
        return solve_m1(cfg)
    if mech is Mechanism.M2:
        return solve_m2(cfg)
    if mech is Mechanism.M3:
        return solve_m3(cfg)
    if mech is Mechanism.M4:
        return solve_m4(cfg, all_equilibria=all_equilibria)
    raise ValueError(f"{mech.value} is not a full-information mechanism")
