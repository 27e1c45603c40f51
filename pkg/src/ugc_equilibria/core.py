"""Game model shared by every solver and oracle.

Users are indexed from 0 in the order of their (non-increasing) types.
A user with type ``q`` who contributes quality ``x`` pays ``c * x / q``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised when a game configuration violates the model constraints."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class Mechanism(str, enum.Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"
    M6 = "M6"
    M7 = "M7"

    @property
    def allocation(self) -> str:
        return "topk" if self in _TOPK else "proportional"

    @property
    def binary(self) -> bool:
        return self in _BINARY

    @property
    def full_information(self) -> bool:
        return self in _FULL_INFO


_TOPK = {Mechanism.M1, Mechanism.M2, Mechanism.M5, Mechanism.M6}
_BINARY = {Mechanism.M1, Mechanism.M3, Mechanism.M5, Mechanism.M7}
_FULL_INFO = {Mechanism.M1, Mechanism.M2, Mechanism.M3, Mechanism.M4}


def exact(value) -> Fraction:
    """Exact rational reading of a number, taking floats at their decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return Fraction(int(value))
    return Fraction(repr(float(value)))


def compare_exact(a, b) -> int:
    """Sign of ``a - b`` computed on exact decimal values."""
    d = exact(a) - exact(b)
    return (d > 0) - (d < 0)


@dataclass(frozen=True)
class TypeDistribution:
    """A type distribution on [0, 1] given by a piecewise-linear CDF.

    The uniform distribution is the two-knot special case; ``kind`` records
    which one was requested so closed forms can be used where they exist.
    """

    kind: str = "uniform"
    knots: tuple[tuple[float, float], ...] = ((0.0, 0.0), (1.0, 1.0))
    _x: np.ndarray = field(init=False, repr=False, compare=False)
    _F: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("uniform", "piecewise"):
            raise ConfigError("distribution.kind", f"unknown kind {self.kind!r}")
        if self.kind == "uniform":
            knots = ((0.0, 0.0), (1.0, 1.0))
        else:
            try:
                knots = tuple((float(a), float(b)) for a, b in self.knots)
            except (TypeError, ValueError):
                raise ConfigError("distribution.knots", "knots must be [x, F(x)] pairs") from None
        xs = np.array([k[0] for k in knots])
        Fs = np.array([k[1] for k in knots])
        if len(knots) < 2:
            raise ConfigError("distribution.knots", "need at least two knots")
        if xs[0] != 0.0 or xs[-1] != 1.0:
            raise ConfigError("distribution.knots", "knots must start at x=0 and end at x=1")
        if Fs[0] != 0.0 or Fs[-1] != 1.0:
            raise ConfigError("distribution.knots", "CDF must satisfy F(0)=0 and F(1)=1")
        if np.any(np.diff(xs) <= 0):
            raise ConfigError("distribution.knots", "knot positions must be strictly increasing")
        if np.any(np.diff(Fs) < 0):
            raise ConfigError("distribution.knots", "CDF values must be non-decreasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "_x", xs)
        object.__setattr__(self, "_F", Fs)

    @classmethod
    def uniform(cls) -> "TypeDistribution":
        return cls("uniform")

    @classmethod
    def piecewise(cls, knots: Sequence[Sequence[float]]) -> "TypeDistribution":
        return cls("piecewise", tuple(tuple(k) for k in knots))

    @property
    def breakpoints(self) -> np.ndarray:
        """Interior knot positions, where the density may jump."""
        return self._x[1:-1]

    def cdf(self, x):
        return np.interp(x, self._x, self._F)

    def density(self, x):
        # right-hand slope at knots, left-hand slope at x = 1
        x = np.asarray(x, dtype=float)
        slopes = np.diff(self._F) / np.diff(self._x)
        seg = np.clip(np.searchsorted(self._x, x, side="right") - 1, 0, len(slopes) - 1)
        out = slopes[seg]
        return out if out.ndim else float(out)

    def quantile(self, u):
        """Smallest x with F(x) >= u."""
        u = np.asarray(u, dtype=float)
        xs, Fs = self._x, self._F
        idx = np.clip(np.searchsorted(Fs, u, side="left"), 1, len(Fs) - 1)
        F0, F1 = Fs[idx - 1], Fs[idx]
        x0, x1 = xs[idx - 1], xs[idx]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(F1 > F0, (u - F0) / (F1 - F0), 0.0)
        out = np.where(u <= 0.0, 0.0, x0 + np.clip(frac, 0.0, 1.0) * (x1 - x0))
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.quantile(rng.random(size))

    def truncated_quantile(self, u, lower: float):
        """Quantile of F conditioned on T >= lower."""
        Fl = float(self.cdf(lower))
        return self.quantile(Fl + np.asarray(u, dtype=float) * (1.0 - Fl))

    def density_error(self, n: int = 1001, h: float = 1e-6) -> float:
        """Largest gap between the density and a central difference of the CDF.

        Points within ``10 h`` of a knot are skipped since the density jumps there.
        """
        x = np.linspace(h, 1.0 - h, n)
        near = np.min(np.abs(x[:, None] - self._x[None, :]), axis=1) < 10 * h
        x = x[~near]
        fd = (self.cdf(x + h) - self.cdf(x - h)) / (2 * h)
        return float(np.max(np.abs(fd - self.density(x)))) if x.size else 0.0

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform"}
        return {"kind": "piecewise", "knots": [list(k) for k in self.knots]}


@dataclass(frozen=True)
class GameConfig:
    """Parameters of one game: N users, reward R, cost bound c, optional K.

    Full-information mechanisms carry the sorted type profile; the
    partial-information ones carry the type distribution instead.
    """

    mechanism: Mechanism
    n_users: int
    reward: float
    cost: float
    top_k: int | None = None
    types: tuple[float, ...] | None = None
    distribution: TypeDistribution | None = None

    def __post_init__(self):
        try:
            mech = Mechanism(self.mechanism)
        except ValueError:
            raise ConfigError("mechanism", f"unknown mechanism {self.mechanism!r}") from None
        object.__setattr__(self, "mechanism", mech)

        if isinstance(self.n_users, bool) or int(self.n_users) != self.n_users or self.n_users < 1:
            raise ConfigError("N", "must be a positive integer")
        object.__setattr__(self, "n_users", int(self.n_users))
        for name, label in (("reward", "R"), ("cost", "c")):
            value = getattr(self, name)
            if not isinstance(value, (int, float, np.floating, np.integer)) or isinstance(value, bool):
                raise ConfigError(label, "must be a number")
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(label, "must be a positive real")
            object.__setattr__(self, name, float(value))

        if mech.allocation == "topk":
            if self.top_k is None:
                raise ConfigError("K", f"required for {mech.value}")
            if isinstance(self.top_k, bool) or int(self.top_k) != self.top_k or self.top_k < 1:
                raise ConfigError("K", "must be a positive integer")
            object.__setattr__(self, "top_k", int(self.top_k))

        if mech.full_information:
            if self.types is None:
                raise ConfigError("types", f"required for {mech.value}")
            types = tuple(float(q) for q in self.types)
            if len(types) != self.n_users:
                raise ConfigError("types", f"expected {self.n_users} types, got {len(types)}")
            for i, q in enumerate(types):
                if not (0.0 < q <= 1.0):
                    raise ConfigError("types", f"type {i} = {q} is outside (0, 1]")
            if any(a < b for a, b in zip(types, types[1:])):
                raise ConfigError("types", "must be sorted non-increasing")
            object.__setattr__(self, "types", types)
        else:
            if self.distribution is None:
                raise ConfigError("distribution", f"required for {mech.value}")
            if not isinstance(self.distribution, TypeDistribution):
                raise ConfigError("distribution", "must be a TypeDistribution")

    @property
    def q(self) -> np.ndarray:
        return np.asarray(self.types, dtype=float)

    def to_dict(self) -> dict:
        doc = {
            "mechanism": self.mechanism.value,
            "N": self.n_users,
            "R": self.reward,
            "c": self.cost,
        }
        if self.top_k is not None:
            doc["K"] = self.top_k
        if self.types is not None:
            doc["types"] = list(self.types)
        if self.distribution is not None:
            doc["distribution"] = self.distribution.to_dict()
        return doc


@dataclass(frozen=True)
class ActionProfile:
    """Contributed qualities, one per user, aligned with ``GameConfig.types``."""

    actions: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(float(x) for x in self.actions))

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, i):
        return self.actions[i]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.actions, dtype=float)

    def others_total(self, i: int) -> float:
        return sum(x for j, x in enumerate(self.actions) if j != i)

    def replace(self, i: int, value: float) -> "ActionProfile":
        acts = list(self.actions)
        acts[i] = value
        return ActionProfile(acts)


@dataclass(frozen=True)
class ProfileCheck:
    ok: bool
    violations: tuple[tuple[int, str], ...] = ()


def validate_profile(profile: ActionProfile, cfg: GameConfig) -> ProfileCheck:
    """Check ``0 <= x_i <= q_i`` and, for binary mechanisms, ``x_i in {0, q_i}``."""
    if len(profile) != cfg.n_users:
        return ProfileCheck(False, ((-1, f"length {len(profile)} != N = {cfg.n_users}"),))
    bad = []
    for i, (x, q) in enumerate(zip(profile.actions, cfg.types)):
        if not np.isfinite(x) or x < 0.0 or x > q:
            bad.append((i, f"x={x} outside [0, {q}]"))
        elif cfg.mechanism.binary and x != 0.0 and x != q:
            bad.append((i, f"x={x} not in {{0, {q}}}"))
    return ProfileCheck(not bad, tuple(bad))


def total_quality(profile: ActionProfile) -> float:
    return float(sum(profile.actions))


def proportional_share(xi, x_minus, reward):
    """Reward of a user contributing ``xi`` when the others contribute ``x_minus``."""
    if xi <= 0:
        return 0 * reward
    return reward * (xi / (xi + x_minus))


def topk_share(i: int, actions: Sequence, k: int, reward):
    """Top-K reward of user ``i``; ties at the boundary split the free slots equally.

    Works on floats and on ``Fraction`` inputs alike.
    """
    xi = actions[i]
    if xi <= 0:
        return 0 * reward
    above = sum(1 for j, x in enumerate(actions) if j != i and x > xi)
    tied = 1 + sum(1 for j, x in enumerate(actions) if j != i and x == xi)
    slots = k - above
    if slots <= 0:
        return 0 * reward
    if tied <= slots:
        return reward / k
    return reward * slots / (k * tied)


def rewards(profile: ActionProfile, cfg: GameConfig) -> np.ndarray:
    acts = profile.actions
    if cfg.mechanism.allocation == "topk":
        return np.array([topk_share(i, acts, cfg.top_k, cfg.reward) for i in range(len(acts))])
    total = sum(acts)
    return np.array([proportional_share(x, total - x, cfg.reward) for x in acts])


def utility_proportional(i: int, profile: ActionProfile, cfg: GameConfig) -> float:
    xi = profile.actions[i]
    if xi <= 0:
        return 0.0
    r = proportional_share(xi, profile.others_total(i), cfg.reward)
    return r - cfg.cost * xi / cfg.types[i]


def utility_topk(i: int, profile: ActionProfile, cfg: GameConfig) -> float:
    xi = profile.actions[i]
    if xi <= 0:
        return 0.0
    r = topk_share(i, profile.actions, cfg.top_k, cfg.reward)
    return r - cfg.cost * xi / cfg.types[i]


def utility(i: int, profile: ActionProfile, cfg: GameConfig) -> float:
    if cfg.mechanism.allocation == "topk":
        return utility_topk(i, profile, cfg)
    return utility_proportional(i, profile, cfg)


def exact_utility(i: int, actions: Sequence, cfg: GameConfig) -> Fraction:
    """Utility of user ``i`` in exact rational arithmetic (binary mechanisms)."""
    acts = [exact(x) for x in actions]
    R, c, q = exact(cfg.reward), exact(cfg.cost), exact(cfg.types[i])
    if acts[i] <= 0:
        return Fraction(0)
    if cfg.mechanism.allocation == "topk":
        r = topk_share(i, acts, cfg.top_k, R)
    else:
        r = proportional_share(acts[i], sum(acts) - acts[i], R)
    return r - c * acts[i] / q
