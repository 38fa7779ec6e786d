"""Two-speed model definition: speed profiles, offspring laws, plans, config files."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SQRT2 = math.sqrt(2.0)
BRAMSON = 3.0 / (2.0 * SQRT2)

NORMALIZATION_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid model parameters or configuration file."""


class Regime(enum.Enum):
    BELOW = "below"        # sigma1 < sigma2
    ABOVE = "above"        # sigma1 > sigma2
    STANDARD = "standard"  # sigma1 = sigma2 = 1


@dataclass(frozen=True)
class SpeedProfile:
    """Variance rate ``sigma1_sq`` on ``[0, b t)`` and ``sigma2_sq`` on ``[b t, t]``."""

    sigma1_sq: float
    sigma2_sq: float
    b: float

    def __post_init__(self):
        if not (self.sigma1_sq >= 0.0):
            raise ConfigError(f"sigma1_sq must be >= 0, got {self.sigma1_sq}")
        if not (self.sigma2_sq > 0.0):
            raise ConfigError(f"sigma2_sq must be > 0, got {self.sigma2_sq}")
        if not (0.0 < self.b <= 1.0):
            raise ConfigError(f"b must lie in (0, 1], got {self.b}")
        total = self.sigma1_sq * self.b + self.sigma2_sq * (1.0 - self.b)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ConfigError(f"profile not normalised: sigma1^2 b + sigma2^2 (1-b) = {total!r}")

    @property
    def sigma1(self) -> float:
        return math.sqrt(self.sigma1_sq)

    @property
    def sigma2(self) -> float:
        return math.sqrt(self.sigma2_sq)

    def regime(self) -> Regime:
        if (abs(self.sigma1_sq - 1.0) <= NORMALIZATION_TOL
                and abs(self.sigma2_sq - 1.0) <= NORMALIZATION_TOL):
            return Regime.STANDARD
        if self.sigma1_sq < self.sigma2_sq:
            return Regime.BELOW
        if self.sigma1_sq > self.sigma2_sq:
            return Regime.ABOVE
        # equal but not 1 cannot be normalised; __post_init__ already rejected it
        return Regime.STANDARD  # pragma: no cover

    def variance_rate(self, s: float, t: float) -> float:
        return self.sigma1_sq if s < self.b * t else self.sigma2_sq


STANDARD_PROFILE = SpeedProfile(1.0, 1.0, 0.5)


def complete_profile(sigma1_sq: float, b: float) -> SpeedProfile:
    """Solve the normalisation for ``sigma2_sq``.

    >>> complete_profile(0.5, 2 / 3).sigma2_sq
    2.0
    """
    if b == 1.0:
        if sigma1_sq != 1.0:
            raise ConfigError("b = 1 leaves sigma2 undefined unless sigma1_sq = 1")
        return SpeedProfile(1.0, 1.0, 1.0)
    if not (0.0 < b < 1.0):
        raise ConfigError(f"b must lie in (0, 1), got {b}")
    if sigma1_sq < 0.0:
        raise ConfigError(f"sigma1_sq must be >= 0, got {sigma1_sq}")
    if sigma1_sq * b >= 1.0:
        raise ConfigError(f"sigma1_sq * b = {sigma1_sq * b} must be < 1")
    sigma2_sq = (1.0 - sigma1_sq * b) / (1.0 - b)
    # snap to the exact identity case so regime() is not fooled by round-off
    if abs(sigma1_sq - 1.0) <= NORMALIZATION_TOL and abs(sigma2_sq - 1.0) <= NORMALIZATION_TOL:
        sigma2_sq = 1.0
    return SpeedProfile(float(sigma1_sq), float(sigma2_sq), float(b))


CANONICAL_BELOW = complete_profile(0.5, 2.0 / 3.0)
CANONICAL_ABOVE = complete_profile(1.5, 0.5)


def drift_parameter(profile: SpeedProfile) -> float:
    """``a = sqrt(2) (sigma2 - 1)``, the linear overshoot rate of the phase-2 tail."""
    if profile.regime() is not Regime.BELOW:
        raise ConfigError(f"drift parameter only defined in regime BELOW, got {profile.regime().name}")
    return SQRT2 * (profile.sigma2 - 1.0)


def standard_centering(t: float) -> float:
    """Bramson's ``m(t) = sqrt(2) t - 3/(2 sqrt 2) log t``."""
    return SQRT2 * t - BRAMSON * math.log(t)


def centering(t: float, profile: SpeedProfile) -> float:
    """Centering of the maximum at horizon ``t`` for the profile's regime."""
    if not t > 1.0:
        raise ConfigError(f"centering needs t > 1, got {t}")
    regime = profile.regime()
    if regime is Regime.BELOW:
        return SQRT2 * t - math.log(t) / (2.0 * SQRT2)
    if regime is Regime.STANDARD:
        return standard_centering(t)
    s1, s2, b = profile.sigma1, profile.sigma2, profile.b
    return (SQRT2 * t * (b * s1 + (1.0 - b) * s2)
            - BRAMSON * (s1 + s2) * math.log(t)
            - BRAMSON * (s1 * math.log(b) + s2 * math.log(1.0 - b)))


def split_line(s: float, profile: SpeedProfile) -> float:
    """Position ``sqrt(2) sigma1^2 s`` around which extremal lineages sit before ``b t``."""
    return SQRT2 * profile.sigma1_sq * s


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution with mean 2."""

    sizes: tuple
    probs: tuple

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.sizes)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "probs", probs)
        if len(sizes) != len(probs) or not sizes:
            raise ConfigError("offspring sizes and probabilities must be nonempty and aligned")
        if len(set(sizes)) != len(sizes) or min(sizes) < 1:
            raise ConfigError(f"offspring sizes must be distinct positive integers, got {sizes}")
        if min(probs) < 0.0:
            raise ConfigError("offspring probabilities must be nonnegative")
        if abs(sum(probs) - 1.0) > NORMALIZATION_TOL:
            raise ConfigError(f"offspring probabilities sum to {sum(probs)!r}")
        if abs(self.mean - 2.0) > NORMALIZATION_TOL:
            raise ConfigError(f"offspring mean must be 2, got {self.mean!r}")

    @property
    def mean(self) -> float:
        return sum(k * p for k, p in zip(self.sizes, self.probs))

    @property
    def K(self) -> float:
        """Second factorial moment ``sum k (k-1) p_k``."""
        return sum(k * (k - 1) * p for k, p in zip(self.sizes, self.probs))

    @property
    def is_binary(self) -> bool:
        return self.sizes == (2,)

    def reaction(self, u):
        """F-KPP nonlinearity ``(1-u) - sum p_k (1-u)^k``."""
        v = 1.0 - u
        out = v.copy() if isinstance(v, np.ndarray) else v
        for k, p in zip(self.sizes, self.probs):
            out = out - p * v ** k
        return out

    def arrays(self):
        """``(sizes, cumulative probs)`` as numpy arrays for the kernels."""
        sizes = np.asarray(self.sizes, dtype=np.int64)
        cum = np.cumsum(np.asarray(self.probs, dtype=np.float64))
        cum[-1] = 1.0
        return sizes, cum

    @classmethod
    def parse(cls, text: str) -> "OffspringLaw":
        """``"binary"`` or an explicit ``"k:p,k:p"`` list."""
        text = text.strip()
        if text == "binary":
            return BINARY
        try:
            pairs = [item.split(":") for item in text.split(",")]
            sizes = [int(k) for k, _ in pairs]
            probs = [float(p) for _, p in pairs]
        except ValueError as exc:
            raise ConfigError(f"cannot parse offspring law {text!r}") from exc
        return cls(tuple(sizes), tuple(probs))

    def label(self) -> str:
        if self.is_binary:
            return "binary"
        return ",".join(f"{k}:{p!r}" for k, p in zip(self.sizes, self.probs))


BINARY = OffspringLaw((2,), (1.0,))


@dataclass(frozen=True)
class BarrierSpec:
    """Pruning corridor margins, in units of ``sqrt(t)``."""

    kappa1: float = 6.0
    kappa2: float = 6.0
    enabled: bool = True

    def __post_init__(self):
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ConfigError("barrier margins must be positive")


@dataclass(frozen=True)
class SimulationPlan:
    t: float
    profile: SpeedProfile
    offspring: OffspringLaw = BINARY
    seed: int = 0
    replicas: int = 1
    barrier: BarrierSpec | None = None
    checkpoints: tuple = field(default=())

    def __post_init__(self):
        if not self.t > 0:
            raise ConfigError(f"horizon must be positive, got {self.t}")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit nonnegative integer, got {self.seed!r}")
        if int(self.replicas) < 1:
            raise ConfigError(f"replicas must be >= 1, got {self.replicas}")
        cps = [float(c) for c in self.checkpoints]
        if any(c < 0.0 or c > self.t for c in cps):
            raise ConfigError(f"checkpoints must lie in [0, {self.t}]")
        if cps != sorted(cps):
            raise ConfigError("checkpoints must be sorted")
        cps = set(cps)
        cps.add(self.split_time)
        cps.add(float(self.t))
        cps.discard(0.0)
        object.__setattr__(self, "checkpoints", tuple(sorted(cps)))

    @property
    def split_time(self) -> float:
        return float(self.profile.b * self.t)

    def with_(self, **changes) -> "SimulationPlan":
        kw = dict(t=self.t, profile=self.profile, offspring=self.offspring, seed=self.seed,
                  replicas=self.replicas, barrier=self.barrier,
                  checkpoints=tuple(c for c in self.checkpoints if c not in (self.split_time, self.t)))
        kw.update(changes)
        return SimulationPlan(**kw)


CONFIG_KEYS = ("sigma1_sq", "b", "t", "seed", "replicas", "barrier.kappa1", "barrier.kappa2",
               "offspring")


def parse_config(text: str) -> dict:
    """Parse flat ``key=value`` text; ``#`` starts a comment, blank lines are ignored."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def plan_from_config(text: str, **overrides) -> SimulationPlan:
    """Build a :class:`SimulationPlan` from config text; ``overrides`` win over file values."""
    raw = parse_config(text)
    raw.update({k: str(v) for k, v in overrides.items() if v is not None})
    for key in ("sigma1_sq", "b", "t", "seed"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    try:
        sigma1_sq = float(raw["sigma1_sq"])
        b = float(raw["b"])
        t = float(raw["t"])
        seed = int(raw["seed"])
        replicas = int(raw.get("replicas", "1"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    barrier = None
    if "barrier.kappa1" in raw or "barrier.kappa2" in raw:
        try:
            barrier = BarrierSpec(float(raw.get("barrier.kappa1", 6.0)),
                                  float(raw.get("barrier.kappa2", 6.0)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    offspring = OffspringLaw.parse(raw.get("offspring", "binary"))
    return SimulationPlan(t=t, profile=complete_profile(sigma1_sq, b), offspring=offspring,
                          seed=seed, replicas=replicas, barrier=barrier)


def load_plan(path, **overrides) -> SimulationPlan:
    return plan_from_config(Path(path).read_text(), **overrides)
