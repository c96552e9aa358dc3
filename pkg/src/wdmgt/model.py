"""Physical parameters, regime classification and frequency-zone cutoffs."""

from __future__ import annotations

import enum
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, RegimeError

#: relative half-width of the excluded band around gamma = 1/(4 tau)
GAMMA_EXCLUSION_RTOL = 1e-9


class DeltaRegime(enum.Enum):
    SUB_CRITICAL = "SubCritical"
    CRITICAL = "Critical"
    SUPER_CRITICAL = "SuperCritical"


class GammaRegime(enum.Enum):
    OSCILLATORY = "Oscillatory"
    OVERDAMPED = "Overdamped"


@dataclass(frozen=True)
class RegimeTag:
    delta_regime: DeltaRegime
    gamma_regime: GammaRegime

    @classmethod
    def classify(cls, tau: float, delta: float, gamma: float) -> "RegimeTag":
        if delta > 0:
            dr = DeltaRegime.SUB_CRITICAL
        elif delta == 0:
            dr = DeltaRegime.CRITICAL
        else:
            dr = DeltaRegime.SUPER_CRITICAL
        gr = GammaRegime.OSCILLATORY if gamma > 1.0 / (4.0 * tau) else GammaRegime.OVERDAMPED
        return cls(dr, gr)

    def __str__(self):
        return f"({self.delta_regime.value}, {self.gamma_regime.value})"


@dataclass(frozen=True)
class ModelParams:
    """Constants of the weakly damped (J)MGT equation.

    ``tau`` thermal relaxation, ``delta`` diffusivity of sound, ``gamma``
    weak attenuation, ``b_over_2a`` the nonlinearity ratio B/(2A).
    Negative ``delta`` is accepted only with ``instability_scan=True``.
    """

    tau: float
    delta: float
    gamma: float
    b_over_2a: float = 0.5
    instability_scan: bool = False
    regime: RegimeTag = field(init=False, compare=False)

    def __post_init__(self):
        for name in ("tau", "delta", "gamma", "b_over_2a"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or isinstance(v, bool):
                raise InvalidParameter(f"{name} must be a real number, got {v!r}")
            if not math.isfinite(v):
                raise InvalidParameter(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.tau <= 0:
            raise InvalidParameter(f"tau > 0 violated (tau={self.tau})")
        if self.gamma <= 0:
            raise InvalidParameter(f"gamma > 0 violated (gamma={self.gamma})")
        if self.b_over_2a <= 0:
            raise InvalidParameter(f"b_over_2a > 0 violated (b_over_2a={self.b_over_2a})")
        g_star = 1.0 / (4.0 * self.tau)
        if abs(self.gamma - g_star) < GAMMA_EXCLUSION_RTOL * g_star:
            raise InvalidParameter(
                f"gamma != 1/(4 tau) violated (gamma={self.gamma}, 1/(4 tau)={g_star}); "
                "the limit case is excluded")
        if self.delta < 0 and not self.instability_scan:
            raise InvalidParameter(
                f"delta >= 0 violated (delta={self.delta}); negative delta requires "
                "instability_scan=True")
        object.__setattr__(self, "regime", RegimeTag.classify(self.tau, self.delta, self.gamma))

    @property
    def gamma_star(self) -> float:
        return 1.0 / (4.0 * self.tau)

    @property
    def is_critical(self) -> bool:
        return self.regime.delta_regime is DeltaRegime.CRITICAL

    @property
    def is_subcritical(self) -> bool:
        return self.regime.delta_regime is DeltaRegime.SUB_CRITICAL

    def require_simulable(self):
        if self.delta < 0:
            raise RegimeError("super-critical parameters (delta < 0) cannot be evolved")

    def require_critical(self):
        if not self.is_critical:
            raise RegimeError(f"requires the critical regime delta = 0, got delta={self.delta}")

    def replace(self, **changes) -> "ModelParams":
        kw = dict(tau=self.tau, delta=self.delta, gamma=self.gamma,
                  b_over_2a=self.b_over_2a, instability_scan=self.instability_scan)
        kw.update(changes)
        return ModelParams(**kw)

    def as_dict(self) -> dict:
        return dict(tau=self.tau, delta=self.delta, gamma=self.gamma, b_over_2a=self.b_over_2a)


_PARAM_KEYS = {"tau", "delta", "gamma", "b_over_2a", "instability_scan"}


def validate_params(raw: Mapping | ModelParams) -> ModelParams:
    """Build a :class:`ModelParams` from a mapping, naming any violated constraint."""
    if isinstance(raw, ModelParams):
        return raw
    unknown = set(raw) - _PARAM_KEYS
    if unknown:
        raise InvalidParameter(f"unknown parameter keys: {sorted(unknown)}")
    missing = {"tau", "delta", "gamma"} - set(raw)
    if missing:
        raise InvalidParameter(f"missing parameter keys: {sorted(missing)}")
    return ModelParams(**raw)


def _smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class CutoffPartition:
    """Smooth partition of unity over |xi| into small, bounded and large zones.

    ``chi_int`` equals 1 on |xi| <= inner_ratio*eps0 and vanishes for
    |xi| >= eps0; ``chi_ext`` vanishes for |xi| <= n0 and equals 1 for
    |xi| >= outer_ratio*n0.
    """

    eps0: float = 0.5
    n0: float = 4.0
    inner_ratio: float = 0.5
    outer_ratio: float = 2.0

    def __post_init__(self):
        if not (0 < self.eps0 < self.n0):
            raise InvalidParameter(f"0 < eps0 < n0 violated (eps0={self.eps0}, n0={self.n0})")
        if not (0 < self.inner_ratio < 1):
            raise InvalidParameter("inner_ratio must lie in (0, 1)")
        if not self.outer_ratio > 1:
            raise InvalidParameter("outer_ratio must exceed 1")

    def chi_int(self, r):
        lo = self.inner_ratio * self.eps0
        return 1.0 - _smooth_step((np.abs(r) - lo) / (self.eps0 - lo))

    def chi_ext(self, r):
        hi = self.outer_ratio * self.n0
        return _smooth_step((np.abs(r) - self.n0) / (hi - self.n0))

    def chi_bdd(self, r):
        return 1.0 - self.chi_int(r) - self.chi_ext(r)

    def zone(self, r: float) -> str:
        r = abs(r)
        if r <= self.eps0:
            return "int"
        if r >= self.n0:
            return "ext"
        return "bdd"
