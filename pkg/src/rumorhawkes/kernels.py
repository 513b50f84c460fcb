"""Normalized baseline memory kernels and their closed-form integrals.

Every kernel is a probability density on ``[0, inf)``, so a mark equals the
expected number of direct offspring of an event. Parameters live on an
unconstrained "raw" scale for estimation: positive parameters are ``exp(raw)``
and the Weibull shape is ``expit(raw)`` so that it stays in ``(0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

FAMILIES = ("exponential", "power_law", "weibull")
PARAM_NAMES = {
    "exponential": ("rate",),
    "power_law": ("shape", "offset"),
    "weibull": ("scale", "shape"),
}
RAW_NAMES = {
    "exponential": ("log_rate",),
    "power_law": ("log_shape", "log_offset"),
    "weibull": ("log_scale", "logit_shape"),
}
# raw coordinates that carry a half-Cauchy prior on exp(raw); the rest are standard normal
POSITIVE_RAW = {
    "exponential": (True,),
    "power_law": (True, True),
    "weibull": (True, False),
}


class KernelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class KernelParams:
    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if len(params) != len(PARAM_NAMES[self.family]):
            raise ValueError(f"{self.family} takes {len(PARAM_NAMES[self.family])} parameters")
        if not all(np.isfinite(p) and p > 0 for p in params):
            raise ValueError(f"kernel parameters must be positive and finite: {params}")
        if self.family == "weibull" and params[1] > 1:
            raise ValueError(f"Weibull shape must be <= 1, got {params[1]}")

    @classmethod
    def exponential(cls, rate: float) -> "KernelParams":
        return cls("exponential", (rate,))

    @classmethod
    def power_law(cls, shape: float, offset: float) -> "KernelParams":
        return cls("power_law", (shape, offset))

    @classmethod
    def weibull(cls, scale: float, shape: float) -> "KernelParams":
        return cls("weibull", (scale, shape))

    @property
    def arity(self) -> int:
        return len(self.params)

    @property
    def singular_at_zero(self) -> bool:
        return self.family == "weibull" and self.params[1] < 1

    def density(self, s):
        return density(self, s)

    def integral(self, s):
        return integral(self, s)

    def to_raw(self) -> np.ndarray:
        return to_raw(self)

    def scaled_time(self, factor: float) -> "KernelParams":
        """Same shape with time compressed by ``factor`` (rates multiplied)."""
        if self.family == "exponential":
            return KernelParams.exponential(self.params[0] * factor)
        if self.family == "power_law":
            return KernelParams.power_law(self.params[0], self.params[1] / factor)
        return KernelParams.weibull(self.params[0] / factor, self.params[1])

    def to_dict(self) -> dict:
        return {"family": self.family,
                "params": dict(zip(PARAM_NAMES[self.family], self.params))}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        family = d["family"]
        if family not in FAMILIES:
            raise ValueError(f"unknown kernel family {family!r}")
        return cls(family, tuple(float(d["params"][k]) for k in PARAM_NAMES[family]))


@dataclass(frozen=True)
class KernelPair:
    root: KernelParams
    non_root: KernelParams

    def to_dict(self) -> dict:
        return {"root": self.root.to_dict(), "non_root": self.non_root.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelPair":
        return cls(KernelParams.from_dict(d["root"]), KernelParams.from_dict(d["non_root"]))


def _lags(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(np.isnan(s)):
        raise KernelDomainError("kernel lag must be nonnegative")
    return s


def density(kernel: KernelParams, s):
    s = _lags(s)
    p = kernel.params
    with np.errstate(divide="ignore"):
        if kernel.family == "exponential":
            out = p[0] * np.exp(-p[0] * s)
        elif kernel.family == "power_law":
            theta, c = p
            out = theta / c * (c / (s + c)) ** (theta + 1)
        else:
            lam, k = p
            u = s / lam
            out = (k / lam) * u ** (k - 1) * np.exp(-(u**k))
    return out[()] if out.ndim == 0 else out


def integral(kernel: KernelParams, s):
    s = _lags(s)
    p = kernel.params
    if kernel.family == "exponential":
        out = -np.expm1(-p[0] * s)
    elif kernel.family == "power_law":
        theta, c = p
        out = -np.expm1(-theta * np.log1p(s / c))
    else:
        lam, k = p
        out = -np.expm1(-((s / lam) ** k))
    return out[()] if out.ndim == 0 else out


def inverse_integral(kernel: KernelParams, u):
    """Quantile function: the lag ``s`` with ``integral(kernel, s) == u``."""
    u = np.asarray(u, dtype=float)
    p = kernel.params
    tail = -np.log1p(-u)
    if kernel.family == "exponential":
        return tail / p[0]
    if kernel.family == "power_law":
        theta, c = p
        return c * np.expm1(tail / theta)
    lam, k = p
    return lam * tail ** (1.0 / k)


# ---- raw (unconstrained) parameterization -----------------------------------


def from_raw(family: str, raw) -> KernelParams:
    raw = np.asarray(raw, dtype=float)
    if family == "weibull":
        return KernelParams(family, (float(np.exp(raw[0])), float(expit(raw[1]))))
    return KernelParams(family, tuple(float(v) for v in np.exp(raw)))


def to_raw(kernel: KernelParams) -> np.ndarray:
    p = np.asarray(kernel.params)
    if kernel.family == "weibull":
        return np.array([np.log(p[0]), logit(p[1])])
    return np.log(p)


def raw_log_density_grad(family: str, raw, s):
    """``log phi(s)`` and its gradient w.r.t. the raw parameters, shape ``(len(s), arity)``."""
    raw = np.asarray(raw, dtype=float)
    s = np.asarray(s, dtype=float)
    if family == "exponential":
        theta = np.exp(raw[0])
        logf = raw[0] - theta * s
        grad = (1.0 - theta * s)[:, None]
    elif family == "power_law":
        theta, c = np.exp(raw)
        log_ratio = -np.log1p(s / c)
        logf = raw[0] - raw[1] + (theta + 1) * log_ratio
        grad = np.column_stack([1.0 + theta * log_ratio, theta - (theta + 1) * c / (s + c)])
    else:
        lam = np.exp(raw[0])
        k = expit(raw[1])
        log_u = np.log(s) - raw[0]
        z = np.exp(k * log_u)
        logf = np.log(k) - raw[0] + (k - 1) * log_u - z
        dk = k * (1 - k)
        grad = np.column_stack([k * (z - 1.0), dk * (1.0 / k + log_u - z * log_u)])
    return logf, grad


def raw_integral_grad(family: str, raw, s):
    """``Phi(s)`` and its gradient w.r.t. the raw parameters, shape ``(len(s), arity)``."""
    raw = np.asarray(raw, dtype=float)
    s = np.asarray(s, dtype=float)
    if family == "exponential":
        theta = np.exp(raw[0])
        surv = np.exp(-theta * s)
        return 1.0 - surv, (theta * s * surv)[:, None]
    if family == "power_law":
        theta, c = np.exp(raw)
        log_ratio = -np.log1p(s / c)
        surv = np.exp(theta * log_ratio)
        grad = np.column_stack([-surv * theta * log_ratio, -surv * theta * s / (s + c)])
        return 1.0 - surv, grad
    k = expit(raw[1])
    pos = s > 0
    log_u = np.where(pos, np.log(np.where(pos, s, 1.0)) - raw[0], 0.0)
    z = np.where(pos, np.exp(k * log_u), 0.0)
    surv = np.exp(-z)
    grad = np.column_stack([-surv * k * z, surv * z * log_u * k * (1 - k)])
    return 1.0 - surv, grad
