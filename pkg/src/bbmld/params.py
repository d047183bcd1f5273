"""Closed-form parameter calculus for level-set large deviations of binary BBM.

Everything here is a pure function of the slope ``x`` and growth exponent ``a``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

SQRT2 = math.sqrt(2.0)


class DomainError(ValueError):
    """Raised when (x, a) lies outside the admissible region."""


class RangeError(ValueError):
    """Raised when a time argument falls outside [0, t]."""


@dataclass(frozen=True)
class LdpParams:
    x: float
    a: float
    theta: float
    p: float
    b: float
    rate_I: float
    kappa: float
    dpsi_kappa: float
    ddpsi_kappa: float
    sigma2_cond: float
    v_speed: float

    def as_dict(self) -> dict:
        return asdict(self)

    def s(self, t: float) -> float:
        """Optimal passage time ``p * t``."""
        return self.p * t

    def v_level(self, t: float, z: float = 0.0) -> float:
        """Level ``-psi'(kappa) p t + z`` of the transformed process."""
        return -self.dpsi_kappa * self.p * t + z


def check_admissible(x: float, a: float, eps: float = 1e-9) -> None:
    if not (x > eps):
        raise DomainError(f"x={x!r} violates x > 0 (margin {eps:g})")
    lower = max(1.0 - x * x / 2.0, 0.0)
    if not (a > lower + eps):
        raise DomainError(
            f"a={a!r} violates a > (1 - x^2/2)_+ = {lower:.12g} (margin {eps:g})"
        )
    if not (a < 1.0 - eps):
        raise DomainError(f"a={a!r} violates a < 1 (margin {eps:g})")


def derive(x: float, a: float, eps: float = 1e-9) -> LdpParams:
    """Derive every scalar attached to the pair (x, a)."""
    check_admissible(x, a, eps)
    x = float(x)
    a = float(a)
    one_a = 1.0 - a
    theta = 2.0 * one_a / x
    p = one_a * (x * x - 2.0 * one_a) / (x * x - 2.0 * one_a * one_a)
    b = x / one_a
    rate_I = x * x / (2.0 * one_a) - 1.0
    kappa = 2.0 / theta**2
    dpsi = 1.0 - theta**2 / 2.0
    ddpsi = theta**2
    sigma2 = (1.0 - p) / (1.0 - p + 2.0 * p / theta**2)
    v = b * p + SQRT2 * (1.0 - p)
    return LdpParams(x, a, theta, p, b, rate_I, kappa, dpsi, ddpsi, sigma2, v)


def psi(params: LdpParams, lam: float) -> float:
    """Log-Laplace transform of the transformed BBM at time one."""
    return (params.theta**2 * lam / 2.0 - 1.0) * (lam - 1.0)


def _check_r(t: float, r: float) -> None:
    if not (0.0 <= r <= t):
        raise RangeError(f"r={r!r} outside [0, {t!r}]")


def curve_F(params: LdpParams, t: float, r: float) -> float:
    _check_r(t, r)
    if t == 0.0:
        return 0.0
    lam = r / t
    f = params.x
    if params.a + lam <= 1.0:
        f -= math.sqrt(max(2.0 * (1.0 - lam) * (1.0 - lam - params.a), 0.0))
    return t * f


def line_slope(params: LdpParams) -> float:
    return (params.theta**2 / 2.0 + 1.0) / params.theta


def line_L(params: LdpParams, t: float, r: float) -> float:
    _check_r(t, r)
    s = params.p * t
    return line_slope(params) * (r - s) + params.b * s


def expected_level_count(x: float, t: float) -> float:
    """Leading-order mean number of particles above ``x t`` at time ``t``."""
    return math.exp((1.0 - x * x / 2.0) * t) / (x * math.sqrt(2.0 * math.pi * t))


def c_star(params: LdpParams, c_w: float) -> float:
    th = params.theta
    base = th * math.sqrt(2.0 * math.pi * (1.0 - params.p))
    return math.sqrt(params.sigma2_cond) * c_w / base**params.kappa


def ldp_prediction(params: LdpParams, t: float, y: float, c_w: float) -> float:
    """Predicted P(L_t(xt) >= y e^{at} / sqrt(t)) given an estimate of C_W."""
    if y <= 0 or c_w <= 0:
        raise ValueError("y and c_w must be positive")
    return c_star(params, c_w) * y ** (-params.kappa) * math.exp(-params.rate_I * t)


def ldp_prediction_unscaled(params: LdpParams, t: float, y: float, c_w: float) -> float:
    """Predicted P(L_t(xt) >= y e^{at}) (no 1/sqrt(t) in the threshold)."""
    if y <= 0 or c_w <= 0:
        raise ValueError("y and c_w must be positive")
    return (
        c_star(params, c_w)
        * y ** (-params.kappa)
        * t ** (-1.0 / params.theta**2)
        * math.exp(-params.rate_I * t)
    )


def overlap_scale(params: LdpParams) -> float:
    """Multiplier of the conditional Gaussian for (R - pt)/sqrt(pt)."""
    th = params.theta
    return th / (1.0 - th**2 / 2.0)


def jump_scale(params: LdpParams) -> float:
    th = params.theta
    return (1.0 + th**2 / 2.0) / (1.0 - th**2 / 2.0)


def max_scale(params: LdpParams) -> float:
    th = params.theta
    return (SQRT2 - th) / (SQRT2 + th)
