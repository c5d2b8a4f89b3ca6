"""Parametric income distributions: log-normal (LN), Singh-Maddala (SM), Dagum (DG).

Each area carries a vector ``u`` of unconstrained reals. The natural parameters
are obtained componentwise:

* LN: ``(mu, sigma2) = (u1, exp(u2))`` with ``mu``/``sigma2`` on the log-income scale
* SM: ``(a, b, c1) = exp(u)``
* DG: ``(a, b, c2) = exp(u)``

``b`` is the scale parameter for SM/DG and carries the income units of the
boundary grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import MomentConditionError, ParameterOverflowError, ValidationError

__all__ = [
    "Family",
    "LN",
    "SM",
    "DG",
    "get_family",
    "transform",
    "inverse_transform",
    "cdf",
    "sf",
    "density",
    "mean_income",
    "gini",
    "mean_income_numeric",
    "gini_numeric",
    "moment_condition_holds",
    "cdf_derivatives",
]

_PARAM_NAMES = {
    "LN": ("mu", "sigma2"),
    "SM": ("a", "b", "c1"),
    "DG": ("a", "b", "c2"),
}


@dataclass(frozen=True)
class Family:
    kind: str

    def __post_init__(self):
        if self.kind not in _PARAM_NAMES:
            raise ValidationError(f"unknown family {self.kind!r}; expected one of LN, SM, DG")

    @property
    def p(self) -> int:
        return len(_PARAM_NAMES[self.kind])

    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self.kind]

    def __str__(self) -> str:
        return self.kind


LN = Family("LN")
SM = Family("SM")
DG = Family("DG")
FAMILIES = ("LN", "SM", "DG")


def get_family(family) -> Family:
    if isinstance(family, Family):
        return family
    return Family(str(family).upper())


# ---------------------------------------------------------------------------
# parameter transforms
# ---------------------------------------------------------------------------

def _natural(family: Family, u):
    """Unchecked transform used on hot paths; broadcasts over leading axes."""
    u = np.asarray(u, dtype=float)
    with np.errstate(over="ignore"):
        if family.kind == "LN":
            eta = np.empty_like(u)
            eta[..., 0] = u[..., 0]
            eta[..., 1] = np.exp(u[..., 1])
            return eta
        return np.exp(u)


def transform(family, u):
    """Map unconstrained ``u`` (shape ``(..., p)``) to natural parameters."""
    family = get_family(family)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != family.p:
        raise ValidationError(f"{family} expects {family.p} parameters, got {u.shape[-1]}")
    if not np.all(np.isfinite(u)):
        raise ValidationError("transformed parameters must be finite")
    eta = _natural(family, u)
    bad = ~np.isfinite(eta)
    if np.any(bad):
        comp = int(np.argwhere(bad)[0][-1])
        raise ParameterOverflowError(
            f"exp overflow in component {comp} ({family.param_names[comp]}) of {family}; "
            "the chain is likely diverging"
        )
    return eta


def inverse_transform(family, eta):
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    _check_eta(family, eta)
    if family.kind == "LN":
        u = np.empty_like(eta)
        u[..., 0] = eta[..., 0]
        u[..., 1] = np.log(eta[..., 1])
        return u
    return np.log(eta)


def _check_eta(family: Family, eta):
    if eta.shape[-1] != family.p:
        raise ValidationError(f"{family} expects {family.p} parameters, got {eta.shape[-1]}")
    positive = eta[..., 1:] if family.kind == "LN" else eta
    if np.any(~(positive > 0)):
        raise ValidationError(f"{family} parameters {family.param_names} violate positivity")


# ---------------------------------------------------------------------------
# distribution functions on the natural scale
# ---------------------------------------------------------------------------

def _split(family: Family, eta):
    eta = np.asarray(eta, dtype=float)
    return tuple(eta[..., k] for k in range(family.p))


def _cdf_sf(family: Family, eta, x):
    """Return (F, 1 - F) evaluated without cancellation. ``x`` may contain +inf."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logx = np.log(x)
        if family.kind == "LN":
            mu, sigma2 = _split(family, eta)
            t = (logx - mu) / np.sqrt(sigma2)
            F, S = special.ndtr(t), special.ndtr(-t)
        else:
            a, b, c = _split(family, eta)
            y = a * (logx - np.log(b))
            if family.kind == "SM":
                g = c * np.logaddexp(0.0, y)
                F, S = -np.expm1(-g), np.exp(-g)
            else:
                g = c * np.logaddexp(0.0, -y)
                F, S = np.exp(-g), -np.expm1(-g)
    F = np.where(x <= 0, 0.0, np.where(np.isposinf(x), 1.0, F))
    S = np.where(x <= 0, 1.0, np.where(np.isposinf(x), 0.0, S))
    return F, S


def _check_x(x, strict: bool):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise ValidationError("income must not be NaN")
    if strict and np.any(x <= 0):
        raise ValidationError("density requires x > 0")
    if np.any(x < 0):
        raise ValidationError("income must be non-negative")
    return x


def cdf(family, eta, x):
    """Closed-form CDF. Accepts ``x = +inf`` (returns exactly 1)."""
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    _check_eta(family, eta)
    return _cdf_sf(family, eta, _check_x(x, strict=False))[0]


def sf(family, eta, x):
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    _check_eta(family, eta)
    return _cdf_sf(family, eta, _check_x(x, strict=False))[1]


def density(family, eta, x):
    """Probability density at ``x > 0``."""
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    _check_eta(family, eta)
    x = _check_x(x, strict=True)
    return np.exp(_log_density(family, eta, x))


def _log_density(family: Family, eta, x):
    logx = np.log(x)
    if family.kind == "LN":
        mu, sigma2 = _split(family, eta)
        return -0.5 * (logx - mu) ** 2 / sigma2 - logx - 0.5 * np.log(2 * np.pi * sigma2)
    a, b, c = _split(family, eta)
    y = a * (logx - np.log(b))
    # SM: a c x^{a-1} / (b^a (1+(x/b)^a)^{1+c});  DG: a c x^{ac-1} / (b^{ac} (1+(x/b)^a)^{1+c})
    lead = y if family.kind == "SM" else c * y
    return np.log(a * c) - logx + lead - (1 + c) * np.logaddexp(0.0, y)


# ---------------------------------------------------------------------------
# summary measures
# ---------------------------------------------------------------------------

def moment_condition_holds(family, eta):
    """True where the mean (and hence the Gini index) is finite."""
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    if family.kind == "LN":
        return np.ones(eta.shape[:-1], dtype=bool)
    a, _, c = _split(family, eta)
    if family.kind == "SM":
        return a * c > 1
    return a > 1


def _require_moment(family: Family, eta):
    ok = moment_condition_holds(family, eta)
    if not np.all(ok):
        cond = "a * c1 > 1" if family.kind == "SM" else "a > 1"
        raise MomentConditionError(f"{family} mean does not exist: requires {cond}")


def mean_income(family, eta):
    """Mean income in closed form.

    LN: ``exp(mu + sigma2 / 2)``. SM: ``b G(1+1/a) G(c1-1/a) / G(c1)``.
    DG: ``b G(c2+1/a) G(1-1/a) / G(c2)``.
    """
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    _check_eta(family, eta)
    _require_moment(family, eta)
    return _mean_unchecked(family, eta)


def _mean_unchecked(family: Family, eta):
    if family.kind == "LN":
        mu, sigma2 = _split(family, eta)
        return np.exp(mu + 0.5 * sigma2)
    a, b, c = _split(family, eta)
    gl = special.gammaln
    with np.errstate(invalid="ignore"):
        if family.kind == "SM":
            return b * np.exp(gl(1 + 1 / a) + gl(c - 1 / a) - gl(c))
        return b * np.exp(gl(c + 1 / a) + gl(1 - 1 / a) - gl(c))


def gini(family, eta):
    """Gini index in closed form.

    LN: ``2 Phi(sigma / sqrt 2) - 1``.
    SM: ``1 - G(c1) G(2 c1 - 1/a) / (G(c1 - 1/a) G(2 c1))``.
    DG: ``G(c2) G(2 c2 + 1/a) / (G(2 c2) G(c2 + 1/a)) - 1``.
    """
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    _check_eta(family, eta)
    _require_moment(family, eta)
    return _gini_unchecked(family, eta)


def _gini_unchecked(family: Family, eta):
    if family.kind == "LN":
        _, sigma2 = _split(family, eta)
        return 2.0 * special.ndtr(np.sqrt(sigma2 / 2.0)) - 1.0
    a, _, c = _split(family, eta)
    gl = special.gammaln
    with np.errstate(invalid="ignore"):
        if family.kind == "SM":
            return -np.expm1(gl(c) + gl(2 * c - 1 / a) - gl(c - 1 / a) - gl(2 * c))
        return np.expm1(gl(c) + gl(2 * c + 1 / a) - gl(2 * c) - gl(c + 1 / a))


def _quad_halfline(fn):
    """Integrate ``fn`` over (0, inf) via the substitution t = x / (1 + x)."""

    def integrand(t):
        if t <= 0.0 or t >= 1.0:
            return 0.0
        x = t / (1.0 - t)
        return fn(x) / (1.0 - t) ** 2

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-11, limit=500)
    return val


def mean_income_numeric(family, eta) -> float:
    """Mean income by adaptive quadrature of ``x f(x)``; for a single parameter vector."""
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    _check_eta(family, eta)
    _require_moment(family, eta)
    return _quad_halfline(lambda x: x * float(np.exp(_log_density(family, eta, x))))


def gini_numeric(family, eta) -> float:
    """Gini index via ``1 - (1/mean) * int_0^inf (1 - F(x))^2 dx``."""
    family = get_family(family)
    eta = np.asarray(eta, dtype=float)
    _check_eta(family, eta)
    _require_moment(family, eta)
    mean = float(_mean_unchecked(family, eta))
    tail = _quad_halfline(lambda x: float(_cdf_sf(family, eta, x)[1]) ** 2)
    return 1.0 - tail / mean


# ---------------------------------------------------------------------------
# derivatives of the CDF with respect to u (used by the grouped likelihood)
# ---------------------------------------------------------------------------

def cdf_derivatives(family, u, z):
    """CDF, survival function and their first two u-derivatives at finite ``z > 0``.

    Parameters
    ----------
    u : ndarray (B, p)
    z : ndarray (K,)

    Returns
    -------
    F, S : (B, K)
    dF : (B, K, p)
    d2F : (B, K, p, p)
    """
    family = get_family(family)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    logz = np.log(np.asarray(z, dtype=float))[None, :]
    B, K, p = u.shape[0], logz.shape[1], family.p
    dF = np.zeros((B, K, p))
    d2F = np.zeros((B, K, p, p))

    with np.errstate(over="ignore", invalid="ignore"):
        if family.kind == "LN":
            inv_sd = np.exp(-0.5 * u[:, 1])[:, None]
            t = (logz - u[:, [0]]) * inv_sd
            F, S = special.ndtr(t), special.ndtr(-t)
            phi = np.exp(-0.5 * t * t) / np.sqrt(2 * np.pi)
            dt = np.stack([-np.broadcast_to(inv_sd, t.shape), -0.5 * t], axis=-1)
            d2t = np.zeros((B, K, 2, 2))
            d2t[..., 0, 1] = d2t[..., 1, 0] = 0.5 * inv_sd
            d2t[..., 1, 1] = 0.25 * t
            dF[:] = phi[..., None] * dt
            d2F[:] = phi[..., None, None] * (d2t - t[..., None, None] * dt[..., :, None] * dt[..., None, :])
            return F, S, dF, d2F

        a = np.exp(u[:, 0])[:, None]
        c = np.exp(u[:, 2])[:, None]
        sign = 1.0 if family.kind == "SM" else -1.0
        v = sign * a * (logz - u[:, [1]])
        s = special.expit(v)
        s1 = s * (1.0 - s)
        G = c * np.logaddexp(0.0, v)
        dv = np.stack([v, -sign * np.broadcast_to(a, v.shape)], axis=-1)
        d2v = np.zeros((B, K, 2, 2))
        d2v[..., 0, 0] = v
        d2v[..., 0, 1] = d2v[..., 1, 0] = -sign * a
        dG = np.empty((B, K, 3))
        dG[..., :2] = (c * s)[..., None] * dv
        dG[..., 2] = G
        d2G = np.empty((B, K, 3, 3))
        d2G[..., :2, :2] = (c * s1)[..., None, None] * dv[..., :, None] * dv[..., None, :] + (c * s)[
            ..., None, None
        ] * d2v
        d2G[..., 2, :] = dG
        d2G[..., :, 2] = dG
        eg = np.exp(-G)
        outer = dG[..., :, None] * dG[..., None, :]
        if family.kind == "SM":
            F, S = -np.expm1(-G), eg
            dF[:] = eg[..., None] * dG
            d2F[:] = eg[..., None, None] * (d2G - outer)
        else:
            F, S = eg, -np.expm1(-G)
            dF[:] = -eg[..., None] * dG
            d2F[:] = eg[..., None, None] * (outer - d2G)
    return F, S, dF, d2F
