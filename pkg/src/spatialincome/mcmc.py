"""Pieces shared by the PWD and PWL samplers."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from .errors import ValidationError
from .families import get_family
from .graph import AdjacencyGraph
from .likelihood import GroupedCounts, ModeApprox, find_modes, initial_u, log_multinomial

log = logging.getLogger(__name__)


@dataclass
class PriorConfig:
    """``mu_l ~ N(0, 1/a_mu)``, ``tau_l ~ Gamma(b_tau, c_tau)``, ``lambda ~ Gamma(b_lambda, c_lambda)`` (shape, rate)."""

    a_mu: float = 1e-6
    b_tau: float = 1.0
    c_tau: float = 1.0
    b_lambda: float = 1.0
    c_lambda: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValidationError(f"prior hyperparameter {k} must be positive")


@dataclass
class McmcConfig:
    iterations: int = 2500
    burn_in: int = 500
    thin: int = 1
    seed: int = 0
    mala_step: float = 0.01
    mala_target: float = 0.574
    rw_step: float = 0.05
    rw_target: float = 0.234
    adapt: bool = True
    cstar_mc: int = 100
    log_every: int = 100
    keep_scales: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ValidationError("require 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if self.cstar_mc < 1:
            raise ValidationError("cstar_mc must be >= 1")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def keep(self, t: int) -> bool:
        """Whether 1-based iteration ``t`` is retained."""
        return t > self.burn_in and (t - self.burn_in) % self.thin == 0


@dataclass
class PosteriorDraws:
    """Retained draws. ``lam`` is ``(D, p)`` for PWD and ``(D, 1)`` for PWL."""

    prior: str
    family: str
    u: np.ndarray
    mu: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    iteration: np.ndarray
    sampled: np.ndarray
    acceptance: dict = field(default_factory=dict)
    scales: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.u.shape[0]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.u.shape[2]


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = shape * np.log(rate) - special.gammaln(shape) + (shape - 1) * np.log(x) - rate * x
    return np.where(x > 0, val, -np.inf)


def gamma_dlogpdf(x, shape, rate):
    return (shape - 1) / x - rate


class StepAdapter:
    """Robbins-Monro adaptation of a log step size toward a target acceptance rate.

    Active only while ``t <= burn_in``; the step is frozen afterwards.
    """

    def __init__(self, step: float, target: float, burn_in: int, enabled: bool = True):
        self.log_step = float(np.log(step))
        self.target = target
        self.burn_in = burn_in
        self.enabled = enabled

    @property
    def step(self) -> float:
        return float(np.exp(self.log_step))

    def update(self, t: int, accept_prob: float):
        if self.enabled and t <= self.burn_in:
            self.log_step += (accept_prob - self.target) / t**0.6
            self.log_step = float(np.clip(self.log_step, -30.0, 10.0))


class AcceptanceCounter:
    def __init__(self):
        self.accepted: dict[str, float] = {}
        self.proposed: dict[str, float] = {}

    def add(self, key: str, accepted, proposed=1):
        self.accepted[key] = self.accepted.get(key, 0) + float(np.sum(accepted))
        self.proposed[key] = self.proposed.get(key, 0) + float(proposed)

    def rates(self) -> dict[str, float]:
        return {k: self.accepted[k] / self.proposed[k] for k in sorted(self.proposed) if self.proposed[k] > 0}


# ---------------------------------------------------------------------------
# area updates
# ---------------------------------------------------------------------------

@dataclass
class AreaModes:
    """Cached mode approximations for all areas (rows of non-sampled areas unused)."""

    u_tilde: np.ndarray
    P: np.ndarray
    converged: np.ndarray

    @classmethod
    def from_modes(cls, modes: list[ModeApprox | None], p: int) -> "AreaModes":
        m = len(modes)
        u_t = np.zeros((m, p))
        P = np.zeros((m, p, p))
        conv = np.zeros(m, dtype=bool)
        for i, mo in enumerate(modes):
            if mo is not None:
                u_t[i], P[i], conv[i] = mo.u_tilde, mo.P, mo.converged
        return cls(u_t, P, conv)


def compute_area_modes(family, data: GroupedCounts) -> AreaModes:
    family = get_family(family)
    return AreaModes.from_modes(find_modes(family, data), family.p)


def area_mh_step(family, idx, u, L_cur, D, b, modes: AreaModes, data: GroupedCounts, rng):
    """One Metropolis-Hastings update for the (mutually non-adjacent) areas ``idx``.

    The conditional prior of ``u_i`` is Gaussian with diagonal precision
    ``D[i]`` and linear term ``b[i]``, so the target is
    ``L_i(u) - u'diag(D)u/2 + b'u``. Areas with a converged mode use the
    independent proposal ``N(alpha, (P + diag D)^-1)`` with
    ``alpha = (P + diag D)^-1 (P u_tilde + b)``; the rest use a random walk
    with the same covariance shape.

    Updates ``u`` and ``L_cur`` in place and returns the accept flags.
    """
    B = len(idx)
    if B == 0:
        return np.zeros(0, dtype=bool)
    p = u.shape[1]
    u_t = modes.u_tilde[idx]
    P = modes.P[idx]
    prec = P + D[:, :, None] * np.eye(p)
    chol = np.linalg.cholesky(prec)
    z = rng.standard_normal((B, p))
    logu = np.log(rng.uniform(size=B))
    noise = np.linalg.solve(np.swapaxes(chol, 1, 2), z[..., None])[..., 0]
    cur = u[idx]
    indep = modes.converged[idx]

    alpha = np.linalg.solve(prec, (np.einsum("bpq,bq->bp", P, u_t) + b)[..., None])[..., 0]
    prop = np.where(indep[:, None], alpha + noise, cur + (2.38 / np.sqrt(p)) * noise)
    counts = data.counts[idx]
    L_prop = log_multinomial(family, prop, counts, data.grid)

    def quad(x):
        d = x - u_t
        return 0.5 * np.einsum("bp,bpq,bq->b", d, P, d)

    def prior_part(x):
        return -0.5 * np.sum(D * x * x, axis=1) + np.sum(b * x, axis=1)

    # independent proposal: h(u)/phi(u) reduces to exp{L(u) + (u - u~)'P(u - u~)/2}
    log_r_ind = (L_prop + quad(prop)) - (L_cur[idx] + quad(cur))
    log_r_rw = (L_prop + prior_part(prop)) - (L_cur[idx] + prior_part(cur))
    log_r = np.where(indep, log_r_ind, log_r_rw)
    acc = logu < log_r
    acc &= np.all(np.isfinite(prop), axis=1)
    sel = idx[acc]
    u[sel] = prop[acc]
    L_cur[sel] = L_prop[acc]
    return acc


def gaussian_area_draw(idx, D, b, rng):
    """Exact draw from ``N(b/D, 1/D)`` per coordinate (no likelihood)."""
    z = rng.standard_normal(b.shape)
    return b / D + z / np.sqrt(D)


def update_mu(u, tau, prior: PriorConfig, rng):
    """Gibbs draw of the grand means from ``N(mu*, s2)`` with
    ``mu* = tau sum_i u_i / (m tau + a_mu)`` and ``s2 = 1 / (m tau + a_mu)``."""
    m = u.shape[0]
    prec = m * np.asarray(tau) + prior.a_mu
    mean = np.asarray(tau) * u.sum(axis=0) / prec
    return mean + rng.standard_normal(len(mean)) / np.sqrt(prec)


def initial_state(family, data: GroupedCounts, modes: AreaModes):
    """Starting latent field: converged modes, else the quantile-matching start."""
    family = get_family(family)
    m, p = data.m, family.p
    u = np.zeros((m, p))
    sampled = data.sampled
    for i in range(m):
        if sampled[i]:
            u[i] = modes.u_tilde[i] if modes.converged[i] else initial_u(family, data.counts[i], data.grid)
    if sampled.any():
        centre = u[sampled].mean(axis=0)
        u[~sampled] = centre
        spread = u[sampled].var(axis=0) if sampled.sum() > 1 else np.ones(p)
    else:
        centre = np.zeros(p)
        spread = np.ones(p)
    tau = 1.0 / np.clip(spread, 1e-2, 1e2)
    return u, centre.copy(), tau


def check_inputs(data: GroupedCounts, graph: AdjacencyGraph):
    if data.m != graph.m:
        raise ValidationError(
            f"counts describe {data.m} areas but the adjacency graph has {graph.m}", stage="setup"
        )
