"""MCMC for the Gaussian pair-wise difference (PWD) prior.

Per coordinate ``l`` the latent field has density proportional to
``|Q(tau_l, lam_l)|^{1/2} exp{-tau_l/2 sum_i (u_il - mu_l)^2 - lam_l/2 sum_{i~j} (u_il - u_jl)^2}``.

One sweep: independent MH for every sampled ``u_i``, Gaussian imputation of
non-sampled areas, Gibbs for ``mu``, MALA for each ``(tau_l, lam_l)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .families import get_family
from .graph import AdjacencyGraph, logdet_Q
from .likelihood import GroupedCounts, log_multinomial
from .mcmc import (
    AcceptanceCounter,
    AreaModes,
    McmcConfig,
    PosteriorDraws,
    PriorConfig,
    StepAdapter,
    area_mh_step,
    check_inputs,
    compute_area_modes,
    gamma_dlogpdf,
    gamma_logpdf,
    gaussian_area_draw,
    initial_state,
    update_mu,
)

log = logging.getLogger(__name__)

__all__ = [
    "PwdHyper",
    "pwd_log_prior",
    "conditional_prior",
    "update_u_area",
    "update_mu",
    "mala_potential",
    "update_tau_lambda",
    "predict_nonsampled",
    "run_pwd_chain",
]


@dataclass
class PwdHyper:
    mu: np.ndarray
    tau: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).copy()
        self.tau = np.asarray(self.tau, dtype=float).copy()
        self.lam = np.asarray(self.lam, dtype=float).copy()


def _sufficient(u, mu, graph: AdjacencyGraph):
    """Per-coordinate ``sum_i (u_i - mu)^2`` and ``sum_{i<j} w_ij (u_i - u_j)^2``."""
    A = np.sum((u - mu) ** 2, axis=0)
    e = graph.edges
    Bsum = np.sum((u[e[:, 0]] - u[e[:, 1]]) ** 2, axis=0) if graph.delta else np.zeros(u.shape[1])
    return A, Bsum


def pwd_log_prior(u, hyper: PwdHyper, graph: AdjacencyGraph) -> float:
    """Log prior density of the field up to the constant ``-(m p/2) log 2 pi``."""
    A, Bsum = _sufficient(u, hyper.mu, graph)
    total = 0.0
    for ell in range(u.shape[1]):
        total += 0.5 * logdet_Q(graph, hyper.tau[ell], hyper.lam[ell])
        total -= 0.5 * hyper.tau[ell] * A[ell] + 0.5 * hyper.lam[ell] * Bsum[ell]
    return float(total)


def conditional_prior(idx, u, hyper: PwdHyper, graph: AdjacencyGraph):
    """Diagonal precision ``D`` and linear term ``b`` of ``u_i | u_-i`` for areas ``idx``."""
    nb_sum = (graph.W @ u)[idx]
    deg = graph.degrees[idx][:, None]
    D = hyper.tau + deg * hyper.lam
    b = hyper.tau * hyper.mu + hyper.lam * nb_sum
    return D, b


def update_u_area(i, u, L_cur, hyper: PwdHyper, graph, data: GroupedCounts, modes: AreaModes, family, rng) -> bool:
    """Independent-MH update of sampled area ``i`` (in place). Returns the accept flag."""
    idx = np.array([i])
    D, b = conditional_prior(idx, u, hyper, graph)
    return bool(area_mh_step(get_family(family), idx, u, L_cur, D, b, modes, data, rng)[0])


def mala_potential(tau, lam, A, Bsum, graph: AdjacencyGraph, prior: PriorConfig):
    """Negative log full conditional ``U(tau, lam)`` and its gradient."""
    w = graph.laplacian_eigenvalues
    d = tau + lam * w
    U = (
        -0.5 * np.sum(np.log(d)) + 0.5 * tau * A + 0.5 * lam * Bsum
        - gamma_logpdf(tau, prior.b_tau, prior.c_tau) - gamma_logpdf(lam, prior.b_lambda, prior.c_lambda)
    )
    g_tau = -0.5 * np.sum(1.0 / d) + 0.5 * A - gamma_dlogpdf(tau, prior.b_tau, prior.c_tau)
    g_lam = -0.5 * np.sum(w / d) + 0.5 * Bsum - gamma_dlogpdf(lam, prior.b_lambda, prior.c_lambda)
    return float(U), np.array([g_tau, g_lam])


def update_tau_lambda(ell, u, hyper: PwdHyper, graph, prior: PriorConfig, h: float, rng):
    """MALA update of ``(tau_l, lam_l)`` (in place on ``hyper``).

    Returns ``(accepted, acceptance probability)``. Proposals leaving the
    positive quadrant are rejected.
    """
    A, Bsum = _sufficient(u[:, [ell]], hyper.mu[[ell]], graph)
    A, Bsum = float(A[0]), float(Bsum[0])
    x = np.array([hyper.tau[ell], hyper.lam[ell]])
    U_x, g_x = mala_potential(x[0], x[1], A, Bsum, graph, prior)
    eps = rng.standard_normal(2)
    logu = np.log(rng.uniform())
    y = x - h * g_x + np.sqrt(2 * h) * eps
    if np.any(y <= 0):
        return False, 0.0
    U_y, g_y = mala_potential(y[0], y[1], A, Bsum, graph, prior)
    log_q_xy = -np.sum((x - y + h * g_y) ** 2) / (4 * h)
    log_q_yx = -np.sum((y - x + h * g_x) ** 2) / (4 * h)
    log_r = (U_x - U_y) + log_q_xy - log_q_yx
    prob = float(np.exp(min(0.0, log_r))) if np.isfinite(log_r) else 0.0
    if logu < log_r:
        hyper.tau[ell], hyper.lam[ell] = y
        return True, prob
    return False, prob


def predict_nonsampled(u, hyper: PwdHyper, graph: AdjacencyGraph, classes, rng):
    """Draw each non-sampled area from ``N(s2 (tau mu + lam sum_j w_sj u_j), s2)``,
    ``s2 = 1/(tau + w_s lam)``. ``classes`` is a colouring of the non-sampled nodes."""
    for idx in classes:
        D, b = conditional_prior(idx, u, hyper, graph)
        u[idx] = gaussian_area_draw(idx, D, b, rng)
    return u


def log_posterior(u, L_cur, hyper: PwdHyper, graph, prior: PriorConfig, sampled) -> float:
    val = float(np.sum(L_cur[sampled])) + pwd_log_prior(u, hyper, graph)
    val += float(np.sum(-0.5 * prior.a_mu * hyper.mu**2))
    val += float(np.sum(gamma_logpdf(hyper.tau, prior.b_tau, prior.c_tau)))
    val += float(np.sum(gamma_logpdf(hyper.lam, prior.b_lambda, prior.c_lambda)))
    return val


def run_pwd_chain(data: GroupedCounts, graph: AdjacencyGraph, family, prior: PriorConfig | None = None,
                  config: McmcConfig | None = None, modes: AreaModes | None = None,
                  init: dict | None = None) -> PosteriorDraws:
    """Run the PWD sampler and return the retained draws."""
    family = get_family(family)
    prior = prior or PriorConfig()
    config = config or McmcConfig()
    check_inputs(data, graph)
    rng = np.random.default_rng(config.seed)
    m, p = data.m, family.p
    sampled = data.sampled
    if modes is None:
        modes = compute_area_modes(family, data)

    u, mu, tau = initial_state(family, data, modes)
    hyper = PwdHyper(mu, tau, np.ones(p))
    if init:
        u = np.asarray(init.get("u", u), dtype=float).copy()
        hyper = PwdHyper(init.get("mu", hyper.mu), init.get("tau", hyper.tau), init.get("lam", hyper.lam))

    L_cur = np.zeros(m)
    L_cur[sampled] = log_multinomial(family, u[sampled], data.counts[sampled], data.grid)
    s_classes = graph.coloring(np.flatnonzero(sampled))
    n_classes = graph.coloring(np.flatnonzero(~sampled))
    adapters = [StepAdapter(config.mala_step, config.mala_target, config.burn_in, config.adapt) for _ in range(p)]
    counter = AcceptanceCounter()
    n_keep = config.n_draws
    out_u = np.empty((n_keep, m, p))
    out_mu = np.empty((n_keep, p))
    out_tau = np.empty((n_keep, p))
    out_lam = np.empty((n_keep, p))
    out_it = np.empty(n_keep, dtype=np.int64)
    diagnostics = []
    k = 0
    for t in range(1, config.iterations + 1):
        for idx in s_classes:
            D, b = conditional_prior(idx, u, hyper, graph)
            acc = area_mh_step(family, idx, u, L_cur, D, b, modes, data, rng)
            counter.add("u", acc, len(idx))
        predict_nonsampled(u, hyper, graph, n_classes, rng)
        hyper.mu = update_mu(u, hyper.tau, prior, rng)
        for ell in range(p):
            acc, prob = update_tau_lambda(ell, u, hyper, graph, prior, adapters[ell].step, rng)
            adapters[ell].update(t, prob)
            counter.add(f"tau_lambda_{ell + 1}", acc)
        if config.keep(t):
            out_u[k], out_mu[k], out_tau[k], out_lam[k], out_it[k] = u, hyper.mu, hyper.tau, hyper.lam, t
            k += 1
        if config.log_every and (t % config.log_every == 0 or t == config.iterations):
            rec = {"iteration": t, "log_posterior": log_posterior(u, L_cur, hyper, graph, prior, sampled)}
            rec.update({f"accept_{key}": v for key, v in counter.rates().items()})
            rec.update({f"mala_step_{ell + 1}": adapters[ell].step for ell in range(p)})
            diagnostics.append(rec)
            log.debug("%s", rec)

    flags = {}
    rw_areas = np.flatnonzero(sampled & ~modes.converged)
    if len(rw_areas):
        flags["random_walk_areas"] = [int(i) for i in rw_areas]
        log.info("mode finding failed for %d area(s); random-walk proposals used", len(rw_areas))
    return PosteriorDraws(
        prior="PWD", family=family.kind, u=out_u, mu=out_mu, tau=out_tau, lam=out_lam,
        iteration=out_it, sampled=sampled.copy(), acceptance=counter.rates(), diagnostics=diagnostics, flags=flags,
    )
