"""MCMC for the pair-wise Laplace (PWL) prior.

The field density is proportional to
``C*(tau, lam) exp{-1/2 sum_il tau_l (u_il - mu_l)^2 - lam sum_{i~j} ||u_i - u_j||}``
with a single ``lam`` shared by all coordinates. Writing each edge penalty as a
normal scale mixture with ``s_ij ~ Exp(lam^2/2)`` makes the field Gaussian given
the edge scales, with precision ``Q*(tau_l, S) = tau_l I + Laplacian(1/s)``.

One sweep: random-walk MH on ``Phi = (tau_1..tau_p, lam)`` using a Monte Carlo
estimate of ``log C*``, inverse-Gaussian draws of ``1/s_ij``, independent MH for
sampled areas, imputation of non-sampled areas, Gibbs for ``mu``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse, special
from scipy.sparse import csgraph

from .families import get_family
from .graph import AdjacencyGraph, EdgeScales, logdet_spd
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
    gamma_logpdf,
    gaussian_area_draw,
    initial_state,
    update_mu,
)

log = logging.getLogger(__name__)

__all__ = [
    "PwlHyper",
    "CstarEstimate",
    "CstarEstimator",
    "pwl_log_prior_kernel",
    "estimate_log_Cstar",
    "update_phi",
    "update_edge_scales",
    "conditional_prior",
    "update_u_area_pwl",
    "predict_nonsampled_pwl",
    "run_pwl_chain",
]

DENSE_LIMIT = 400


@dataclass
class PwlHyper:
    mu: np.ndarray
    tau: np.ndarray
    lam: float
    scales: EdgeScales

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).copy()
        self.tau = np.asarray(self.tau, dtype=float).copy()
        self.lam = float(self.lam)


@dataclass(frozen=True)
class CstarEstimate:
    log_value: float
    mc_samples: int
    crn_seed: int
    mc_se: float


def edge_norms(u, graph: AdjacencyGraph) -> np.ndarray:
    e = graph.edges
    if graph.delta == 0:
        return np.zeros(0)
    return np.sqrt(np.sum((u[e[:, 0]] - u[e[:, 1]]) ** 2, axis=1))


def pwl_log_prior_kernel(u, mu, tau, lam: float, graph: AdjacencyGraph) -> float:
    """Exponent of the Laplace-type prior, excluding ``log C*``."""
    quad = 0.5 * np.sum(np.asarray(tau) * (u - mu) ** 2)
    return float(-quad - lam * np.sum(edge_norms(u, graph)))


class CstarEstimator:
    """Monte Carlo estimate of ``log C*(tau, lam)`` under common random numbers.

    For a CRN seed, ``mc`` sets of standard exponentials ``E`` are drawn and
    the edge scales are ``s = 2E/lam^2``, so every ``(tau, lam)`` evaluated
    after :meth:`prepare` shares the same underlying draws. The Laplacian with
    weights ``1/s`` equals ``lam^2`` times the Laplacian with weights
    ``1/(2E)``, whose spectrum is computed once per seed.
    """

    def __init__(self, graph: AdjacencyGraph, p: int, mc: int = 100, method: str = "auto"):
        self.graph = graph
        self.p = p
        self.mc = int(mc)
        if method == "auto":
            method = "dense" if graph.m <= DENSE_LIMIT else "sparse"
        self.method = method
        self.crn_seed = None
        _, self._labels = csgraph.connected_components(graph.W, directed=False)
        self._n_isolated = int(np.sum(graph.degrees == 0))
        if self.method == "dense" and graph.delta:
            self._blocks = self._component_blocks()
            eid = np.arange(graph.delta)
            self._incidence_cols = [
                sparse.csr_matrix((np.ones(graph.delta), (eid, graph.edges[:, c])), shape=(graph.delta, graph.m))
                for c in (0, 1)
            ]

    def prepare(self, crn_seed: int):
        g = self.graph
        self.crn_seed = int(crn_seed)
        E = np.random.default_rng(self.crn_seed).standard_exponential((self.mc, g.delta))
        weights = 1.0 / (2.0 * E)
        self._sum_log_2E = np.sum(np.log(2.0 * E), axis=1)
        if g.delta == 0:
            self._nu = np.zeros((self.mc, 0))
            self._laps = None
        elif self.method == "dense":
            self._nu = self._component_spectra(weights)
            self._laps = None
        else:
            self._nu = None
            self._laps = [g.weighted_laplacian(w).tocsc() for w in weights]
        return self

    def _component_blocks(self):
        """Index maps placing each component of size >= 2 into a batched dense block."""
        g = self.graph
        labels = self._labels
        sizes = np.bincount(labels)
        edge_comp = labels[g.edges[:, 0]]
        pos = np.zeros(g.m, dtype=np.int64)
        for c in np.flatnonzero(sizes > 1):
            nodes = np.flatnonzero(labels == c)
            pos[nodes] = np.arange(len(nodes))
        blocks = []
        for k in np.unique(sizes[sizes > 1]):
            comps = np.flatnonzero(sizes == k)
            slot = np.full(len(sizes), -1)
            slot[comps] = np.arange(len(comps))
            sel = np.flatnonzero(np.isin(edge_comp, comps))
            nodes = np.flatnonzero(np.isin(labels, comps))
            blocks.append({
                "k": int(k), "n": len(comps), "sel": sel, "ci": slot[edge_comp[sel]],
                "a": pos[g.edges[sel, 0]], "b": pos[g.edges[sel, 1]],
                "nodes": nodes, "node_ci": slot[labels[nodes]], "node_pos": pos[nodes],
            })
        return blocks

    def _component_spectra(self, weights) -> np.ndarray:
        """Laplacian spectra of all non-trivial components, batched by component size.

        Isolated nodes contribute zero eigenvalues, handled through ``self._n_isolated``.
        """
        g = self.graph
        wdeg = np.zeros((self.mc, g.m))
        for col in (0, 1):
            wdeg += weights @ self._incidence_cols[col]
        r = np.arange(self.mc)[:, None]
        spectra = []
        for blk in self._blocks:
            L = np.zeros((self.mc, blk["n"], blk["k"], blk["k"]))
            w = weights[:, blk["sel"]]
            L[r, blk["ci"], blk["a"], blk["b"]] = -w
            L[r, blk["ci"], blk["b"], blk["a"]] = -w
            L[r, blk["node_ci"], blk["node_pos"], blk["node_pos"]] = wdeg[:, blk["nodes"]]
            spectra.append(np.linalg.eigvalsh(L).reshape(self.mc, -1))
        if not spectra:
            return np.zeros((self.mc, 0))
        return np.maximum(np.concatenate(spectra, axis=1), 0.0)

    def log_integrand(self, tau, lam: float) -> np.ndarray:
        """Per-draw ``-1/2 sum_l log|Q*(tau_l, S_r)| - 1/2 sum log(2 E_r)`` (the ``lam^delta`` factors cancel)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        lam2 = lam * lam
        if self._nu is not None:
            ld = np.zeros(self.mc)
            for t in tau:
                ld += np.sum(np.log(t + lam2 * self._nu), axis=1) + self._n_isolated * np.log(t)
        else:
            eye = sparse.identity(self.graph.m, format="csc")
            ld = np.array([sum(logdet_spd(t * eye + lam2 * Lr) for t in tau) for Lr in self._laps])
        return -0.5 * ld - 0.5 * self._sum_log_2E

    def log_cstar(self, tau, lam: float) -> CstarEstimate:
        if self.crn_seed is None:
            raise RuntimeError("call prepare(crn_seed) first")
        g = self.graph
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        li = self.log_integrand(tau, lam)
        log_mean = special.logsumexp(li) - np.log(self.mc)
        w = np.exp(li - li.max())
        se = float(np.std(w, ddof=1) / (np.sqrt(self.mc) * np.mean(w))) if self.mc > 1 else float("nan")
        mp = g.m * len(tau)
        log_Z = g.delta * np.log(2.0) + 0.5 * (mp - g.delta) * np.log(2 * np.pi) + log_mean
        return CstarEstimate(float(-log_Z), self.mc, self.crn_seed, se)


def estimate_log_Cstar(graph: AdjacencyGraph, tau, lam: float, mc: int = 100, crn_seed: int = 0) -> CstarEstimate:
    """``log C*(tau, lam)``, the log normaliser of the Laplace-type prior, by Monte Carlo."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    return CstarEstimator(graph, len(tau), mc).prepare(crn_seed).log_cstar(tau, lam)


def _log_h_phi(tau, lam, A, norm_sum, est: CstarEstimator, prior: PriorConfig):
    c = est.log_cstar(tau, lam)
    val = (
        c.log_value - 0.5 * np.sum(tau * A) - lam * norm_sum
        + np.sum(gamma_logpdf(tau, prior.b_tau, prior.c_tau)) + gamma_logpdf(lam, prior.b_lambda, prior.c_lambda)
    )
    return float(val), c


def update_phi(u, hyper: PwlHyper, graph, prior: PriorConfig, b: float, est: CstarEstimator, rng):
    """Random-walk MH on ``(tau, lam)`` with ``log C*`` estimated on the prepared CRN draws.

    Returns ``(accepted, acceptance probability, estimate at the retained state)``.
    """
    A = np.sum((u - hyper.mu) ** 2, axis=0)
    norm_sum = float(np.sum(edge_norms(u, graph)))
    p = len(hyper.tau)
    step = b * rng.standard_normal(p + 1)
    logu = np.log(rng.uniform())
    cur_val, cur_c = _log_h_phi(hyper.tau, hyper.lam, A, norm_sum, est, prior)
    new_tau, new_lam = hyper.tau + step[:p], hyper.lam + step[p]
    if np.any(new_tau <= 0) or new_lam <= 0:
        return False, 0.0, cur_c
    new_val, new_c = _log_h_phi(new_tau, new_lam, A, norm_sum, est, prior)
    log_r = new_val - cur_val
    prob = float(np.exp(min(0.0, log_r)))
    if logu < log_r:
        hyper.tau, hyper.lam = new_tau, float(new_lam)
        return True, prob, new_c
    return False, prob, cur_c


def update_edge_scales(u, lam: float, graph: AdjacencyGraph, rng, edge_ids=None):
    """Draw ``1/s_ij ~ IG(lam / ||u_i - u_j||, lam^2)`` for the given edges.

    Returns ``(s, n_coincident)``; coincident endpoints use the infinite-mean
    limit ``1/s = lam^2 / Z^2`` with ``Z ~ N(0, 1)``.
    """
    e = graph.edges if edge_ids is None else graph.edges[edge_ids]
    d2 = np.sum((u[e[:, 0]] - u[e[:, 1]]) ** 2, axis=1)
    shape = lam * lam
    coincident = d2 <= 0
    with np.errstate(divide="ignore"):
        mean = np.where(coincident, 1.0, np.sqrt(shape / np.where(coincident, 1.0, d2)))
    x = rng.wald(mean, shape)
    n_coin = int(coincident.sum())
    if n_coin:
        z = rng.standard_normal(n_coin)
        x[coincident] = shape / (z * z)
        log.warning("%d edge(s) with coincident endpoint values; limit branch used", n_coin)
    return 1.0 / x, n_coin


def conditional_prior(idx, u, hyper: PwlHyper, graph: AdjacencyGraph, S_tilde=None, rowsums=None):
    """Diagonal precision ``tau + s~_i`` and linear term ``tau mu + sum_j s~_ij u_j``."""
    if S_tilde is None:
        S_tilde = hyper.scales.tilde(graph)
    if rowsums is None:
        rowsums = hyper.scales.tilde_rowsums(graph)
    D = hyper.tau + rowsums[idx][:, None]
    b = hyper.tau * hyper.mu + (S_tilde @ u)[idx]
    return D, b


def update_u_area_pwl(i, u, L_cur, hyper: PwlHyper, graph, data: GroupedCounts, modes: AreaModes, family, rng) -> bool:
    idx = np.array([i])
    D, b = conditional_prior(idx, u, hyper, graph)
    return bool(area_mh_step(get_family(family), idx, u, L_cur, D, b, modes, data, rng)[0])


def predict_nonsampled_pwl(u, hyper: PwlHyper, graph: AdjacencyGraph, classes, rng):
    """For each non-sampled area: redraw the scales of its edges, then draw ``u`` from
    ``N(Gamma (T mu + sum_j s~_j u_j), Gamma)``, ``Gamma = (T + I sum_j s~_j)^-1``."""
    indptr, _, eid = graph.incidence
    for idx in classes:
        ids = np.unique(np.concatenate([eid[indptr[i]: indptr[i + 1]] for i in idx])) if len(idx) else []
        if len(ids):
            s_new, _ = update_edge_scales(u, hyper.lam, graph, rng, ids)
            hyper.scales.s[ids] = s_new
        D, b = conditional_prior(idx, u, hyper, graph)
        u[idx] = gaussian_area_draw(idx, D, b, rng)
    return u


def log_posterior(u, L_cur, hyper: PwlHyper, log_cstar: float, graph, prior: PriorConfig, sampled) -> float:
    val = float(np.sum(L_cur[sampled])) + log_cstar
    val += pwl_log_prior_kernel(u, hyper.mu, hyper.tau, hyper.lam, graph)
    val += float(np.sum(-0.5 * prior.a_mu * hyper.mu**2))
    val += float(np.sum(gamma_logpdf(hyper.tau, prior.b_tau, prior.c_tau)))
    val += float(gamma_logpdf(hyper.lam, prior.b_lambda, prior.c_lambda))
    return val


def run_pwl_chain(data: GroupedCounts, graph: AdjacencyGraph, family, prior: PriorConfig | None = None,
                  config: McmcConfig | None = None, modes: AreaModes | None = None,
                  init: dict | None = None) -> PosteriorDraws:
    """Run the PWL sampler. Sweep order: Phi, edge scales, sampled areas, non-sampled areas, mu."""
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
    hyper = PwlHyper(mu, tau, 1.0, EdgeScales(np.full(graph.delta, 2.0)))
    if init:
        u = np.asarray(init.get("u", u), dtype=float).copy()
        hyper = PwlHyper(init.get("mu", hyper.mu), init.get("tau", hyper.tau), init.get("lam", hyper.lam),
                         EdgeScales(init.get("scales", hyper.scales.s)))

    L_cur = np.zeros(m)
    L_cur[sampled] = log_multinomial(family, u[sampled], data.counts[sampled], data.grid)
    s_classes = graph.coloring(np.flatnonzero(sampled))
    n_classes = graph.coloring(np.flatnonzero(~sampled))
    est = CstarEstimator(graph, p, config.cstar_mc)
    adapter = StepAdapter(config.rw_step, config.rw_target, config.burn_in, config.adapt)
    counter = AcceptanceCounter()
    n_keep = config.n_draws
    out_u = np.empty((n_keep, m, p))
    out_mu = np.empty((n_keep, p))
    out_tau = np.empty((n_keep, p))
    out_lam = np.empty((n_keep, 1))
    out_s = np.empty((n_keep, graph.delta)) if config.keep_scales else None
    out_it = np.empty(n_keep, dtype=np.int64)
    diagnostics = []
    coincident = 0
    k = 0
    for t in range(1, config.iterations + 1):
        est.prepare(int(rng.integers(2**63 - 1)))
        acc, prob, cstar = update_phi(u, hyper, graph, prior, adapter.step, est, rng)
        adapter.update(t, prob)
        counter.add("phi", acc)

        if graph.delta:
            hyper.scales.s, n_coin = update_edge_scales(u, hyper.lam, graph, rng)
            coincident += n_coin
        S_tilde = hyper.scales.tilde(graph)
        rowsums = hyper.scales.tilde_rowsums(graph)
        for idx in s_classes:
            D, b = conditional_prior(idx, u, hyper, graph, S_tilde, rowsums)
            acc_u = area_mh_step(family, idx, u, L_cur, D, b, modes, data, rng)
            counter.add("u", acc_u, len(idx))
        predict_nonsampled_pwl(u, hyper, graph, n_classes, rng)
        hyper.mu = update_mu(u, hyper.tau, prior, rng)

        if config.keep(t):
            out_u[k], out_mu[k], out_tau[k], out_lam[k, 0], out_it[k] = u, hyper.mu, hyper.tau, hyper.lam, t
            if out_s is not None:
                out_s[k] = hyper.scales.s
            k += 1
        if config.log_every and (t % config.log_every == 0 or t == config.iterations):
            rec = {
                "iteration": t,
                "log_posterior": log_posterior(u, L_cur, hyper, cstar.log_value, graph, prior, sampled),
                "log_cstar": cstar.log_value,
                "log_cstar_mc_se": cstar.mc_se,
                "rw_step": adapter.step,
            }
            rec.update({f"accept_{key}": v for key, v in counter.rates().items()})
            diagnostics.append(rec)
            log.debug("%s", rec)

    flags = {}
    rw_areas = np.flatnonzero(sampled & ~modes.converged)
    if len(rw_areas):
        flags["random_walk_areas"] = [int(i) for i in rw_areas]
    if coincident:
        flags["coincident_edges"] = coincident
    return PosteriorDraws(
        prior="PWL", family=family.kind, u=out_u, mu=out_mu, tau=out_tau, lam=out_lam,
        iteration=out_it, sampled=sampled.copy(), acceptance=counter.rates(), scales=out_s,
        diagnostics=diagnostics, flags=flags,
    )

