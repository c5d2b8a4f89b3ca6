"""Posterior summaries, posterior predictive loss and simulation metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .families import _gini_unchecked, _mean_unchecked, _natural, get_family, moment_condition_holds
from .likelihood import GroupedCounts, bin_probabilities
from .mcmc import PosteriorDraws

log = logging.getLogger(__name__)

__all__ = ["AreaSummary", "PplResult", "SimMetrics", "quantile7", "summarize", "ppl", "sim_metrics"]

LEVELS = (0.025, 0.975)


def quantile7(x, q, axis=0):
    """Empirical quantiles with linear interpolation between order statistics (type 7)."""
    return np.quantile(np.asarray(x, dtype=float), q, axis=axis, method="linear")


@dataclass
class AreaSummary:
    """Per-area posterior summaries.

    ``income`` and ``gini`` have columns ``(mean, lower, upper)``; ``u_mean``,
    ``u_lower`` and ``u_upper`` are ``(m, p)``. ``excluded`` counts draws
    dropped per area because the mean income does not exist.
    """

    area_ids: np.ndarray
    income: np.ndarray
    gini: np.ndarray
    u_mean: np.ndarray
    u_lower: np.ndarray
    u_upper: np.ndarray
    excluded: np.ndarray
    n_draws: int

    @property
    def m(self) -> int:
        return len(self.area_ids)

    def subset(self, idx) -> "AreaSummary":
        idx = np.asarray(idx, dtype=np.int64)
        return AreaSummary(
            self.area_ids[idx], self.income[idx], self.gini[idx], self.u_mean[idx],
            self.u_lower[idx], self.u_upper[idx], self.excluded[idx], self.n_draws,
        )


def _mean_interval(x, keep):
    """Mean and type-7 interval of ``x`` (draws x areas) using only entries where ``keep``."""
    m = x.shape[1]
    out = np.empty((m, 3))
    if np.all(keep):
        out[:, 0] = x.mean(axis=0)
        out[:, 1:] = quantile7(x, LEVELS, axis=0).T
        return out
    for i in range(m):
        xi = x[keep[:, i], i]
        out[i, 0] = xi.mean()
        out[i, 1:] = quantile7(xi, LEVELS)
    return out


def summarize(draws: PosteriorDraws, family=None, area_ids=None) -> AreaSummary:
    """Area-wise posterior mean, 2.5% and 97.5% quantiles of mean income, Gini and ``u``.

    Draws violating the moment condition are dropped from the income and Gini
    summaries of that area; the number dropped is reported in ``excluded``.

    Raises
    ------
    ValidationError
        Fewer than two draws, or every draw of some area excluded.
    """
    family = get_family(family or draws.family)
    if draws.n_draws < 2:
        raise ValidationError("at least two retained draws are needed for a summary", stage="summarize")
    if draws.p != family.p:
        raise ValidationError(f"draws have {draws.p} coordinates but {family} needs {family.p}", stage="summarize")
    u = draws.u
    eta = _natural(family, u)
    keep = moment_condition_holds(family, eta) & np.all(np.isfinite(eta), axis=-1)
    with np.errstate(over="ignore", invalid="ignore"):
        mean = _mean_unchecked(family, eta)
        g = _gini_unchecked(family, eta)
    keep &= np.isfinite(mean) & np.isfinite(g)
    n_ok = keep.sum(axis=0)
    if np.any(n_ok == 0):
        bad = [int(i) for i in np.flatnonzero(n_ok == 0)]
        raise ValidationError(
            "no draw satisfies the moment condition for the mean income", stage="summarize", areas=bad
        )
    excluded = draws.n_draws - n_ok
    if excluded.any():
        log.info("moment condition failed in %d draw(s) across %d area(s)", excluded.sum(), np.sum(excluded > 0))
    q = quantile7(u, LEVELS, axis=0)
    ids = np.arange(draws.m) if area_ids is None else np.asarray(area_ids)
    return AreaSummary(
        area_ids=ids,
        income=_mean_interval(mean, keep),
        gini=_mean_interval(g, keep),
        u_mean=u.mean(axis=0),
        u_lower=q[0],
        u_upper=q[1],
        excluded=excluded,
        n_draws=draws.n_draws,
    )


@dataclass
class PplResult:
    """Posterior predictive loss over the sampled areas with a positive total.

    ``E`` and ``V`` are the per-area, per-bin predictive means and variances
    (NaN rows for skipped areas).
    """

    total: float
    variance_term: float
    fit_term: float
    E: np.ndarray
    V: np.ndarray
    m: int
    skipped: list[int] = field(default_factory=list)
    flags: dict = field(default_factory=dict)


def ppl(draws: PosteriorDraws, data: GroupedCounts, family=None, mode: str = "replicate", rng=None) -> PplResult:
    """Posterior predictive loss ``sum V / m + sum (c - E)^2 / (m + 1)``.

    In ``"replicate"`` mode every retained draw yields one multinomial
    replicate with the observed area total; ``E`` and ``V`` are the empirical
    mean and (population) variance of the replicates. ``"plugin"`` mode uses
    the multinomial moments given each draw's probabilities instead.
    ``m`` counts the areas entering the sums.
    """
    family = get_family(family or draws.family)
    if draws.m != data.m:
        raise ValidationError(f"draws cover {draws.m} areas, data {data.m}", stage="ppl")
    if mode not in ("replicate", "plugin"):
        raise ValidationError(f"unknown PPL mode {mode!r}", stage="ppl")
    rng = np.random.default_rng(rng)
    n = data.totals
    use = np.flatnonzero(n > 0)
    skipped = [int(i) for i in np.flatnonzero(n == 0)]
    if skipped:
        log.info("PPL skips %d zero-total area(s)", len(skipped))
    E = np.full((data.m, data.N), np.nan)
    V = np.full((data.m, data.N), np.nan)
    flags = {}
    if draws.n_draws == 1:
        flags["single_draw"] = True
        log.warning("PPL from a single retained draw: predictive variances are zero")
    for i in use:
        probs = bin_probabilities(family, draws.u[:, i], data.grid)
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum(axis=1, keepdims=True)
        if mode == "replicate":
            rep = rng.multinomial(n[i], probs)
            E[i] = rep.mean(axis=0)
            V[i] = rep.var(axis=0)
        else:
            mean_k = n[i] * probs
            E[i] = mean_k.mean(axis=0)
            V[i] = (n[i] * probs * (1 - probs)).mean(axis=0) + mean_k.var(axis=0)
    m = len(use)
    if m == 0:
        raise ValidationError("no sampled areas to evaluate", stage="ppl")
    var_term = float(np.sum(V[use])) / m
    fit_term = float(np.sum((data.counts[use] - E[use]) ** 2)) / (m + 1)
    return PplResult(var_term + fit_term, var_term, fit_term, E, V, m, skipped, flags)


@dataclass
class SimMetrics:
    """Per area x coordinate ``MSE``, ``CP`` and ``AL`` over ``R`` replications."""

    mse: np.ndarray
    cp: np.ndarray
    al: np.ndarray
    R: int


def sim_metrics(estimates, intervals, truths) -> SimMetrics:
    """Mean squared error, coverage and average interval length across replications.

    Parameters
    ----------
    estimates, truths : array_like, shape (R, m, p)
    intervals : array_like, shape (R, m, p, 2)
        Lower and upper bounds.

    NaN estimates (failed fits) are ignored replication-wise.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    itv = np.asarray(intervals, dtype=float)
    if est.shape != tru.shape or itv.shape != est.shape + (2,):
        raise ValidationError(
            f"shape mismatch: estimates {est.shape}, truths {tru.shape}, intervals {itv.shape}", stage="evaluate"
        )
    if est.ndim < 1 or est.shape[0] < 1:
        raise ValidationError("need at least one replication", stage="evaluate")
    lo, hi = itv[..., 0], itv[..., 1]
    ok = np.isfinite(est) & np.isfinite(lo) & np.isfinite(hi)
    with np.errstate(invalid="ignore", divide="ignore"):
        cnt = ok.sum(axis=0)
        mse = np.where(ok, (est - tru) ** 2, 0.0).sum(axis=0) / cnt
        cp = np.where(ok, (lo <= tru) & (tru <= hi), 0.0).sum(axis=0) / cnt
        al = np.where(ok, hi - lo, 0.0).sum(axis=0) / cnt
    return SimMetrics(mse, cp, al, est.shape[0])
