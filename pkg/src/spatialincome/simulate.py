"""Synthetic spatial grouped-income data and the PWD / PWL / AML comparison study."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .chains import run_chain
from .errors import SpatialIncomeError, ValidationError
from .families import LN
from .graph import AdjacencyGraph
from .likelihood import BoundaryGrid, GroupedCounts, aml_fit
from .mcmc import McmcConfig, PriorConfig, compute_area_modes
from .summary import SimMetrics, quantile7, sim_metrics

log = logging.getLogger(__name__)

__all__ = [
    "SimScenario", "SimDataset", "ExperimentResult", "METHODS",
    "gen_geometry", "scenario_truth", "gen_grouped", "simulate_dataset", "run_experiment",
]

METHODS = ("PWD", "PWL", "AML")
SCENARIOS = ("A", "B", "C")


@dataclass(frozen=True)
class SimScenario:
    kind: str = "A"
    m: int = 200
    n_range: tuple[int, int] = (50, 300)
    boundaries: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0, 10.0, 15.0)
    radius: float = 0.15

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.kind!r}; expected one of {SCENARIOS}")
        if self.m < 1:
            raise ValidationError("scenario needs m >= 1")
        lo, hi = self.n_range
        if not 1 <= lo <= hi:
            raise ValidationError("n_range must satisfy 1 <= low <= high")
        if self.radius < 0:
            raise ValidationError("radius must be non-negative")
        BoundaryGrid(self.boundaries)

    @property
    def grid(self) -> BoundaryGrid:
        return BoundaryGrid(self.boundaries)


def gen_geometry(m: int, radius: float, rng):
    """Uniform locations on ``(-1, 1)^2`` and the distance-threshold adjacency."""
    if m < 1:
        raise ValidationError("m must be >= 1")
    rng = np.random.default_rng(rng)
    loc = rng.uniform(-1.0, 1.0, size=(m, 2))
    graph = AdjacencyGraph.from_locations(loc, radius)
    log.debug("geometry: m=%d, mean degree %.2f", m, graph.degrees.mean())
    return loc, graph


def scenario_truth(kind: str, locations) -> np.ndarray:
    """True ``(u_1, u_2)`` per area as a deterministic function of location."""
    s = np.asarray(locations, dtype=float)
    s1, s2 = s[:, 0], s[:, 1]
    u = np.empty((len(s), 2))
    if kind in ("A", "B"):
        u[:, 0] = 0.1 + s1**2 + s2**2
        u[:, 1] = 0.2 * s1 + 0.2 * s2
        if kind == "B":
            in_g1 = np.hypot(s1 - 0.5, s2) < 0.3
            in_g2 = np.hypot(s1 + 0.5, s2) < 0.3
            u[:, 0] += -0.3 * in_g1 + 0.3 * in_g2
        return u
    if kind == "C":
        right = s1 > 0
        top = s2 > 0
        u[right & top] = (0.3, 0.1)
        u[right & ~top] = (0.5, 0.2)
        u[~right & top] = (0.7, 0.3)
        u[~right & ~top] = (1.0, 0.4)
        return u
    raise ValidationError(f"unknown scenario {kind!r}")


def gen_grouped(truth, n, boundaries, rng) -> GroupedCounts:
    """Bin ``n_i`` log-normal incomes per area into ``(z_{k-1}, z_k]``.

    ``truth[:, 0]`` is the log-scale mean and ``exp(truth[:, 1])`` the
    log-scale variance.
    """
    rng = np.random.default_rng(rng)
    grid = boundaries if isinstance(boundaries, BoundaryGrid) else BoundaryGrid(boundaries)
    truth = np.asarray(truth, dtype=float)
    n = np.asarray(n, dtype=np.int64)
    if len(n) != len(truth):
        raise ValidationError("one sample size per area required")
    counts = np.zeros((len(truth), grid.N), dtype=np.int64)
    z = grid.z_inner
    for i, (mu, lv) in enumerate(truth):
        x = np.exp(mu + np.sqrt(np.exp(lv)) * rng.standard_normal(n[i]))
        counts[i] = np.bincount(np.searchsorted(z, x, side="left"), minlength=grid.N)
    return GroupedCounts(counts, grid)


@dataclass
class SimDataset:
    scenario: SimScenario
    locations: np.ndarray
    graph: AdjacencyGraph
    truth: np.ndarray
    n: np.ndarray
    data: GroupedCounts


def simulate_dataset(scenario: SimScenario, rng) -> SimDataset:
    """One replication: geometry, truth, sample sizes and grouped counts."""
    rng = np.random.default_rng(rng)
    loc, graph = gen_geometry(scenario.m, scenario.radius, rng)
    truth = scenario_truth(scenario.kind, loc)
    lo, hi = scenario.n_range
    n = rng.integers(lo, hi + 1, size=scenario.m)
    data = gen_grouped(truth, n, scenario.grid, rng)
    return SimDataset(scenario, loc, graph, truth, n, data)


@dataclass
class ExperimentResult:
    """Per-method metrics plus the raw per-replication estimates."""

    scenario: SimScenario
    metrics: dict[str, SimMetrics]
    estimates: dict[str, np.ndarray]
    intervals: dict[str, np.ndarray]
    truths: np.ndarray
    errors: list[dict] = field(default_factory=list)
    acceptance: list[dict] = field(default_factory=list)

    @property
    def R(self) -> int:
        return self.truths.shape[0]

    def median_mse(self, method: str) -> np.ndarray:
        return np.nanmedian(self.metrics[method].mse, axis=0)

    def median_al(self, method: str) -> np.ndarray:
        return np.nanmedian(self.metrics[method].al, axis=0)

    def mean_cp(self, method: str) -> np.ndarray:
        return np.nanmean(self.metrics[method].cp, axis=0)


def _bayes_estimates(draws):
    q = quantile7(draws.u, (0.025, 0.975), axis=0)
    return draws.u.mean(axis=0), np.stack([q[0], q[1]], axis=-1)


def run_experiment(scenario: SimScenario, R: int, config: McmcConfig | None = None,
                   prior: PriorConfig | None = None, seed: int = 0, methods=METHODS,
                   out_dir=None) -> ExperimentResult:
    """Fit every method on the same ``R`` synthetic datasets and aggregate MSE / CP / AL.

    Each replication draws its own geometry and data from an independent
    child seed. A fitting error is recorded and leaves NaN entries for that
    replication and method; it does not stop the sweep. With ``out_dir`` the
    dataset and estimates of every replication are written for audit.
    """
    if R < 1:
        raise ValidationError("R must be >= 1")
    config = config or McmcConfig()
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValidationError(f"unknown method(s) {sorted(unknown)}")
    children = np.random.SeedSequence(seed).spawn(R)
    m = scenario.m
    est = {k: np.full((R, m, 2), np.nan) for k in methods}
    itv = {k: np.full((R, m, 2, 2), np.nan) for k in methods}
    truths = np.empty((R, m, 2))
    errors, acceptance = [], []
    for r, child in enumerate(children):
        data_ss, chain_ss = child.spawn(2)
        ds = simulate_dataset(scenario, np.random.default_rng(data_ss))
        truths[r] = ds.truth
        chain_seed = int(chain_ss.generate_state(1)[0])
        modes = compute_area_modes(LN, ds.data)
        acc = {"replication": r}
        for method in methods:
            try:
                if method == "AML":
                    fit = aml_fit(LN, ds.data)
                    est[method][r] = fit.estimates
                    itv[method][r] = np.stack([fit.lower, fit.upper], axis=-1)
                else:
                    cfg = replace(config, seed=chain_seed)
                    draws = run_chain(method, ds.data, ds.graph, LN, prior=prior, config=cfg, modes=modes)
                    est[method][r], itv[method][r] = _bayes_estimates(draws)
                    acc[method] = draws.acceptance
            except (SpatialIncomeError, np.linalg.LinAlgError, FloatingPointError) as exc:
                log.warning("replication %d, %s failed: %s", r, method, exc)
                errors.append({"replication": r, "method": method, "error": str(exc)})
        acceptance.append(acc)
        if out_dir is not None:
            from .io import write_replication

            write_replication(Path(out_dir) / f"rep_{r:04d}", ds, {k: est[k][r] for k in methods},
                              {k: itv[k][r] for k in methods})
        log.info("replication %d/%d done", r + 1, R)
    metrics = {k: sim_metrics(est[k], itv[k], truths) for k in methods}
    return ExperimentResult(scenario, metrics, est, itv, truths, errors, acceptance)
