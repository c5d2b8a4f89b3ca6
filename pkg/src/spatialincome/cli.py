"""Command-line interface: ``fit``, ``predict``, ``simulate``, ``evaluate``, ``compare``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then explicit flags. On failure a single JSON error line is written
to stderr and the exit code is nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .chains import PRIORS, run_chain
from .errors import SpatialIncomeError, ValidationError
from .families import FAMILIES, get_family
from .io import (
    atomic_write, fmt, summary_header,
    load_counts, load_draws, load_edges, parse_boundaries, read_json, sha256_file, write_counts, write_draws,
    write_edges, write_json, write_summary, write_table,
)
from .mcmc import McmcConfig, PriorConfig, compute_area_modes
from .simulate import METHODS, SimScenario, run_experiment, simulate_dataset
from .summary import ppl, summarize

log = logging.getLogger(__name__)

MCMC_FIELDS = tuple(f.name for f in fields(McmcConfig))
PRIOR_FIELDS = tuple(f.name for f in fields(PriorConfig))


@dataclass
class RunConfig:
    """Everything a run needs. Only the data paths lack usable defaults."""

    family: str = "LN"
    prior: str = "PWD"
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    priors: PriorConfig = field(default_factory=PriorConfig)
    counts: str | None = None
    adjacency: str | None = None
    boundaries: tuple[float, ...] | None = None
    out: str | None = None

    def __post_init__(self):
        self.family = get_family(self.family).kind
        if str(self.prior).upper() not in PRIORS:
            raise ValidationError(f"unknown prior {self.prior!r}; expected one of {PRIORS}", stage="config")
        self.prior = str(self.prior).upper()

    @classmethod
    def from_flat(cls, values: dict) -> "RunConfig":
        unknown = set(values) - set(MCMC_FIELDS) - set(PRIOR_FIELDS) - (
            {f.name for f in fields(cls)} - {"mcmc", "priors"})
        if unknown:
            raise ValidationError(f"unknown configuration key(s): {sorted(unknown)}", stage="config")
        mc = McmcConfig(**{k: values[k] for k in MCMC_FIELDS if k in values})
        pr = PriorConfig(**{k: values[k] for k in PRIOR_FIELDS if k in values})
        top = {k: values[k] for k in ("family", "prior", "counts", "adjacency", "out") if k in values}
        if values.get("boundaries") is not None:
            top["boundaries"] = parse_boundaries(values["boundaries"]).interior
        return cls(mcmc=mc, priors=pr, **top)

    def to_flat(self) -> dict:
        out = {"family": self.family, "prior": self.prior, "counts": self.counts, "adjacency": self.adjacency,
               "boundaries": list(self.boundaries) if self.boundaries is not None else None, "out": self.out}
        out.update(asdict(self.mcmc))
        out.update(asdict(self.priors))
        return out

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValidationError(f"missing required setting(s): {', '.join('--' + n for n in missing)}",
                                  stage="config")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_mcmc_flags(p):
    S = argparse.SUPPRESS
    g = p.add_argument_group("sampler")
    g.add_argument("--iterations", type=int, default=S, help="total iterations (default 2500)")
    g.add_argument("--burn-in", dest="burn_in", type=int, default=S, help="discarded iterations (default 500)")
    g.add_argument("--thin", type=int, default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--mala-step", dest="mala_step", type=float, default=S)
    g.add_argument("--mala-target", dest="mala_target", type=float, default=S)
    g.add_argument("--rw-step", dest="rw_step", type=float, default=S)
    g.add_argument("--rw-target", dest="rw_target", type=float, default=S)
    g.add_argument("--no-adapt", dest="adapt", action="store_false", default=S)
    g.add_argument("--cstar-mc", dest="cstar_mc", type=int, default=S, help="Monte Carlo size for the PWL normaliser")
    g.add_argument("--log-every", dest="log_every", type=int, default=S)
    g.add_argument("--keep-scales", dest="keep_scales", action="store_true", default=S)
    h = p.add_argument_group("hyperpriors")
    for name in PRIOR_FIELDS:
        h.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=S)


def _add_data_flags(p, out_help="output directory"):
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file of settings; explicit flags take precedence")
    p.add_argument("--counts", default=S, help="counts table (area_id,c_1,...,c_N)")
    p.add_argument("--adjacency", default=S, help="edge list of 0-based area indices")
    p.add_argument("--boundaries", default=S, help="interior boundaries: comma list or file")
    p.add_argument("--out", default=S, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialincome", description="Spatial smoothing of grouped income data.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("fit", help="run a sampler and summarise the posterior")
    _add_data_flags(p)
    p.add_argument("--family", choices=FAMILIES, default=S)
    p.add_argument("--prior", choices=PRIORS, default=S)
    _add_mcmc_flags(p)

    p = sub.add_parser("predict", help="summaries for non-sampled areas from a persisted fit")
    p.add_argument("--fit", required=True, help="directory written by 'fit'")
    p.add_argument("--out", required=True, help="output table")

    p = sub.add_parser("simulate", help="write one synthetic dataset and its truth")
    p.add_argument("--scenario", choices=("A", "B", "C"), default="A")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--radius", type=float, default=0.15)
    p.add_argument("--n-min", dest="n_min", type=int, default=50)
    p.add_argument("--n-max", dest="n_max", type=int, default=300)
    p.add_argument("--boundaries", default="2,4,6,8,10,15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="simulation study: MSE / CP / AL for PWD, PWL and AML")
    p.add_argument("--config", help="JSON file of sampler settings")
    p.add_argument("--scenario", choices=("A", "B", "C"), default="A")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--radius", type=float, default=0.15)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--artifacts", action="store_true", help="persist every replication's data and estimates")
    p.add_argument("--out", required=True)
    _add_mcmc_flags(p)

    p = sub.add_parser("compare", help="posterior predictive loss over family x prior combinations")
    _add_data_flags(p)
    p.add_argument("--families", default=",".join(FAMILIES))
    p.add_argument("--priors", default=",".join(PRIORS))
    p.add_argument("--ppl-mode", dest="ppl_mode", choices=("replicate", "plugin"), default="replicate")
    _add_mcmc_flags(p)
    return parser


def _resolve(args) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_json(args.config))
    skip = {"command", "verbose", "config", "func", "scenario", "m", "replications", "radius", "methods",
            "artifacts", "families", "priors", "ppl_mode"}
    values.update({k: v for k, v in vars(args).items() if k not in skip})
    return RunConfig.from_flat(values)


def _manifest(cfg: dict, command: str, inputs: dict) -> dict:
    cfg = {k: v for k, v in cfg.items() if k != "out"}
    return {
        "command": command,
        "version": __version__,
        "config": cfg,
        "inputs": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in inputs.items() if v is not None},
    }


def _load_inputs(rc: RunConfig):
    rc.require("counts", "adjacency", "boundaries", "out")
    data = load_counts(rc.counts, rc.boundaries)
    graph = load_edges(rc.adjacency, data.m)
    return data, graph


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    rc = _resolve(args)
    data, graph = _load_inputs(rc)
    out = Path(rc.out)
    draws = run_chain(rc.prior, data, graph, rc.family, prior=rc.priors, config=rc.mcmc)
    write_draws(out / "draws", draws)
    summary = summarize(draws, rc.family, area_ids=data.area_ids)
    write_summary(out / "summary.csv", summary, data.sampled)
    man = _manifest(rc.to_flat(), "fit", {"counts": rc.counts, "adjacency": rc.adjacency})
    man["area_ids"] = [str(a) for a in data.area_ids]
    write_json(out / "manifest.json", man)
    print(json.dumps({"status": "ok", "out": str(out), "acceptance": draws.acceptance}, sort_keys=True))
    return 0


def cmd_predict(args) -> int:
    fit = Path(args.fit)
    man = read_json(fit / "manifest.json")
    draws = load_draws(fit / "draws")
    ids = np.array(man.get("area_ids", range(draws.m)), dtype=object)
    idx = np.flatnonzero(~draws.sampled)
    p = draws.p
    if len(idx) == 0:
        write_table(args.out, summary_header(p), [])
    else:
        summary = summarize(draws, draws.family, area_ids=ids).subset(idx)
        write_summary(args.out, summary, np.zeros(len(idx), dtype=bool))
    print(json.dumps({"status": "ok", "non_sampled": int(len(idx)), "out": str(args.out)}))
    return 0


def cmd_simulate(args) -> int:
    sc = SimScenario(args.scenario, args.m, (args.n_min, args.n_max), parse_boundaries(args.boundaries).interior,
                     args.radius)
    ds = simulate_dataset(sc, np.random.default_rng(args.seed))
    out = Path(args.out)
    write_counts(out / "counts.csv", ds.data)
    write_edges(out / "edges.csv", ds.graph)
    write_table(out / "truth.csv", ["area", "x", "y", "n", "u_1", "u_2"],
                ([i, *ds.locations[i], ds.n[i], *ds.truth[i]] for i in range(sc.m)))
    atomic_write(out / "boundaries.txt", ",".join(fmt(z) for z in sc.boundaries) + "\n")
    write_json(out / "manifest.json", {
        "command": "simulate", "version": __version__, "seed": args.seed,
        "scenario": {"kind": sc.kind, "m": sc.m, "n_range": list(sc.n_range), "boundaries": list(sc.boundaries),
                     "radius": sc.radius},
        "mean_degree": float(ds.graph.degrees.mean()),
    })
    print(json.dumps({"status": "ok", "out": str(out), "edges": ds.graph.delta}))
    return 0


def cmd_evaluate(args) -> int:
    rc = _resolve(args)
    methods = tuple(m.strip().upper() for m in args.methods.split(",") if m.strip())
    sc = SimScenario(args.scenario, args.m, radius=args.radius)
    out = Path(args.out)
    res = run_experiment(sc, args.replications, rc.mcmc, rc.priors, seed=rc.mcmc.seed, methods=methods,
                         out_dir=out / "replications" if args.artifacts else None)
    report = {}
    for method in methods:
        met = res.metrics[method]
        rows = ([i, k + 1, met.mse[i, k], met.cp[i, k], met.al[i, k]] for i in range(sc.m) for k in range(2))
        write_table(out / f"metrics_{method}.csv", ["area", "coord", "mse", "cp", "al"], rows)
        report[method] = {"median_mse": res.median_mse(method).tolist(), "mean_cp": res.mean_cp(method).tolist(),
                          "median_al": res.median_al(method).tolist()}
    write_json(out / "report.json", {"metrics": report, "errors": res.errors})
    write_json(out / "manifest.json", {
        "command": "evaluate", "version": __version__,
        "config": {k: v for k, v in rc.to_flat().items() if k != "out"}, "methods": list(methods),
        "scenario": {"kind": sc.kind, "m": sc.m, "n_range": list(sc.n_range), "boundaries": list(sc.boundaries),
                     "radius": sc.radius},
        "replications": args.replications,
    })
    print(json.dumps({"status": "ok", "out": str(out), "errors": len(res.errors)}))
    return 0


def cmd_compare(args) -> int:
    rc = _resolve(args)
    data, graph = _load_inputs(rc)
    fams = [get_family(f.strip()).kind for f in args.families.split(",") if f.strip()]
    priors = [p.strip().upper() for p in args.priors.split(",") if p.strip()]
    rows = []
    ss = np.random.SeedSequence(rc.mcmc.seed)
    for fam in fams:
        modes = compute_area_modes(fam, data)
        for pk in priors:
            draws = run_chain(pk, data, graph, fam, prior=rc.priors, config=rc.mcmc, modes=modes)
            res = ppl(draws, data, fam, mode=args.ppl_mode, rng=np.random.default_rng(ss))
            rows.append([fam, pk, res.total, res.variance_term, res.fit_term, res.m])
    out = Path(rc.out)
    write_table(out / "ppl.csv", ["family", "prior", "ppl", "variance_term", "fit_term", "areas"], rows)
    cfg = rc.to_flat()
    cfg.update({"families": fams, "priors": priors, "ppl_mode": args.ppl_mode})
    write_json(out / "manifest.json", _manifest(cfg, "compare", {"counts": rc.counts, "adjacency": rc.adjacency}))
    best = min(rows, key=lambda r: r[2])
    print(json.dumps({"status": "ok", "out": str(out), "best": f"{best[0]}-{best[1]}"}))
    return 0


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "evaluate": cmd_evaluate,
            "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SpatialIncomeError as exc:
        err = exc.to_dict()
    except (OSError, json.JSONDecodeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "stage": args.command}
    err.setdefault("stage", args.command)
    print(json.dumps(err, sort_keys=True, default=str), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
