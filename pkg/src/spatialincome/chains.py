"""Entry point dispatching to the PWD or PWL sampler."""
from __future__ import annotations

from .errors import ValidationError
from .mcmc import PosteriorDraws
from .pwd import run_pwd_chain
from .pwl import run_pwl_chain

PRIORS = ("PWD", "PWL")


def run_chain(prior_kind: str, data, graph, family, prior=None, config=None, modes=None, init=None) -> PosteriorDraws:
    kind = str(prior_kind).upper()
    if kind == "PWD":
        return run_pwd_chain(data, graph, family, prior, config, modes, init)
    if kind == "PWL":
        return run_pwl_chain(data, graph, family, prior, config, modes, init)
    raise ValidationError(f"unknown prior {prior_kind!r}; expected PWD or PWL")
