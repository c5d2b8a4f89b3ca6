"""Grouped-data multinomial likelihood, its u-derivatives, per-area mode finding
and the area-wise maximum likelihood (AML) baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DerivativeError, ValidationError
from .families import Family, _cdf_sf, _natural, cdf_derivatives, get_family

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class BoundaryGrid:
    """Bin boundaries ``0 = z_0 < z_1 < ... < z_{N-1} < z_N = inf``.

    Only the interior boundaries are stored.
    """

    interior: tuple[float, ...]

    def __post_init__(self):
        z = np.asarray(self.interior, dtype=float)
        if z.ndim != 1:
            raise ValidationError("interior boundaries must be a flat sequence")
        if np.any(~np.isfinite(z)) or np.any(z <= 0):
            raise ValidationError("interior boundaries must be finite and > 0")
        if np.any(np.diff(z) <= 0):
            raise ValidationError("boundaries must be strictly increasing")
        object.__setattr__(self, "interior", tuple(float(v) for v in z))

    @property
    def N(self) -> int:
        return len(self.interior) + 1

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([[0.0], self.interior, [np.inf]])

    @property
    def z_inner(self) -> np.ndarray:
        return np.asarray(self.interior, dtype=float)


@dataclass
class GroupedCounts:
    """Per-area bin counts on a shared boundary grid.

    Rows that are entirely zero mark non-sampled areas.
    """

    counts: np.ndarray
    grid: BoundaryGrid
    area_ids: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise ValidationError("counts must be a 2-D (areas x bins) array")
        if not np.all(np.isfinite(c)) or np.any(c != np.round(c)):
            raise ValidationError("counts must be integers")
        c = c.astype(np.int64)
        neg = np.argwhere(c < 0)
        if len(neg):
            raise ValidationError("negative count", areas=[int(neg[0][0])])
        if c.shape[1] != self.grid.N:
            raise ValidationError(f"counts have {c.shape[1]} bins but the grid defines {self.grid.N}")
        if self.grid.N < 2:
            log.warning("a single income bin carries no information about the distribution shape")
        self.counts = c
        if self.area_ids is None:
            self.area_ids = np.arange(c.shape[0])
        else:
            self.area_ids = np.asarray(self.area_ids)
            if len(self.area_ids) != c.shape[0]:
                raise ValidationError("area_ids length does not match counts")

    @property
    def m(self) -> int:
        return self.counts.shape[0]

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def sampled(self) -> np.ndarray:
        return self.totals > 0


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------

def bin_probabilities(family, u, grid: BoundaryGrid) -> np.ndarray:
    """Bin probabilities ``F(z_k) - F(z_{k-1})``, shape ``(..., N)``.

    Upper bins are differenced on the survival function to avoid cancellation.
    """
    family = get_family(family)
    u = np.asarray(u, dtype=float)
    eta = _natural(family, u)[..., None, :]
    zi = grid.z_inner
    F, S = _cdf_sf(family, eta, zi)
    shape = u.shape[:-1] + (grid.N + 1,)
    Fz = np.empty(shape)
    Sz = np.empty(shape)
    Fz[..., 0], Sz[..., 0] = 0.0, 1.0
    Fz[..., -1], Sz[..., -1] = 1.0, 0.0
    Fz[..., 1:-1], Sz[..., 1:-1] = F, S
    lo_F = Fz[..., :-1]
    return np.where(lo_F < 0.5, Fz[..., 1:] - lo_F, Sz[..., :-1] - Sz[..., 1:])


def log_multinomial(family, u, counts, grid: BoundaryGrid, floor: float = PROB_FLOOR, return_clamped: bool = False):
    """``sum_k c_k log(F(z_k) - F(z_{k-1}))`` with the multinomial coefficient dropped.

    ``u`` has shape ``(p,)`` or ``(B, p)``; ``counts`` broadcasts against the
    leading axes.
    """
    family = get_family(family)
    counts = np.asarray(counts)
    probs = bin_probabilities(family, u, grid)
    low = (probs < floor) & (counts > 0)
    clamped = bool(np.any(low))
    if clamped:
        log.debug("bin probability clamped at %g", floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(np.maximum(probs, floor))
    val = np.sum(np.where(counts > 0, counts * logp, 0.0), axis=-1)
    if return_clamped:
        return val, clamped
    return val


def _grad_hess_analytic(family: Family, u, counts, grid: BoundaryGrid):
    u = np.atleast_2d(u)
    B, p, N = u.shape[0], family.p, grid.N
    F, S, dF, d2F = cdf_derivatives(family, u, grid.z_inner)
    dFz = np.zeros((B, N + 1, p))
    d2Fz = np.zeros((B, N + 1, p, p))
    dFz[:, 1:-1], d2Fz[:, 1:-1] = dF, d2F
    dpi = dFz[:, 1:] - dFz[:, :-1]
    d2pi = d2Fz[:, 1:] - d2Fz[:, :-1]
    probs = np.maximum(bin_probabilities(family, u, grid), PROB_FLOOR)
    c = np.broadcast_to(np.asarray(counts, dtype=float), probs.shape)
    w = np.where(c > 0, c / probs, 0.0)
    grad = np.einsum("bk,bkp->bp", w, dpi)
    hess = np.einsum("bk,bkpq->bpq", w, d2pi) - np.einsum(
        "bk,bkp,bkq->bpq", np.where(c > 0, w / probs, 0.0), dpi, dpi
    )
    return grad, hess


def _grad_hess_numeric(family: Family, u, counts, grid: BoundaryGrid, h_grad=1e-5, h_hess=1e-4):
    u = np.asarray(u, dtype=float)
    p = family.p
    eye = np.eye(p)
    L = lambda x: log_multinomial(family, x, counts, grid)
    grad = np.array([(L(u + h_grad * eye[j]) - L(u - h_grad * eye[j])) / (2 * h_grad) for j in range(p)])
    hess = np.empty((p, p))
    h = h_hess
    for j in range(p):
        for k in range(j, p):
            ej, ek = h * eye[j], h * eye[k]
            val = (L(u + ej + ek) - L(u + ej - ek) - L(u - ej + ek) + L(u - ej - ek)) / (4 * h * h)
            hess[j, k] = hess[k, j] = val
    return grad, hess


def grad_hess(family, u, counts, grid: BoundaryGrid, method: str = "analytic"):
    """Gradient and Hessian of :func:`log_multinomial` in ``u`` for one area.

    ``method="analytic"`` differentiates the closed-form CDFs;
    ``method="numeric"`` uses central differences of the log-likelihood.
    """
    family = get_family(family)
    u = np.asarray(u, dtype=float)
    counts = np.asarray(counts)
    if method == "analytic":
        g, H = _grad_hess_analytic(family, u[None, :], counts[None, :], grid)
        g, H = g[0], H[0]
    elif method == "numeric":
        g, H = _grad_hess_numeric(family, u, counts, grid)
    else:
        raise ValidationError(f"unknown derivative method {method!r}")
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
        raise DerivativeError("non-finite likelihood derivative", stage="grad_hess")
    return g, H


# ---------------------------------------------------------------------------
# mode finding
# ---------------------------------------------------------------------------

@dataclass
class ModeApprox:
    u_tilde: np.ndarray
    P: np.ndarray
    converged: bool
    grad_norm: float = 0.0
    iterations: int = 0
    ridge: float = 0.0
    reason: str = ""


def _ridge(P, p):
    """Ridge ``eps I`` with ``eps = 1e-6 trace(P)/p``, only if P is not positive definite."""
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P)
        return P, 0.0
    except np.linalg.LinAlgError:
        pass
    eps = 1e-6 * max(np.trace(P) / p, 1.0)
    min_eig = float(np.linalg.eigvalsh(P)[0])
    if min_eig < 0:
        eps += -min_eig
    while True:
        Pr = P + eps * np.eye(p)
        try:
            np.linalg.cholesky(Pr)
            return Pr, eps
        except np.linalg.LinAlgError:
            eps *= 10


def grouped_quantiles(row, grid: BoundaryGrid, qs=(0.25, 0.5, 0.75)):
    """Quantiles of grouped data by log-linear interpolation between boundaries."""
    row = np.asarray(row, dtype=float)
    n = row.sum()
    zi = grid.z_inner
    if n <= 0 or len(zi) == 0:
        return None
    cum = np.cumsum(row)[:-1] / n
    logz = np.log(zi)
    # extend one step beyond each end so extreme quantiles stay finite
    span = np.log(zi[-1] / zi[0]) / max(len(zi) - 1, 1) if len(zi) > 1 else np.log(2.0)
    xp = np.concatenate([[0.0], cum, [1.0]])
    fp = np.concatenate([[logz[0] - span], logz, [logz[-1] + span]])
    xp = xp + 1e-12 * np.arange(len(xp))  # ties from empty bins
    return np.exp(np.interp(qs, xp, fp))


def initial_u(family, row, grid: BoundaryGrid) -> np.ndarray:
    """Quantile-matching start: model median matches the grouped median."""
    family = get_family(family)
    q = grouped_quantiles(row, grid)
    if q is None:
        return np.zeros(family.p)
    q25, med, q75 = q
    iqr = np.log(q75 / q25)
    if family.kind == "LN":
        sd = iqr / 1.349 if iqr > 1e-8 else 0.5
        return np.array([np.log(med), 2 * np.log(max(sd, 0.05))])
    # log-logistic member (c = 1) of both SM and DG
    a = 2 * np.log(3.0) / iqr if iqr > 1e-8 else 4.0
    a = float(np.clip(a, 0.5, 20.0))
    return np.array([np.log(a), np.log(med), 0.0])


def find_mode(family, row, grid: BoundaryGrid, init=None, tol: float = 1e-6, max_iter: int = 200,
              max_step: float = 3.0) -> ModeApprox:
    """Damped Newton ascent of the area log-likelihood with backtracking.

    Returns the mode and the (ridged if necessary) negative Hessian there.
    Rows whose counts occupy a single bin have a divergent maximiser and are
    returned with ``converged=False``.
    """
    family = get_family(family)
    p = family.p
    row = np.asarray(row)
    u = np.asarray(initial_u(family, row, grid) if init is None else init, dtype=float).copy()
    if row.sum() <= 0:
        raise ValidationError("find_mode requires a positive total count", stage="find_mode")
    if grid.N == 1:
        P, eps = _ridge(np.zeros((p, p)), p)
        return ModeApprox(u, P, True, 0.0, 0, eps, "flat likelihood")

    L = lambda x: float(log_multinomial(family, x, row, grid))
    cur = L(u)
    g, H = grad_hess(family, u, row, grid)
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= tol:
            break
        negH = -0.5 * (H + H.T)
        w, V = np.linalg.eigh(negH)
        scale = max(np.abs(w).max(), 1e-12)
        w = np.maximum(np.abs(w), 1e-8 * scale)
        step = V @ ((V.T @ g) / w)
        norm = np.linalg.norm(step)
        if norm > max_step:
            step *= max_step / norm
        alpha, improved = 1.0, False
        for _ in range(40):
            cand = u + alpha * step
            val = L(cand)
            if np.isfinite(val) and val >= cur + 1e-4 * alpha * float(g @ step):
                improved = True
                break
            alpha *= 0.5
        if not improved:
            # fall back to a tiny gradient step before giving up
            cand = u + 1e-3 * g / max(np.linalg.norm(g), 1.0)
            val = L(cand)
            if not (np.isfinite(val) and val > cur):
                break
        u, cur = cand, val
        g, H = grad_hess(family, u, row, grid)

    gnorm = float(np.linalg.norm(g))
    P, eps = _ridge(-H, p)
    converged = gnorm <= tol
    reason = "" if converged else "gradient tolerance not reached"
    if np.count_nonzero(row) < 2:
        converged, reason = False, "counts occupy a single bin; maximiser diverges"
    elif converged and eps > 0:
        converged, reason = False, "negative Hessian not positive definite at the stationary point"
    return ModeApprox(u, P, converged, gnorm, it, eps, reason)


def find_modes(family, data: GroupedCounts) -> list[ModeApprox | None]:
    """:func:`find_mode` for every sampled area; ``None`` for non-sampled rows."""
    out = []
    for i in range(data.m):
        if data.totals[i] > 0:
            out.append(find_mode(family, data.counts[i], data.grid))
        else:
            out.append(None)
    return out


# ---------------------------------------------------------------------------
# area-wise maximum likelihood
# ---------------------------------------------------------------------------

@dataclass
class AmlResult:
    estimates: np.ndarray
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    converged: np.ndarray
    excluded: list[int] = field(default_factory=list)


def aml_fit(family, data: GroupedCounts, z: float = 1.959963984540054) -> AmlResult:
    """Fit each sampled area separately; Wald intervals from the observed information.

    Non-sampled and non-converged areas get NaN rows and are listed in ``excluded``.
    """
    family = get_family(family)
    m, p = data.m, family.p
    est = np.full((m, p), np.nan)
    cov = np.full((m, p, p), np.nan)
    conv = np.zeros(m, dtype=bool)
    for i, mode in enumerate(find_modes(family, data)):
        if mode is None or not mode.converged:
            continue
        est[i] = mode.u_tilde
        cov[i] = np.linalg.inv(mode.P)
        conv[i] = True
    sd = np.sqrt(np.diagonal(cov, axis1=1, axis2=2))
    excluded = [int(i) for i in np.flatnonzero(~conv)]
    if excluded:
        log.info("AML excluded %d area(s): %s", len(excluded), excluded[:20])
    return AmlResult(est, cov, est - z * sd, est + z * sd, conv, excluded)
