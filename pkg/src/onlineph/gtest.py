"""Global test of proportional hazards on a single dataset."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InvalidInputError, SingularHError
from .residuals import TransformKind, transform_and_center
from .survival import DataBlock, SolverOptions, _terms, fit_cox

H_MODES = ("simplified", "exact")
EIG_RTOL = 1e-12


@dataclass(frozen=True)
class TestResult:
    statistic: float
    df: int
    p_value: float
    version: str  # "full", "cumulative" or "window"
    k: int = 0
    rank_deficient: bool = False
    window: int | None = None
    partial_window: bool = False

    __test__ = False  # keep pytest from collecting this class


def chisq_sf(x: float, df: int) -> float:
    """Upper tail P(chi2_df > x) via the regularized upper incomplete gamma."""
    if not np.isfinite(x) or x < 0:
        raise InvalidInputError(f"chi-square argument must be >= 0, got {x}")
    if df < 1 or int(df) != df:
        raise InvalidInputError(f"df must be a positive integer, got {df}")
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def chisq_quantile(level: float, df: int) -> float:
    """x with P(chi2_df <= x) = level."""
    if not 0 <= level <= 1:
        raise InvalidInputError("level must lie in [0, 1]")
    if level == 0:
        return 0.0
    return float(2.0 * special.gammaincinv(0.5 * df, level))


def quadratic_statistic(q: np.ndarray, h: np.ndarray) -> tuple[float, int, bool]:
    """Return (q' H^- q, rank(H), rank_deficient).

    H is inverted through its symmetric eigendecomposition; eigenvalues
    below EIG_RTOL times the largest are dropped.
    """
    q = np.asarray(q, dtype=float)
    h = np.asarray(h, dtype=float)
    p = q.shape[0]
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(h))):
        raise SingularHError("non-finite H or Q")
    lam, vec = np.linalg.eigh(0.5 * (h + h.T))
    top = lam[-1] if lam.size else 0.0
    if top <= 0:
        if np.any(q != 0):
            raise SingularHError("H has no positive eigenvalue but Q is non-zero")
        return 0.0, p, True
    keep = lam > EIG_RTOL * top
    proj = vec[:, keep].T @ q
    stat = float(np.sum(proj**2 / lam[keep]))
    rank = int(keep.sum())
    return stat, rank, rank < p


def result_from(q, h, version: str, k: int = 0, **extra) -> TestResult:
    stat, rank, deficient = quadratic_statistic(q, h)
    df = rank if not deficient or rank > 0 else len(q)
    return TestResult(stat, df, chisq_sf(stat, df), version, k, deficient, **extra)


def full_test(data: DataBlock, kind=TransformKind.KAPLAN_MEIER, ties: str = "efron",
              h_mode: str = "simplified", beta=None,
              solver: SolverOptions | None = None) -> TestResult:
    """Global proportional-hazards statistic on one dataset.

    ``beta`` defaults to the dataset's own partial-likelihood estimate.
    In ``simplified`` mode each per-event variance is replaced by
    information / d; ``exact`` uses the per-event variances and the full
    three-term H.
    """
    if h_mode not in H_MODES:
        raise InvalidInputError(f"unknown h_mode {h_mode!r}")
    if beta is None:
        fit = fit_cox(data, opts=solver, ties=ties)
        if not fit.converged:
            raise InvalidInputError(f"Cox fit did not converge in {fit.iterations} iterations")
        beta = fit.beta_hat
    terms = _terms(data, beta, ties, order=2)
    resid = data.covariates[data._layout.event_pos] - terms.event_means
    g = transform_and_center(data.event_times, kind, data)
    q = g @ resid
    if h_mode == "simplified":
        h = (g @ g / g.size) * terms.information
    else:
        v = terms.event_variances
        a = np.einsum("l,lij->ij", g * g, v)
        b = np.einsum("l,lij->ij", g, v)
        h = a - b @ np.linalg.solve(terms.information, b.T)
    return result_from(q, h, "full")
