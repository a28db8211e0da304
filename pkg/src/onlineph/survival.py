"""Cox partial likelihood on right-censored, time-fixed covariate data.

All risk-set quantities are computed from one ascending sort of the block
and reverse cumulative sums, so every evaluation costs O(n p^2).
Tied event times are handled with the Efron (default) or Breslow
approximation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateBlockError,
    EmptyRiskSetError,
    InvalidInputError,
    SeparationError,
    SingularInformationError,
)

TIES_METHODS = ("efron", "breslow")


@dataclass(frozen=True)
class SubjectRecord:
    time: float
    status: int
    covariates: tuple[float, ...]


class _EventLayout(NamedTuple):
    event_pos: np.ndarray  # positions (in sorted order) of the events
    group: np.ndarray  # tie-group id of each event
    group_start: np.ndarray  # first sorted position with the group's time
    group_size: np.ndarray
    rank_in_group: np.ndarray  # 0..d_g-1
    has_ties: bool


class _Terms(NamedTuple):
    log_pl: float
    score: np.ndarray | None
    information: np.ndarray | None
    event_means: np.ndarray | None  # group-averaged risk-set mean per event
    event_variances: np.ndarray | None  # group-averaged V per event, (m, p, p)


def _check_ties(ties: str) -> str:
    if ties not in TIES_METHODS:
        raise InvalidInputError(f"unknown ties method {ties!r}")
    return ties


@dataclass(frozen=True, eq=False)
class DataBlock:
    """One block of subjects, stored sorted by follow-up time.

    Construction validates the data and rejects blocks without events.
    Arrays are read-only after construction.
    """

    time: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    index: int = 1

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).ravel()
        status = np.asarray(self.status).ravel()
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != time.shape[0] or status.shape != time.shape:
            raise InvalidInputError("time, status and covariates must have matching lengths")
        if time.size == 0:
            raise DegenerateBlockError("block has no records")
        if not (np.all(np.isfinite(time)) and np.all(np.isfinite(x))):
            raise InvalidInputError("non-finite time or covariate value")
        if np.any(time <= 0):
            raise InvalidInputError("time must be positive")
        if not np.all((status == 0) | (status == 1)):
            raise InvalidInputError("status must be 0 or 1")
        status = status.astype(np.int8)
        if not status.any():
            raise DegenerateBlockError(f"block {self.index} has no events")
        order = np.argsort(time, kind="stable")
        time, status, x = time[order], status[order], np.ascontiguousarray(x[order])
        for arr in (time, status, x):
            arr.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "covariates", x)

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], index: int = 1) -> "DataBlock":
        if not records:
            raise DegenerateBlockError("block has no records")
        p = len(records[0].covariates)
        if any(len(r.covariates) != p for r in records):
            raise InvalidInputError("records disagree on covariate dimension")
        return cls(
            time=[r.time for r in records],
            status=[r.status for r in records],
            covariates=np.array([r.covariates for r in records], dtype=float).reshape(len(records), p),
            index=index,
        )

    @classmethod
    def concat(cls, blocks: Iterable["DataBlock"], index: int = 0) -> "DataBlock":
        blocks = list(blocks)
        return cls(
            time=np.concatenate([b.time for b in blocks]),
            status=np.concatenate([b.status for b in blocks]),
            covariates=np.vstack([b.covariates for b in blocks]),
            index=index,
        )

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def d(self) -> int:
        return int(self.status.sum())

    @property
    def records(self) -> list[SubjectRecord]:
        return [
            SubjectRecord(float(t), int(s), tuple(float(v) for v in row))
            for t, s, row in zip(self.time, self.status, self.covariates)
        ]

    @cached_property
    def event_times(self) -> np.ndarray:
        return self.time[self._layout.event_pos]

    @cached_property
    def _centered(self) -> np.ndarray:
        # partial-likelihood quantities are invariant to shifting covariates;
        # centering improves the accuracy of the variance terms
        return self.covariates - self.covariates.mean(axis=0)

    @cached_property
    def _fit_memo(self) -> dict:
        return {}

    @cached_property
    def _layout(self) -> _EventLayout:
        event_pos = np.flatnonzero(self.status)
        ev_times = self.time[event_pos]
        uniq, group, size = np.unique(ev_times, return_inverse=True, return_counts=True)
        group_start = np.searchsorted(self.time, uniq, side="left")
        first_of_group = np.searchsorted(ev_times, uniq, side="left")
        rank = np.arange(event_pos.size) - first_of_group[group]
        return _EventLayout(event_pos, group, group_start, size, rank, bool(np.any(size > 1)))


def _validate_beta(block: DataBlock, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape != (block.p,):
        raise InvalidInputError(f"beta has length {beta.size}, expected {block.p}")
    if not np.all(np.isfinite(beta)):
        raise InvalidInputError("beta must be finite")
    return beta


def _terms(block: DataBlock, beta, ties: str = "efron", order: int = 2) -> _Terms:
    """Log partial likelihood and, up to ``order``, its derivatives and
    the per-event risk-set means/variances."""
    _check_ties(ties)
    beta = _validate_beta(block, beta)
    lay = block._layout
    x = block._centered
    eta = x @ beta
    shift = eta.max()
    w = np.exp(eta - shift)

    s0 = np.cumsum(w[::-1])[::-1][lay.group_start]
    ev = lay.event_pos
    efron = ties == "efron" and lay.has_ties
    if efron:
        frac = lay.rank_in_group / lay.group_size[lay.group]
        s0d = np.bincount(lay.group, weights=w[ev], minlength=lay.group_start.size)
        denom = s0[lay.group] - frac * s0d[lay.group]
    else:
        denom = s0[lay.group]
    log_pl = float(eta[ev].sum() - np.log(denom).sum() - ev.size * shift)
    if order == 0:
        return _Terms(log_pl, None, None, None, None)

    wx = w[:, None] * x
    s1 = np.cumsum(wx[::-1], axis=0)[::-1][lay.group_start]
    num1 = s1[lay.group]
    if efron:
        s1d = np.zeros_like(s1)
        np.add.at(s1d, lay.group, wx[ev])
        num1 = num1 - frac[:, None] * s1d[lay.group]
    means = num1 / denom[:, None]
    score = x[ev].sum(axis=0) - means.sum(axis=0)

    info = per_event_v = None
    if order >= 2:
        wxx = wx[:, :, None] * x[:, None, :]
        s2 = np.cumsum(wxx[::-1], axis=0)[::-1][lay.group_start]
        num2 = s2[lay.group]
        if efron:
            s2d = np.zeros_like(s2)
            np.add.at(s2d, lay.group, wxx[ev])
            num2 = num2 - frac[:, None, None] * s2d[lay.group]
        per_event_v = num2 / denom[:, None, None] - means[:, :, None] * means[:, None, :]
        info = per_event_v.sum(axis=0)
        info = 0.5 * (info + info.T)

    if lay.has_ties:
        # each tied event gets the average over the Efron slots of its group
        n_groups = lay.group_start.size
        gm = np.zeros((n_groups, block.p))
        np.add.at(gm, lay.group, means)
        means = gm[lay.group] / lay.group_size[lay.group][:, None]
        if per_event_v is not None:
            gv = np.zeros((n_groups, block.p, block.p))
            np.add.at(gv, lay.group, per_event_v)
            per_event_v = gv[lay.group] / lay.group_size[lay.group][:, None, None]

    means = means + block.covariates.mean(axis=0)
    return _Terms(log_pl, score, info, means, per_event_v)


def log_partial_likelihood(block: DataBlock, beta, ties: str = "efron") -> float:
    return _terms(block, beta, ties, order=0).log_pl


def score(block: DataBlock, beta, ties: str = "efron") -> np.ndarray:
    """Gradient of the log partial likelihood, sum over events of X - Xbar."""
    return _terms(block, beta, ties, order=1).score


def information(block: DataBlock, beta, ties: str = "efron") -> np.ndarray:
    """Observed information: sum over events of the risk-set variance."""
    return _terms(block, beta, ties, order=2).information


def _risk_weights(block: DataBlock, beta, t: float) -> tuple[np.ndarray, np.ndarray]:
    beta = _validate_beta(block, beta)
    at_risk = block.time >= t
    if not at_risk.any():
        raise EmptyRiskSetError(f"nobody at risk at t={t}")
    x = block.covariates[at_risk]
    eta = x @ beta
    w = np.exp(eta - eta.max())
    return x, w / w.sum()


def weighted_mean_covariates(block: DataBlock, beta, t: float) -> np.ndarray:
    x, w = _risk_weights(block, beta, t)
    return w @ x


def weighted_variance(block: DataBlock, beta, t: float) -> np.ndarray:
    x, w = _risk_weights(block, beta, t)
    centered = x - w @ x
    return (w[:, None] * centered).T @ centered


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    loglik_tol: float = 1e-10
    max_iter: int = 25
    max_halving: int = 5
    max_abs_beta: float = 50.0
    # a log-likelihood stall only counts as convergence below this score norm
    stall_score_tol: float = 1e-8


@dataclass(frozen=True)
class CoxFit:
    beta_hat: np.ndarray
    information: np.ndarray
    score: np.ndarray
    score_norm: float
    log_pl: float
    iterations: int
    converged: bool
    ties_method: str = "efron"

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.information)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def _newton_direction(info: np.ndarray, u: np.ndarray) -> np.ndarray:
    eig = np.linalg.eigvalsh(info)
    if eig[-1] <= 0 or eig[0] <= 1e-12 * eig[-1]:
        raise SingularInformationError("information matrix is singular")
    return np.linalg.solve(info, u)


SEPARATION_INFO_RATIO = 1e-6


def _information_collapsed(start: np.ndarray, final: np.ndarray) -> bool:
    """True when some direction keeps less than SEPARATION_INFO_RATIO of the
    curvature it had at the starting point.

    A score that decays only because the likelihood flattens out towards
    an infinite coefficient passes the tolerance test before |beta| gets
    large; the generalized eigenvalues catch that and are invariant to
    covariate scaling.
    """
    try:
        chol = np.linalg.cholesky(start)
    except np.linalg.LinAlgError:
        return False
    inv = np.linalg.inv(chol)
    ratio = np.linalg.eigvalsh(inv @ final @ inv.T)
    return bool(ratio[0] < SEPARATION_INFO_RATIO)


def fit_cox(block: DataBlock, init=None, opts: SolverOptions | None = None,
            ties: str = "efron") -> CoxFit:
    """Maximum partial likelihood by Newton-Raphson with step halving."""
    opts = opts or SolverOptions()
    _check_ties(ties)
    if init is None:
        # blocks are immutable, so a default-start fit can be reused
        key = (opts, ties)
        if key not in block._fit_memo:
            block._fit_memo[key] = _fit(block, None, opts, ties)
        return block._fit_memo[key]
    return _fit(block, init, opts, ties)


def _fit(block: DataBlock, init, opts: SolverOptions, ties: str) -> CoxFit:
    beta = np.zeros(block.p) if init is None else _validate_beta(block, init).copy()
    cur = _terms(block, beta, ties, order=2)
    start_info = cur.information
    converged = False
    it = 0
    while True:
        unorm = float(np.max(np.abs(cur.score)))
        if unorm < opts.tol:
            converged = True
            break
        if it >= opts.max_iter:
            break
        step = _newton_direction(cur.information, cur.score)
        it += 1
        for _ in range(opts.max_halving + 1):
            cand = beta + step
            if np.max(np.abs(cand)) > opts.max_abs_beta:
                raise SeparationError(
                    f"|beta| exceeded {opts.max_abs_beta} after {it} iterations (monotone likelihood?)"
                )
            new = _terms(block, cand, ties, order=2)
            if new.log_pl >= cur.log_pl - 1e-12 * max(1.0, abs(cur.log_pl)):
                break
            step = step / 2
        gain = new.log_pl - cur.log_pl
        beta, cur = cand, new
        if abs(gain) < opts.loglik_tol and np.max(np.abs(cur.score)) <= opts.stall_score_tol:
            converged = True
            break
    if converged and it > 0 and _information_collapsed(start_info, cur.information):
        raise SeparationError(
            f"information vanished at |beta|={np.max(np.abs(beta)):.3g} (monotone likelihood)"
        )
    for arr in (beta, cur.information, cur.score):
        arr.setflags(write=False)
    return CoxFit(
        beta_hat=beta,
        information=cur.information,
        score=cur.score,
        score_norm=float(np.max(np.abs(cur.score))),
        log_pl=cur.log_pl,
        iterations=it,
        converged=converged,
        ties_method=ties,
    )
