"""Constant-memory online updating of the proportional-hazards test.

The stream keeps only running sums of per-block summaries, a ring of the
last ``w`` summaries, and the state of the two cumulative estimators of
beta (CEE and CUEE). Every update function returns a new state and leaves
its input untouched, so a failed block can simply be dropped.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import (
    CheckpointError,
    InvalidInputError,
    OnlinePHError,
    SingularInformationError,
)
from .gtest import TestResult, result_from
from .residuals import TransformKind, transform_and_center
from .survival import CoxFit, DataBlock, SolverOptions, _terms, fit_cox

SNAPSHOT_FORMAT = "onlineph-state"
SNAPSHOT_VERSION = 1
EVAL_CHOICES = ("cuee", "cee", "window-cee", "block-mle", "fixed")


@dataclass(frozen=True, eq=False)
class BlockSummary:
    k: int
    d_k: int
    H_blk: np.ndarray
    Q_blk: np.ndarray
    info: np.ndarray
    score_at_eval: np.ndarray
    beta_eval: np.ndarray
    beta_blk: np.ndarray
    info_blk: np.ndarray  # information at beta_blk
    info_singular: bool = False


def _is_singular(m: np.ndarray) -> bool:
    lam = np.linalg.eigvalsh(m)
    return bool(lam[-1] <= 0 or lam[0] <= 1e-12 * lam[-1])


def _solve_info(m: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    if _is_singular(m):
        raise SingularInformationError(f"{what} is singular")
    return np.linalg.solve(m, rhs)


def block_summary(block: DataBlock, beta_eval, kind=TransformKind.KAPLAN_MEIER,
                  ties: str = "efron", fit: CoxFit | None = None) -> BlockSummary:
    """Per-block (H, Q) with the per-event variance approximated by I/d.

    ``fit`` is the block's own Cox fit; it is recorded so later blocks can
    form window-local estimates. When omitted the evaluation point stands
    in for the block estimate.
    """
    beta_eval = np.asarray(beta_eval, dtype=float).ravel()
    terms = _terms(block, beta_eval, ties, order=2)
    resid = block.covariates[block._layout.event_pos] - terms.event_means
    g = transform_and_center(block.event_times, kind, block)
    d = g.size
    h = (g @ g / d) * terms.information
    q = g @ resid
    return BlockSummary(
        k=block.index,
        d_k=d,
        H_blk=h,
        Q_blk=q,
        info=terms.information,
        score_at_eval=terms.score,
        beta_eval=beta_eval,
        beta_blk=beta_eval if fit is None else fit.beta_hat,
        info_blk=terms.information if fit is None else fit.information,
        info_singular=_is_singular(terms.information),
    )


@dataclass(eq=False)
class OnlineState:
    """Everything the stream remembers between blocks.

    Size depends only on ``p`` and the window width ``w``.
    """

    p: int
    w: int = 5
    k: int = 0
    H_cum: np.ndarray = None
    Q_cum: np.ndarray = None
    cee_info: np.ndarray = None
    cee_beta: np.ndarray = None
    cuee_info: np.ndarray = None
    cuee_s: np.ndarray = None
    cuee_xi: np.ndarray = None
    cuee_beta: np.ndarray = None
    window: tuple[BlockSummary, ...] = ()

    def __post_init__(self):
        if self.p < 1:
            raise InvalidInputError("p must be >= 1")
        if self.w < 1:
            raise InvalidInputError("window width must be >= 1")
        p = self.p
        for name, shape in (("H_cum", (p, p)), ("Q_cum", (p,)), ("cee_info", (p, p)),
                            ("cee_beta", (p,)), ("cuee_info", (p, p)), ("cuee_s", (p,)),
                            ("cuee_xi", (p,)), ("cuee_beta", (p,))):
            val = getattr(self, name)
            val = np.zeros(shape) if val is None else np.array(val, dtype=float).reshape(shape)
            setattr(self, name, val)
        self.window = tuple(self.window)[-self.w:]

    def evolve(self, **changes) -> "OnlineState":
        return replace(self, **changes)

    # snapshot ---------------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "p": self.p,
            "w": self.w,
            "k": self.k,
            "arrays": {name: _pack(getattr(self, name)) for name in _STATE_ARRAYS},
            "window": [_summary_to_dict(s) for s in self.window],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OnlineState":
        if data.get("format") != SNAPSHOT_FORMAT:
            raise CheckpointError("not an online state snapshot")
        if data.get("version") != SNAPSHOT_VERSION:
            raise CheckpointError(
                f"snapshot version {data.get('version')} is not supported (expected {SNAPSHOT_VERSION})"
            )
        arrays = {name: _unpack(data["arrays"][name]) for name in _STATE_ARRAYS}
        window = tuple(_summary_from_dict(s) for s in data["window"])
        return cls(p=data["p"], w=data["w"], k=data["k"], window=window, **arrays)

    def save(self, path, **extra) -> None:
        payload = self.to_dict()
        payload.update(extra)
        write_json_atomic(path, payload)

    @classmethod
    def load(cls, path) -> "OnlineState":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


_STATE_ARRAYS = ("H_cum", "Q_cum", "cee_info", "cee_beta", "cuee_info", "cuee_s",
                 "cuee_xi", "cuee_beta")
_SUMMARY_ARRAYS = ("H_blk", "Q_blk", "info", "score_at_eval", "beta_eval", "beta_blk",
                   "info_blk")


def _pack(a: np.ndarray) -> dict[str, Any]:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    shape = list(a.shape)
    return {"shape": shape, "data": [float(v) for v in a.ravel(order="C")]}


def _unpack(d: dict[str, Any]) -> np.ndarray:
    return np.array(d["data"], dtype=float).reshape(d["shape"])


def _summary_to_dict(s: BlockSummary) -> dict[str, Any]:
    out = {"k": s.k, "d_k": s.d_k, "info_singular": s.info_singular}
    out.update({name: _pack(getattr(s, name)) for name in _SUMMARY_ARRAYS})
    return out


def _summary_from_dict(d: dict[str, Any]) -> BlockSummary:
    return BlockSummary(k=d["k"], d_k=d["d_k"], info_singular=d["info_singular"],
                        **{name: _unpack(d[name]) for name in _SUMMARY_ARRAYS})


def write_json_atomic(path, payload) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-", suffix=".json")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# test statistics --------------------------------------------------------------

def _check_dim(state: OnlineState, summary: BlockSummary) -> None:
    if summary.Q_blk.shape != (state.p,):
        raise InvalidInputError(f"summary has p={summary.Q_blk.size}, state has p={state.p}")


def update_cumulative(state: OnlineState, summary: BlockSummary) -> tuple[OnlineState, TestResult]:
    _check_dim(state, summary)
    h = state.H_cum + summary.H_blk
    q = state.Q_cum + summary.Q_blk
    k = state.k + 1
    return state.evolve(H_cum=h, Q_cum=q, k=k), result_from(q, h, "cumulative", k)


def push_window(state: OnlineState, summary: BlockSummary) -> OnlineState:
    _check_dim(state, summary)
    return state.evolve(window=(state.window + (summary,))[-state.w:])


def window_test(state: OnlineState, w: int | None = None, k: int | None = None) -> TestResult:
    """Statistic over the most recent ``w`` stored summaries.

    With fewer than ``w`` summaries available all of them are used and the
    result is flagged as a partial window.
    """
    w = state.w if w is None else w
    if w < 1:
        raise InvalidInputError("window width must be >= 1")
    if w > state.w:
        raise InvalidInputError(f"state only retains {state.w} blocks")
    if not state.window:
        raise InvalidInputError("window is empty")
    recent = state.window[-w:]
    h = sum(s.H_blk for s in recent)
    q = sum(s.Q_blk for s in recent)
    return result_from(q, h, "window", state.k if k is None else k, window=w,
                       partial_window=len(recent) < w)


# estimators -------------------------------------------------------------------

def cee_update(state: OnlineState, fit: CoxFit) -> tuple[OnlineState, np.ndarray, np.ndarray]:
    """Information-weighted running average of block estimates."""
    total = state.cee_info + fit.information
    rhs = state.cee_info @ state.cee_beta + fit.information @ fit.beta_hat
    beta = _solve_info(total, rhs, "accumulated information")
    var = np.linalg.inv(total)
    return state.evolve(cee_info=total, cee_beta=beta), beta, var


def cuee_intermediary(state: OnlineState, fit: CoxFit) -> np.ndarray:
    total = state.cuee_info + fit.information
    rhs = state.cuee_s + fit.information @ fit.beta_hat
    return _solve_info(total, rhs, "combined intermediary information")


def cuee_update(state: OnlineState, block: DataBlock, fit: CoxFit, ties: str = "efron",
                beta_check=None) -> tuple[OnlineState, np.ndarray, np.ndarray]:
    """Bias-corrected cumulative estimator.

    Needs a second pass over the block: information and score at the
    intermediary estimate.
    """
    if beta_check is None:
        beta_check = cuee_intermediary(state, fit)
    terms = _terms(block, beta_check, ties, order=2)
    info_check = terms.information
    s = state.cuee_s + info_check @ beta_check
    xi = state.cuee_xi + terms.score
    total = state.cuee_info + info_check
    beta = _solve_info(total, s + xi, "accumulated CUEE information")
    var = np.linalg.inv(total)
    new = state.evolve(cuee_info=total, cuee_s=s, cuee_xi=xi, cuee_beta=beta)
    return new, beta, var


def window_cee(state: OnlineState, fit: CoxFit) -> np.ndarray:
    """Information-weighted average of the block estimates in the window
    that ends with the current block."""
    recent = state.window[-(state.w - 1):] if state.w > 1 else ()
    infos = [s.info_blk for s in recent] + [fit.information]
    betas = [s.beta_blk for s in recent] + [fit.beta_hat]
    total = sum(infos)
    return _solve_info(total, sum(i @ b for i, b in zip(infos, betas)), "window information")


def aee_estimate(infos, betas) -> tuple[np.ndarray, np.ndarray]:
    """One-shot aggregated estimator from all block informations and MLEs."""
    total = sum(infos)
    rhs = sum(i @ b for i, b in zip(infos, betas))
    return np.linalg.solve(total, rhs), np.linalg.inv(total)


# orchestration -----------------------------------------------------------------

@dataclass(frozen=True)
class EngineOptions:
    transform: TransformKind = TransformKind.KAPLAN_MEIER
    ties: str = "efron"
    cumulative_eval: str = "cuee"
    window_eval: str = "window-cee"
    fixed_beta: tuple[float, ...] | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        object.__setattr__(self, "transform", TransformKind.parse(self.transform))
        for name in ("cumulative_eval", "window_eval"):
            if getattr(self, name) not in EVAL_CHOICES:
                raise InvalidInputError(f"{name} must be one of {EVAL_CHOICES}")
        if "fixed" in (self.cumulative_eval, self.window_eval) and self.fixed_beta is None:
            raise InvalidInputError("fixed evaluation needs fixed_beta")


@dataclass(frozen=True)
class BlockResult:
    k: int
    n_k: int
    d_k: int
    cumulative: TestResult | None = None
    window: TestResult | None = None
    beta_block: np.ndarray | None = None
    beta_cee: np.ndarray | None = None
    var_cee: np.ndarray | None = None
    beta_cuee: np.ndarray | None = None
    var_cuee: np.ndarray | None = None
    flags: tuple[str, ...] = ()
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def process_block(state: OnlineState, block: DataBlock,
                  opts: EngineOptions | None = None) -> tuple[OnlineState, BlockResult]:
    """Fit the block, update both estimators and both statistics.

    On any domain error the returned state is the input state and the
    error is recorded on the result.
    """
    opts = opts or EngineOptions()
    try:
        return _process_block(state, block, opts)
    except (OnlinePHError, np.linalg.LinAlgError) as exc:
        return state, BlockResult(state.k + 1, block.n, block.d,
                                  error=f"{type(exc).__name__}: {exc}")


def _process_block(state: OnlineState, block: DataBlock, opts: EngineOptions):
    if block.p != state.p:
        raise InvalidInputError(f"block {block.index} has p={block.p}, stream has p={state.p}")
    fit = fit_cox(block, opts=opts.solver, ties=opts.ties)
    if not fit.converged:
        raise InvalidInputError(
            f"block fit did not converge after {fit.iterations} iterations "
            f"(|U|={fit.score_norm:.3g})"
        )
    new, beta_cee, var_cee = cee_update(state, fit)
    beta_check = cuee_intermediary(new, fit)
    new, beta_cuee, var_cuee = cuee_update(new, block, fit, opts.ties, beta_check)
    chosen = (opts.cumulative_eval, opts.window_eval)

    points = {"cuee": beta_cuee, "cee": beta_cee, "block-mle": fit.beta_hat,
              "window-cee": window_cee(state, fit) if "window-cee" in chosen else None,
              "fixed": None if opts.fixed_beta is None else np.asarray(opts.fixed_beta, float)}
    cum_summary = block_summary(block, points[opts.cumulative_eval], opts.transform,
                                opts.ties, fit)
    if opts.window_eval == opts.cumulative_eval:
        win_summary = cum_summary
    else:
        win_summary = block_summary(block, points[opts.window_eval], opts.transform,
                                    opts.ties, fit)
    new, cum = update_cumulative(new, cum_summary)
    new = push_window(new, win_summary)
    win = window_test(new)

    flags = []
    if win.partial_window:
        flags.append("partial_window")
    if cum.rank_deficient:
        flags.append("cumulative_rank_deficient")
    if win.rank_deficient:
        flags.append("window_rank_deficient")
    if cum_summary.info_singular or win_summary.info_singular:
        flags.append("singular_block_information")
    result = BlockResult(new.k, block.n, block.d, cum, win, fit.beta_hat, beta_cee, var_cee,
                         beta_cuee, var_cuee, tuple(flags))
    return new, result


def stream_results(blocks, w: int = 5, opts: EngineOptions | None = None,
               state: OnlineState | None = None):
    """Process an iterable of blocks; yields (state, result) after each."""
    for block in blocks:
        if state is None:
            state = OnlineState(p=block.p, w=w)
        state, result = process_block(state, block, opts)
        yield state, result
