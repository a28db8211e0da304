"""Simulated survival streams and the size / power / QQ / permutation studies.

Each (replicate, block) pair owns an independent Philox sub-stream derived
from the run seed, so a block can be regenerated in isolation and
replicates can run in any order or in parallel.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateBlockError, InvalidInputError
from .gtest import chisq_quantile, full_test
from .online import EngineOptions, OnlineState, process_block
from .residuals import TransformKind
from .survival import DataBlock

SCENARIOS = ("null", "frailty", "beta_shift")
CENSOR_MAX = 60.0


@dataclass(frozen=True)
class SimConfig:
    K: int = 50
    n_k: int = 1000
    beta: tuple[float, ...] = (0.67, -0.26, 0.36)
    lambda0: float = 0.018
    epsilon: float = 0.9
    scenario: str = "null"
    sigma: float = 0.0  # frailty standard deviation
    delta: float = 0.0  # shift added to the first coefficient
    change_block: int | None = None  # defaults to the middle of the stream
    transform: TransformKind = TransformKind.KAPLAN_MEIER
    ties: str = "efron"
    w: int = 5
    replicates: int = 500
    seed: int = 20190521
    alpha: float = 0.05
    cumulative_eval: str = "cuee"
    window_eval: str = "window-cee"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "transform", TransformKind.parse(self.transform))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.change_block is None:
            object.__setattr__(self, "change_block", self.K // 2 + 1)
        if self.scenario not in SCENARIOS:
            raise InvalidInputError(f"scenario must be one of {SCENARIOS}")
        if not self.lambda0 > 0:
            raise InvalidInputError("lambda0 must be positive")
        if not 0 <= self.epsilon <= 1:
            raise InvalidInputError("epsilon must lie in [0, 1]")
        if self.K < 1 or self.n_k < 1 or self.replicates < 1 or self.w < 1:
            raise InvalidInputError("K, n_k, replicates and w must be >= 1")
        if not 1 <= self.change_block <= self.K:
            raise InvalidInputError("change_block must lie in 1..K")
        if not 0 <= self.alpha <= 1:
            raise InvalidInputError("alpha must lie in [0, 1]")

    @property
    def p(self) -> int:
        return len(self.beta)

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


def block_rng(seed: int, replicate: int, k: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replicate, k))
    return np.random.Generator(np.random.Philox(ss))


def draw_covariates(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    """N(0,1), Bernoulli(0.5), Bernoulli(0.1); extra columns are N(0,1)."""
    x = np.empty((n, p))
    x[:, 0] = rng.standard_normal(n)
    if p > 1:
        x[:, 1] = rng.random(n) < 0.5
    if p > 2:
        x[:, 2] = rng.random(n) < 0.1
    for j in range(3, p):
        x[:, j] = rng.standard_normal(n)
    return x


def generate_block(config: SimConfig, k: int, replicate: int = 0,
                   rng: np.random.Generator | None = None) -> DataBlock:
    rng = block_rng(config.seed, replicate, k) if rng is None else rng
    n = config.n_k
    x = draw_covariates(rng, n, config.p)
    # always drawn so every scenario consumes the same random numbers
    frailty = rng.standard_normal(n)
    base = rng.standard_exponential(n)
    mix = rng.random(n)
    uniform_c = rng.uniform(0.0, CENSOR_MAX, n)

    changed = k >= config.change_block
    beta = np.array(config.beta)
    if config.scenario == "beta_shift" and changed:
        beta[0] += config.delta
    eta = x @ beta
    if config.scenario == "frailty" and changed:
        eta = eta + config.sigma * frailty
    event_time = base / (config.lambda0 * np.exp(eta))
    censor = np.where(mix < config.epsilon, CENSOR_MAX, uniform_c)
    status = (event_time < censor).astype(np.int8)
    return DataBlock(np.minimum(event_time, censor), status, x, index=k)


# stream traces -----------------------------------------------------------------

@dataclass
class StreamTrace:
    """Per-block statistics of one replicate, one row per transform."""

    replicate: int
    transforms: tuple[TransformKind, ...]
    stat_cum: np.ndarray  # (n_transforms, K), nan where the block failed
    stat_win: np.ndarray
    pooled: np.ndarray  # (n_transforms, n_checkpoints) pooled-data statistics
    beta_cee: np.ndarray  # terminal estimates
    beta_cuee: np.ndarray
    errors: list[str] = field(default_factory=list)


def simulate_stream(config: SimConfig, replicate: int = 0,
                    transforms: Sequence | None = None,
                    checkpoints: Sequence[int] = (),
                    engine_overrides: dict | None = None) -> StreamTrace:
    """Run the online engine over one simulated stream.

    Several transforms share each generated block (and its Cox fit).
    ``checkpoints`` additionally computes the full-data statistic on the
    concatenation of blocks 1..k, which requires keeping the blocks.
    """
    kinds = tuple(TransformKind.parse(t) for t in (transforms or (config.transform,)))
    base = dict(ties=config.ties, cumulative_eval=config.cumulative_eval,
                window_eval=config.window_eval)
    base.update(engine_overrides or {})
    opts = [EngineOptions(transform=t, **base) for t in kinds]
    states = [OnlineState(p=config.p, w=config.w) for _ in kinds]
    K = config.K
    stat_cum = np.full((len(kinds), K), np.nan)
    stat_win = np.full((len(kinds), K), np.nan)
    checkpoints = sorted(set(checkpoints))
    pooled = np.full((len(kinds), len(checkpoints)), np.nan)
    kept: list[DataBlock] = []
    errors = []
    for k in range(1, K + 1):
        block = generate_block(config, k, replicate)
        if checkpoints:
            kept.append(block)
        for i, opt in enumerate(opts):
            states[i], res = process_block(states[i], block, opt)
            if res.ok:
                stat_cum[i, k - 1] = res.cumulative.statistic
                stat_win[i, k - 1] = res.window.statistic
            else:
                errors.append(f"replicate {replicate} block {k}: {res.error}")
        if k in checkpoints:
            data = DataBlock.concat(kept, index=0)
            j = checkpoints.index(k)
            for i, t in enumerate(kinds):
                pooled[i, j] = full_test(data, t, config.ties).statistic
    return StreamTrace(replicate, kinds, stat_cum, stat_win, pooled,
                       states[0].cee_beta.copy(), states[0].cuee_beta.copy(), errors)


def _trace_job(args):
    config, replicate, transforms, checkpoints = args
    return simulate_stream(config, replicate, transforms, checkpoints)


def run_replicates(config: SimConfig, transforms=None, checkpoints=()) -> list[StreamTrace]:
    jobs = [(config, r, transforms, tuple(checkpoints)) for r in range(config.replicates)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_trace_job, jobs, chunksize=max(1, len(jobs) // (4 * config.workers))))
    return [_trace_job(j) for j in jobs]


# rejection curves --------------------------------------------------------------

@dataclass
class RejectionCurve:
    """Per-block rejection rates for both statistics and one transform."""

    config: SimConfig
    transform: TransformKind
    stat_cum: np.ndarray  # (replicates, K)
    stat_win: np.ndarray
    errors: list[str] = field(default_factory=list)

    @property
    def cutoff(self) -> float:
        return chisq_quantile(1 - self.config.alpha, self.config.p)

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, self.config.K + 1)

    def _rates(self, stat):
        valid = ~np.isnan(stat)
        n = valid.sum(axis=0)
        rej = np.where(valid, stat > self.cutoff, False).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            rate = rej / n
            se = np.sqrt(rate * (1 - rate) / n)
        return rate, se, n

    def rates(self, version: str):
        return self._rates(self.stat_cum if version == "cumulative" else self.stat_win)

    @property
    def rate_cum(self) -> np.ndarray:
        return self.rates("cumulative")[0]

    @property
    def rate_win(self) -> np.ndarray:
        return self.rates("window")[0]

    @property
    def failures(self) -> int:
        return int(np.isnan(self.stat_cum).sum())

    def first_k_above(self, version: str, threshold: float = 0.5) -> int | None:
        rate = self.rates(version)[0]
        hits = np.flatnonzero(rate > threshold)
        return int(hits[0] + 1) if hits.size else None

    def tidy_rows(self):
        cut = self.cutoff
        for r in range(self.stat_cum.shape[0]):
            for k in range(self.config.K):
                for version, stat in (("cumulative", self.stat_cum), ("window", self.stat_win)):
                    t = stat[r, k]
                    yield {"replicate": r, "k": k + 1, "version": version,
                           "transform": self.transform.value,
                           "statistic": "" if np.isnan(t) else repr(float(t)),
                           "reject": "" if np.isnan(t) else int(t > cut)}

    def summary_rows(self):
        for version in ("cumulative", "window"):
            rate, se, n = self.rates(version)
            for k in range(self.config.K):
                yield {"k": k + 1, "version": version, "transform": self.transform.value,
                       "rejection_rate": repr(float(rate[k])), "mc_se": repr(float(se[k])),
                       "n": int(n[k])}

    def write_csv(self, directory, stem: str) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tidy = directory / f"{stem}_{self.transform.value}_tidy.csv"
        summary = directory / f"{stem}_{self.transform.value}_summary.csv"
        _write_rows(tidy, self.tidy_rows())
        _write_rows(summary, self.summary_rows())
        return tidy, summary


def _write_rows(path: Path, rows) -> None:
    rows = iter(rows)
    first = next(rows, None)
    with open(path, "w", newline="") as fh:
        if first is None:
            return
        writer = csv.DictWriter(fh, fieldnames=list(first))
        writer.writeheader()
        writer.writerow(first)
        writer.writerows(rows)


def _curves(config: SimConfig, transforms) -> dict[TransformKind, RejectionCurve]:
    kinds = tuple(TransformKind.parse(t) for t in (transforms or (config.transform,)))
    return curves_from_traces(config, run_replicates(config, kinds))


def curves_from_traces(config: SimConfig, traces: Sequence[StreamTrace]) -> dict[TransformKind, RejectionCurve]:
    """Rejection curves for every transform carried by the traces."""
    kinds = traces[0].transforms
    errors = [e for t in traces for e in t.errors]
    return {
        kind: RejectionCurve(
            config.with_(transform=kind), kind,
            np.array([t.stat_cum[i] for t in traces]),
            np.array([t.stat_win[i] for t in traces]),
            errors,
        )
        for i, kind in enumerate(kinds)
    }


def size_experiment(config: SimConfig, transforms=None) -> dict[TransformKind, RejectionCurve]:
    if config.scenario != "null":
        raise InvalidInputError("size experiment needs the null scenario")
    return _curves(config, transforms)


def power_experiment(config: SimConfig, transforms=None) -> dict[TransformKind, RejectionCurve]:
    if config.scenario not in ("frailty", "beta_shift"):
        raise InvalidInputError("power experiment needs the frailty or beta_shift scenario")
    return _curves(config, transforms)


# QQ ---------------------------------------------------------------------------

@dataclass
class QQResult:
    checkpoints: tuple[int, ...]
    online: np.ndarray  # (replicates, n_checkpoints)
    pooled: np.ndarray
    df: int

    def ks_online_vs_pooled(self) -> list[float]:
        return [float(stats.ks_2samp(self.online[:, j], self.pooled[:, j]).pvalue)
                for j in range(len(self.checkpoints))]

    def ks_vs_chisq(self, which: str = "online") -> list[float]:
        sample = self.online if which == "online" else self.pooled
        return [float(stats.kstest(sample[:, j], "chi2", args=(self.df,)).pvalue)
                for j in range(len(self.checkpoints))]


def qq_experiment(config: SimConfig, checkpoints: Sequence[int]) -> QQResult:
    """Online statistic and pooled-data statistic at each checkpoint."""
    if config.scenario != "null":
        raise InvalidInputError("QQ experiment needs the null scenario")
    checkpoints = tuple(sorted(set(int(c) for c in checkpoints)))
    if not checkpoints or checkpoints[0] < 1 or checkpoints[-1] > config.K:
        raise InvalidInputError("checkpoints must lie in 1..K")
    traces = run_replicates(config, (config.transform,), checkpoints)
    idx = np.array(checkpoints) - 1
    online = np.array([t.stat_cum[0, idx] for t in traces])
    pooled = np.array([t.pooled[0] for t in traces])
    return QQResult(checkpoints, online, pooled, config.p)


# permutation -----------------------------------------------------------------------

@dataclass
class PermutationResult:
    observed: float
    permuted: np.ndarray
    p_value: float
    retries: int


def terminal_statistic(blocks: Sequence[DataBlock], w: int = 5,
                       opts: EngineOptions | None = None) -> float:
    state = OnlineState(p=blocks[0].p, w=w)
    last = None
    for block in blocks:
        state, res = process_block(state, block, opts)
        if res.ok:
            last = res.cumulative.statistic
    if last is None:
        raise InvalidInputError("no block of the stream could be processed")
    return last


def permutation_experiment(blocks: Sequence[DataBlock], n_perm: int,
                           rng: np.random.Generator | None = None, w: int = 5,
                           opts: EngineOptions | None = None,
                           max_retries: int = 1000) -> PermutationResult:
    """Reference distribution of the terminal cumulative statistic under
    random re-ordering of subjects across the stream's blocks."""
    if n_perm < 1:
        raise InvalidInputError("n_perm must be >= 1")
    if len(blocks) < 2:
        raise InvalidInputError("need at least two blocks")
    rng = rng if rng is not None else np.random.default_rng()
    observed = terminal_statistic(blocks, w, opts)
    pooled = DataBlock.concat(blocks)
    sizes = np.cumsum([b.n for b in blocks])[:-1]
    permuted = np.empty(n_perm)
    retries = 0
    for i in range(n_perm):
        while True:
            perm = rng.permutation(pooled.n)
            try:
                shuffled = [
                    DataBlock(pooled.time[idx], pooled.status[idx], pooled.covariates[idx], index=j + 1)
                    for j, idx in enumerate(np.split(perm, sizes))
                ]
                break
            except DegenerateBlockError:
                retries += 1
                if retries > max_retries:
                    raise
        permuted[i] = terminal_statistic(shuffled, w, opts)
    p_value = (1 + np.sum(permuted >= observed)) / (n_perm + 1)
    return PermutationResult(observed, permuted, float(p_value), retries)


def default_output_dir() -> Path:
    return Path(os.environ.get("ONLINEPH_OUTPUT_DIR", "results"))
