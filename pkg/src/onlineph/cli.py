"""Command-line front end.

Exit status: 0 when every block was processed, 2 when some blocks failed,
1 on fatal configuration or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, TextIO

import numpy as np

from . import __version__
from .errors import CheckpointError, OnlinePHError
from .gtest import chisq_quantile, full_test
from .ingest import IngestError, blocks_to_csv, ingest_blocks
from .online import (
    BlockResult,
    EngineOptions,
    OnlineState,
    process_block,
    write_json_atomic,
)
from .residuals import TransformKind
from .sim import (
    SimConfig,
    default_output_dir,
    generate_block,
    permutation_experiment,
    power_experiment,
    qq_experiment,
    size_experiment,
)
from .survival import DataBlock, fit_cox

EXIT_OK, EXIT_FATAL, EXIT_BLOCK_ERRORS = 0, 1, 2

STREAM_FIELDS = ("k", "block", "n_k", "d_k", "T_cum", "df_cum", "p_cum", "reject_cum",
                 "T_win", "df_win", "p_win", "reject_win", "beta_block", "beta_cee",
                 "se_cee", "beta_cuee", "se_cuee", "flags", "error")

EVAL_POLICIES = {
    "paper-default": ("cuee", "window-cee"),
    "block-mle": ("block-mle", "block-mle"),
    "fixed": ("fixed", "fixed"),
}


# output --------------------------------------------------------------------------

def format_value(v) -> str:
    """JSON text with floats at 17 significant digits; NaN/inf become null."""
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(v, np.ndarray):
        return format_value(v.tolist())
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {format_value(x)}" for k, x in v.items()) + "}"
    return json.dumps(str(v))


class RecordWriter:
    def __init__(self, fh: TextIO, fmt: str, fields: Iterable[str] | None = None):
        self.fh = fh
        self.fmt = fmt
        self.fields = list(fields) if fields else None
        self._csv = None

    def write(self, record: dict[str, Any]) -> None:
        if self.fmt == "jsonl":
            self.fh.write(format_value(record) + "\n")
        else:
            if self._csv is None:
                self._csv = csv.DictWriter(self.fh, fieldnames=self.fields or list(record),
                                           lineterminator="\n")
                self._csv.writeheader()
            self._csv.writerow({k: _csv_cell(v) for k, v in record.items()})
        self.fh.flush()


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (list, tuple, np.ndarray)):
        return ";".join(_csv_cell(x) for x in (v.tolist() if isinstance(v, np.ndarray) else v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g") if math.isfinite(v) else ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def _se(var):
    return None if var is None else np.sqrt(np.diag(var))


def stream_record(result: BlockResult, label: str, alpha: float, p: int | None) -> dict[str, Any]:
    cum, win = result.cumulative, result.window
    cut_cum = chisq_quantile(1 - alpha, cum.df) if cum else None
    cut_win = chisq_quantile(1 - alpha, win.df) if win else None
    return {
        "k": result.k if result.ok else None,
        "block": label,
        "n_k": result.n_k,
        "d_k": result.d_k,
        "T_cum": cum.statistic if cum else None,
        "df_cum": cum.df if cum else None,
        "p_cum": cum.p_value if cum else None,
        "reject_cum": cum.statistic > cut_cum if cum else None,
        "T_win": win.statistic if win else None,
        "df_win": win.df if win else None,
        "p_win": win.p_value if win else None,
        "reject_win": win.statistic > cut_win if win else None,
        "beta_block": result.beta_block,
        "beta_cee": result.beta_cee,
        "se_cee": _se(result.var_cee),
        "beta_cuee": result.beta_cuee,
        "se_cuee": _se(result.var_cuee),
        "flags": list(result.flags),
        "error": result.error,
    }


def error_record(err: IngestError) -> dict[str, Any]:
    rec = dict.fromkeys(STREAM_FIELDS)
    rec.update(block=err.label, n_k=err.n_rows, flags=["ingest_error"],
               error=f"{err.source}: {err.message}")
    return rec


# stream ----------------------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    input: str = "-"
    transform: TransformKind = TransformKind.KAPLAN_MEIER
    ties: str = "efron"
    w: int = 5
    alpha: float = 0.05
    h_mode: str = "simplified"
    eval_policy: str = "paper-default"
    cumulative_eval: str | None = None
    window_eval: str | None = None
    fixed_beta: tuple[float, ...] | None = None
    checkpoint: str | None = None
    resume: bool = False
    output: str = "jsonl"
    block_size: int | None = None

    def engine_options(self) -> EngineOptions:
        cum, win = EVAL_POLICIES[self.eval_policy]
        return EngineOptions(
            transform=self.transform, ties=self.ties,
            cumulative_eval=self.cumulative_eval or cum,
            window_eval=self.window_eval or win,
            fixed_beta=self.fixed_beta,
        )

    def options_fingerprint(self) -> dict[str, Any]:
        opts = self.engine_options()
        return {"transform": opts.transform.value, "ties": opts.ties,
                "cumulative_eval": opts.cumulative_eval, "window_eval": opts.window_eval,
                "fixed_beta": list(opts.fixed_beta) if opts.fixed_beta else None,
                "w": self.w}


def run_stream(config: RunConfig, out: TextIO = sys.stdout, err: TextIO = sys.stderr) -> int:
    """Drive the online engine over the input, one output record per block.

    With a checkpoint path the state is written after every block; with
    ``resume`` the saved state is loaded and the blocks it already
    consumed are skipped.
    """
    opts = config.engine_options()
    state: OnlineState | None = None
    consumed = 0
    if config.resume:
        if not config.checkpoint or not os.path.exists(config.checkpoint):
            raise CheckpointError("--resume needs an existing --checkpoint file")
        with open(config.checkpoint) as fh:
            payload = json.load(fh)
        state = OnlineState.from_dict(payload)
        if payload.get("options") != config.options_fingerprint():
            raise CheckpointError("checkpoint was written with different options")
        consumed = int(payload["blocks_consumed"])

    writer = RecordWriter(out, config.output, STREAM_FIELDS)
    status = EXIT_OK
    for position, item in enumerate(ingest_blocks(config.input, config.block_size), start=1):
        if position <= consumed:
            continue
        if isinstance(item, IngestError):
            writer.write(error_record(item))
            status = EXIT_BLOCK_ERRORS
        else:
            if state is None:
                state = OnlineState(p=item.p, w=config.w)
            state, result = process_block(state, item, opts)
            if not result.ok:
                status = EXIT_BLOCK_ERRORS
            writer.write(stream_record(result, str(item.index), config.alpha, state.p))
        if config.checkpoint and state is not None:
            payload = state.to_dict()
            payload["blocks_consumed"] = position
            payload["options"] = config.options_fingerprint()
            write_json_atomic(config.checkpoint, payload)
    return status


def _good_blocks(source, block_size, err: TextIO):
    bad = 0
    blocks = []
    for item in ingest_blocks(source, block_size):
        if isinstance(item, IngestError):
            err.write(f"block {item.label}: {item.message}\n")
            bad += 1
        else:
            blocks.append(item)
    return blocks, bad


def run_fit(config: RunConfig, out: TextIO, err: TextIO) -> int:
    writer = RecordWriter(out, config.output)
    status = EXIT_OK
    for item in ingest_blocks(config.input, config.block_size):
        if isinstance(item, IngestError):
            writer.write({"block": item.label, "n": item.n_rows, "error": item.message})
            status = EXIT_BLOCK_ERRORS
            continue
        rec = {"block": str(item.index), "n": item.n, "d": item.d}
        try:
            fit = fit_cox(item, ties=config.ties)
            rec.update(beta=fit.beta_hat, se=fit.se, log_pl=fit.log_pl,
                       iterations=fit.iterations, converged=fit.converged, error=None)
            if not fit.converged:
                status = EXIT_BLOCK_ERRORS
        except (OnlinePHError, np.linalg.LinAlgError) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
            status = EXIT_BLOCK_ERRORS
        writer.write(rec)
    return status


def run_test_full(config: RunConfig, out: TextIO, err: TextIO) -> int:
    blocks, bad = _good_blocks(config.input, config.block_size, err)
    if not blocks:
        err.write("no usable data\n")
        return EXIT_FATAL
    data = DataBlock.concat(blocks)
    res = full_test(data, config.transform, config.ties, config.h_mode)
    RecordWriter(out, config.output).write({
        "n": data.n, "d": data.d, "blocks": len(blocks), "statistic": res.statistic,
        "df": res.df, "p_value": res.p_value, "transform": config.transform.value,
        "h_mode": config.h_mode, "rank_deficient": res.rank_deficient,
    })
    return EXIT_BLOCK_ERRORS if bad else EXIT_OK


def run_permute(config: RunConfig, n_perm: int, seed: int, out: TextIO, err: TextIO) -> int:
    blocks, bad = _good_blocks(config.input, config.block_size, err)
    if len(blocks) < 2:
        err.write("permutation needs at least two usable blocks\n")
        return EXIT_FATAL
    res = permutation_experiment(blocks, n_perm, np.random.default_rng(seed), w=config.w,
                                 opts=config.engine_options())
    RecordWriter(out, config.output).write({
        "observed": res.observed, "p_value": res.p_value, "n_perm": n_perm,
        "retries": res.retries, "permuted": res.permuted,
    })
    return EXIT_BLOCK_ERRORS if bad else EXIT_OK


def run_simulate(args, out: TextIO, err: TextIO) -> int:
    transforms = [TransformKind.parse(t) for t in args.transform]
    cfg = SimConfig(
        K=args.K, n_k=args.n_k, lambda0=args.lambda0, epsilon=args.epsilon,
        scenario=args.scenario, sigma=args.sigma, delta=args.delta,
        change_block=args.change_block, transform=transforms[0], ties=args.ties,
        w=args.window, replicates=args.replicates, seed=args.seed, alpha=args.alpha,
        workers=args.workers,
    )
    if args.experiment == "stream":
        blocks_to_csv((generate_block(cfg, k, args.replicate) for k in range(1, cfg.K + 1)), out)
        return EXIT_OK
    outdir = Path(args.output_dir) if args.output_dir else default_output_dir()
    stem = args.name or f"{args.experiment}_{cfg.scenario}_eps{cfg.epsilon:g}"
    writer = RecordWriter(out, "jsonl")
    if args.experiment == "qq":
        checkpoints = args.checkpoints or [max(1, round(cfg.K * q / 4)) for q in (1, 2, 3, 4)]
        qq = qq_experiment(cfg, checkpoints)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / f"{stem}_{cfg.transform.value}_qq.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "k", "T_online", "T_pooled"])
            for r in range(qq.online.shape[0]):
                for j, k in enumerate(qq.checkpoints):
                    w.writerow([r, k, repr(float(qq.online[r, j])), repr(float(qq.pooled[r, j]))])
        writer.write({"experiment": "qq", "file": str(path), "checkpoints": list(qq.checkpoints),
                      "ks_online_vs_pooled": qq.ks_online_vs_pooled(),
                      "ks_online_vs_chisq": qq.ks_vs_chisq("online"),
                      "ks_pooled_vs_chisq": qq.ks_vs_chisq("pooled")})
        return EXIT_OK
    runner = size_experiment if args.experiment == "size" else power_experiment
    curves = runner(cfg, transforms)
    status = EXIT_OK
    for kind, curve in curves.items():
        tidy, summary = curve.write_csv(outdir, stem)
        if curve.failures:
            status = EXIT_BLOCK_ERRORS
        writer.write({
            "experiment": args.experiment, "transform": kind.value, "tidy": str(tidy),
            "summary": str(summary), "failed_blocks": curve.failures,
            "rate_cum_final": float(curve.rate_cum[-1]), "rate_win_final": float(curve.rate_win[-1]),
            "first_k_cum_above_half": curve.first_k_above("cumulative"),
            "first_k_win_above_half": curve.first_k_above("window"),
        })
    return status


# argument parsing -------------------------------------------------------------------

def _beta_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_common(p: argparse.ArgumentParser, engine: bool = True) -> None:
    p.add_argument("input", nargs="?", default="-",
                   help="CSV file, directory of CSV files, or - for stdin (default)")
    p.add_argument("--block-size", type=_positive_int, default=None,
                   help="cut input into blocks of this many rows")
    p.add_argument("--ties", choices=("efron", "breslow"), default="efron")
    p.add_argument("--out", dest="output", choices=("jsonl", "csv"), default="jsonl")
    if engine:
        p.add_argument("--transform", choices=("identity", "log", "km"), default="km")
        p.add_argument("--window", dest="w", type=_positive_int, default=5)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--eval-policy", choices=tuple(EVAL_POLICIES), default="paper-default")
        p.add_argument("--cumulative-eval", choices=("cuee", "cee", "window-cee", "block-mle", "fixed"))
        p.add_argument("--window-eval", choices=("cuee", "cee", "window-cee", "block-mle", "fixed"))
        p.add_argument("--fixed-beta", type=_beta_list, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onlineph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stream", help="online cumulative and window tests, one record per block")
    _add_common(p)
    p.add_argument("--checkpoint", default=None, help="state file written after every block")
    p.add_argument("--resume", action="store_true", help="continue from --checkpoint")

    p = sub.add_parser("fit", help="Cox fit of every block")
    _add_common(p, engine=False)

    p = sub.add_parser("test-full", help="global test on all blocks pooled")
    _add_common(p)
    p.add_argument("--h-mode", choices=("simplified", "exact"), default="simplified")

    p = sub.add_parser("permute", help="block-order permutation test of the terminal statistic")
    _add_common(p)
    p.add_argument("--n-perm", type=_positive_int, default=199)
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("simulate", help="simulation experiments")
    p.add_argument("experiment", choices=("size", "power", "qq", "stream"))
    p.add_argument("--scenario", choices=("null", "frailty", "beta_shift"), default="null")
    p.add_argument("--K", type=_positive_int, default=50)
    p.add_argument("--n-k", type=_positive_int, default=1000)
    p.add_argument("--lambda0", type=float, default=0.018)
    p.add_argument("--epsilon", type=float, default=0.9)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--change-block", type=_positive_int, default=None)
    p.add_argument("--transform", nargs="+", choices=("identity", "log", "km"), default=["km"])
    p.add_argument("--ties", choices=("efron", "breslow"), default="efron")
    p.add_argument("--window", type=_positive_int, default=5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--replicates", type=_positive_int, default=500)
    p.add_argument("--replicate", type=int, default=0, help="replicate index for 'stream'")
    p.add_argument("--seed", type=int, default=20190521)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--checkpoints", type=int, nargs="+", default=None)
    p.add_argument("--output-dir", default=None,
                   help="defaults to $ONLINEPH_OUTPUT_DIR or ./results")
    p.add_argument("--name", default=None, help="file name stem for the CSV outputs")
    return parser


def _run_config(args) -> RunConfig:
    fields = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__}
    if "transform" in fields:
        fields["transform"] = TransformKind.parse(fields["transform"])
    cfg = RunConfig(**fields)
    if cfg.eval_policy == "fixed" and cfg.fixed_beta is None:
        raise OnlinePHError("--eval-policy fixed needs --fixed-beta")
    return cfg


def main(argv=None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return run_simulate(args, out, err)
        cfg = _run_config(args)
        if cfg.input != "-" and not os.path.exists(cfg.input):
            err.write(f"input {cfg.input} does not exist\n")
            return EXIT_FATAL
        if args.command == "stream":
            return run_stream(cfg, out, err)
        if args.command == "fit":
            return run_fit(cfg, out, err)
        if args.command == "test-full":
            return run_test_full(cfg, out, err)
        return run_permute(cfg, args.n_perm, args.seed, out, err)
    except BrokenPipeError:
        # downstream reader closed early, e.g. `| head`
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (OnlinePHError, OSError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
