"""Reading survival data blocks from CSV files, directories or stdin.

Rows carry ``time,status`` and covariate columns, plus an optional
``block`` column. A block ends at a change in the ``block`` value, at a
blank line, at the end of a file, or after ``block_size`` rows. Blocks
are yielded one at a time; invalid blocks come back as
:class:`IngestError` records so the caller can keep streaming.
"""
from __future__ import annotations

import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

from .errors import OnlinePHError
from .survival import DataBlock

MAX_MESSAGES = 20


@dataclass
class IngestError:
    ordinal: int  # position in the stream, 1-based
    label: str
    source: str
    messages: list[str] = field(default_factory=list)
    n_rows: int = 0

    @property
    def message(self) -> str:
        return "; ".join(self.messages)


@dataclass
class _Header:
    names: list[str]
    time_col: int
    status_col: int
    block_col: int | None
    covariate_cols: list[int]


def _parse_header(row: list[str]) -> _Header:
    names = [c.strip() for c in row]
    lowered = [c.lower() for c in names]
    missing = [c for c in ("time", "status") if c not in lowered]
    if missing:
        raise ValueError(f"header lacks column(s) {', '.join(missing)}")
    time_col = lowered.index("time")
    status_col = lowered.index("status")
    block_col = lowered.index("block") if "block" in lowered else None
    covs = [i for i in range(len(names)) if i not in (time_col, status_col, block_col)]
    if not covs:
        raise ValueError("header has no covariate columns")
    return _Header(names, time_col, status_col, block_col, covs)


class _BlockBuilder:
    def __init__(self, header: _Header, label: str, source: str):
        self.header = header
        self.label = label
        self.source = source
        self.times: list[float] = []
        self.status: list[int] = []
        self.x: list[list[float]] = []
        self.messages: list[str] = []
        self.n_rows = 0

    def add(self, row: list[str], line: int) -> None:
        self.n_rows += 1
        h = self.header
        if len(row) != len(h.names):
            self._error(f"expected {len(h.names)} fields, got {len(row)}, line {line}")
            return
        try:
            t = float(row[h.time_col])
            s = float(row[h.status_col])
            x = [float(row[i]) for i in h.covariate_cols]
        except ValueError:
            self._error(f"non-numeric field, line {line}")
            return
        if not math.isfinite(t) or not all(math.isfinite(v) for v in x):
            self._error(f"non-finite value, line {line}")
            return
        if t <= 0:
            self._error(f"time must be positive, line {line}")
            return
        if s not in (0.0, 1.0):
            self._error(f"status must be 0 or 1, line {line}")
            return
        self.times.append(t)
        self.status.append(int(s))
        self.x.append(x)

    def _error(self, msg: str) -> None:
        if len(self.messages) < MAX_MESSAGES:
            self.messages.append(msg)
        elif len(self.messages) == MAX_MESSAGES:
            self.messages.append("further errors suppressed")

    def finish(self, ordinal: int) -> DataBlock | IngestError:
        if not self.messages and not self.times:
            self.messages.append("empty block")
        if not self.messages:
            try:
                return DataBlock(np.array(self.times), np.array(self.status),
                                 np.array(self.x, dtype=float), index=ordinal)
            except OnlinePHError as exc:
                self.messages.append(str(exc))
        return IngestError(ordinal, self.label, self.source, self.messages, self.n_rows)


def _read_stream(fh: TextIO, source: str, start: int, block_size: int | None,
                 header: _Header | None = None) -> Iterator[DataBlock | IngestError]:
    """Yield blocks from one text stream; ``start`` is the ordinal of the
    first block produced."""
    ordinal = start
    builder: _BlockBuilder | None = None
    current_label = None
    header_row = None
    for line_no, raw in enumerate(fh, start=1):
        text = raw.strip()
        if not text:
            if builder is not None and builder.n_rows:
                yield builder.finish(ordinal)
                ordinal += 1
            builder = None
            continue
        row = next(csv.reader([text]))
        if header is None:
            try:
                header = _parse_header(row)
            except ValueError as exc:
                yield IngestError(ordinal, "?", source, [f"malformed header: {exc}, line {line_no}"])
                return
            header_row = [c.strip() for c in row]
            continue
        if header_row is not None and [c.strip() for c in row] == header_row:
            continue  # repeated header at the top of a chunk
        label = row[header.block_col].strip() if header.block_col is not None and \
            header.block_col < len(row) else None
        boundary = builder is not None and (
            (header.block_col is not None and label != current_label)
            or (block_size is not None and builder.n_rows >= block_size)
        )
        if boundary:
            yield builder.finish(ordinal)
            ordinal += 1
            builder = None
        if builder is None:
            current_label = label
            builder = _BlockBuilder(header, label if label is not None else str(ordinal), source)
        builder.add(row, line_no)
    if builder is not None and builder.n_rows:
        yield builder.finish(ordinal)


def _count(it, counter):
    for item in it:
        counter[0] = item.ordinal if isinstance(item, IngestError) else item.index
        yield item


def ingest_blocks(source, block_size: int | None = None) -> Iterator[DataBlock | IngestError]:
    """Yield blocks in arrival order from a CSV path, a directory of CSV
    files (lexicographic order), ``"-"`` for stdin, or an open text stream."""
    if block_size is not None and block_size < 1:
        raise ValueError("block_size must be >= 1")
    last = [0]
    if isinstance(source, (io.TextIOBase,)) or hasattr(source, "read"):
        yield from _read_stream(source, "<stream>", 1, block_size)
        return
    if str(source) == "-":
        yield from _read_stream(sys.stdin, "<stdin>", 1, block_size)
        return
    path = Path(source)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".csv" and p.is_file())
        for f in files:
            with open(f, newline="") as fh:
                yield from _count(_read_stream(fh, str(f), last[0] + 1, block_size), last)
        return
    with open(path, newline="") as fh:
        yield from _read_stream(fh, str(path), 1, block_size)


def blocks_to_csv(blocks: Iterable[DataBlock], fh: TextIO, names: list[str] | None = None) -> None:
    """Write blocks as one CSV with a ``block`` column."""
    writer = None
    for block in blocks:
        if writer is None:
            cov_names = names or [f"x{j + 1}" for j in range(block.p)]
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["block", "time", "status", *cov_names])
        for t, s, row in zip(block.time, block.status, block.covariates):
            writer.writerow([block.index, repr(float(t)), int(s), *(repr(float(v)) for v in row)])
