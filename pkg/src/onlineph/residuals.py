"""Schoenfeld residuals and the time transforms used to weight them."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidTimeError
from .survival import DataBlock, _terms


class TransformKind(str, enum.Enum):
    IDENTITY = "identity"
    LOG = "log"
    KAPLAN_MEIER = "km"

    @classmethod
    def parse(cls, value) -> "TransformKind":
        if isinstance(value, cls):
            return value
        aliases = {"kaplan-meier": "km", "kaplan_meier": "km", "identity": "identity",
                   "log": "log", "km": "km"}
        try:
            return cls(aliases[str(value).lower()])
        except KeyError:
            raise InvalidInputError(f"unknown transform {value!r}") from None


@dataclass(frozen=True)
class ResidualSet:
    event_times: np.ndarray
    residuals: np.ndarray  # (d, p), one row per event in ascending time
    beta_eval: np.ndarray
    g_centered: np.ndarray | None = None


def schoenfeld_residuals(block: DataBlock, beta, ties: str = "efron") -> ResidualSet:
    """Covariate of the failing subject minus the risk-weighted mean, per event.

    With Efron ties every event in a tied group is compared against the
    average of the group's Efron-adjusted means, so the rows still sum to
    the score.
    """
    t = _terms(block, beta, ties, order=1)
    ev = block._layout.event_pos
    res = block.covariates[ev] - t.event_means
    return ResidualSet(block.event_times, res, np.asarray(beta, dtype=float).ravel())


def km_left_continuous(block: DataBlock) -> np.ndarray:
    """Left-continuous product-limit estimate S(t-) at each event time.

    Events sharing a time share one value.
    """
    lay = block._layout
    n_at_risk = block.n - lay.group_start  # per distinct event time
    factors = 1.0 - lay.group_size / n_at_risk
    surv_before = np.concatenate(([1.0], np.cumprod(factors)[:-1]))
    return surv_before[lay.group]


def raw_transform(event_times: np.ndarray, kind, block: DataBlock | None = None) -> np.ndarray:
    kind = TransformKind.parse(kind)
    t = np.asarray(event_times, dtype=float)
    if kind is TransformKind.IDENTITY:
        return t.copy()
    if kind is TransformKind.LOG:
        if np.any(t <= 0):
            raise InvalidTimeError("log transform needs positive event times")
        return np.log(t)
    if block is None:
        raise InvalidInputError("Kaplan-Meier transform needs the block")
    if t.shape != block.event_times.shape or np.any(t != block.event_times):
        raise InvalidInputError("Kaplan-Meier transform is only defined at the block's event times")
    return km_left_continuous(block)


def transform_and_center(event_times, kind, block: DataBlock | None = None) -> np.ndarray:
    g = raw_transform(event_times, kind, block)
    if g.size == 0:
        raise InvalidInputError("no event times to transform")
    return g - g.mean()
