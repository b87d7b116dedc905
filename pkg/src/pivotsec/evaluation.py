"""Evaluation of alerts against sparse, partially known labels.

Positive base rates in this domain are often around 1 in 10,000, so raw
accuracy is meaningless and raw precision looks poor. These helpers report
precision lift and precision at an alert budget, and they keep examples with
unknown labels out of the positive counts.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import IntEnum
from fractions import Fraction
from numbers import Rational
from typing import Hashable, Mapping, Sequence

__all__ = [
    "Label",
    "ConfusionCounts",
    "as_label",
    "confusion",
    "precision_lift",
    "precision_at_k",
    "unknown_at_k",
    "evaluation_report",
]


class Label(IntEnum):
    neg = 0
    pos = 1
    unknown = -1


_LABEL_ALIASES = {
    "pos": Label.pos, "positive": Label.pos, "1": Label.pos, "true": Label.pos,
    "neg": Label.neg, "negative": Label.neg, "0": Label.neg, "false": Label.neg,
    "unknown": Label.unknown, "-1": Label.unknown, "missing": Label.unknown, "": Label.unknown,
}


def as_label(value) -> Label:
    """Coerce booleans, ``1/0/-1`` and common strings to :class:`Label`."""
    if isinstance(value, Label):
        return value
    if value is None:
        return Label.unknown
    if isinstance(value, bool):
        return Label.pos if value else Label.neg
    if isinstance(value, int):
        return Label(value)
    try:
        return _LABEL_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise ValueError(f"unrecognised label {value!r}") from None


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    unknown: int = 0

    @property
    def known(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float | None:
        alerts = self.tp + self.fp
        return self.tp / alerts if alerts else None

    @property
    def recall(self) -> float | None:
        actual = self.tp + self.fn
        return self.tp / actual if actual else None

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.known if self.known else None

    @property
    def base_rate(self) -> float | None:
        return (self.tp + self.fn) / self.known if self.known else None


def confusion(predictions: Mapping[Hashable, bool], labels: Mapping[Hashable, object]) -> ConfusionCounts:
    """Tally predictions against labels; unknown labels are counted apart."""
    tp = fp = tn = fn = unknown = 0
    for key, predicted in predictions.items():
        if key not in labels:
            raise KeyError(f"no label for predicted key {key!r}")
        label = as_label(labels[key])
        if label is Label.unknown:
            unknown += 1
        elif predicted:
            if label is Label.pos:
                tp += 1
            else:
                fp += 1
        elif label is Label.pos:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn, unknown)


def _exact(x) -> Fraction:
    # floats go through repr so that 0.1 means one tenth, not its binary neighbour
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    return Fraction(repr(float(x)))


def precision_lift(precision: float, base_rate: float) -> float:
    """Precision divided by the positive base rate.

    >>> precision_lift(0.10, 1 / 10_000)
    1000.0
    """
    if not base_rate > 0:
        raise ValueError(f"base_rate must be positive, got {base_rate}")
    if not 0 <= precision <= 1:
        raise ValueError(f"precision must be in [0, 1], got {precision}")
    return float(_exact(precision) / _exact(base_rate))


def _check_k(ranked: Sequence, k: int) -> None:
    if k < 1 or k > len(ranked):
        raise ValueError(f"k must be in 1..{len(ranked)}, got {k}")


def precision_at_k(ranked: Sequence[Hashable], labels: Mapping[Hashable, object], k: int) -> float:
    """Fraction of the top ``k`` keys labeled positive.

    Keys with unknown (or no) label count as non-positive; see
    :func:`unknown_at_k` for how many of those were in the window.
    """
    _check_k(ranked, k)
    hits = sum(1 for key in ranked[:k] if as_label(labels.get(key)) is Label.pos)
    return hits / k


def unknown_at_k(ranked: Sequence[Hashable], labels: Mapping[Hashable, object], k: int) -> int:
    _check_k(ranked, k)
    return sum(1 for key in ranked[:k] if as_label(labels.get(key)) is Label.unknown)


def evaluation_report(
    predictions: Mapping[Hashable, bool],
    labels: Mapping[Hashable, object],
    ranked: Sequence[Hashable] | None = None,
    base_rate: float | None = None,
    complete: bool = False,
) -> dict:
    """Build the JSON-serialisable evaluation report.

    ``base_rate`` defaults to the positive fraction among known labels.
    Recall is only filled in when the caller declares the label set
    ``complete``; otherwise it is ``None`` because it cannot be estimated.
    """
    cells = confusion(predictions, labels)
    label_values = [as_label(v) for v in labels.values()]
    n_pos = sum(1 for v in label_values if v is Label.pos)
    n_known = sum(1 for v in label_values if v is not Label.unknown)
    if base_rate is None and n_known:
        base_rate = n_pos / n_known if n_pos else None
    precision = cells.precision
    report = {
        "cells": asdict(cells),
        "precision": precision,
        "recall": cells.recall if complete else None,
        "accuracy": cells.accuracy,
        "base_rate": base_rate,
        "lift": precision_lift(precision, base_rate) if precision is not None and base_rate else None,
        "label_unknown": sum(1 for v in label_values if v is Label.unknown),
        "complete": complete,
        "precision_at": {},
        "unknown_at": {},
    }
    if ranked is not None:
        for k in (1, 10, 100):
            if k <= len(ranked):
                report["precision_at"][str(k)] = precision_at_k(ranked, labels, k)
                report["unknown_at"][str(k)] = unknown_at_k(ranked, labels, k)
    return report
