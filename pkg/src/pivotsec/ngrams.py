"""Byte n-gram histograms and lower-order derivation."""
from __future__ import annotations

from collections import Counter
from typing import Iterable

from sklearn.base import BaseEstimator, TransformerMixin

from .datamodel import NgramHistogram

__all__ = [
    "NgramHistogram",
    "extract_ngrams",
    "marginalize_prefix",
    "merge_histograms",
    "NgramExtractor",
]


def extract_ngrams(content: bytes, n: int = 4) -> NgramHistogram:
    """Count every contiguous ``n``-byte window of ``content``.

    >>> extract_ngrams(b"01234", 4).sorted_items()
    [(b'0123', 1), (b'1234', 1)]
    """
    if not 1 <= n <= 4:
        raise ValueError(f"n must be in 1..4, got {n}")
    content = bytes(content)
    if len(content) < n:
        raise ValueError(f"content of {len(content)} bytes is shorter than n={n}")
    counts = Counter(content[i:i + n] for i in range(len(content) - n + 1))
    return NgramHistogram(n, dict(counts))


def marginalize_prefix(hist: NgramHistogram, k: int) -> NgramHistogram:
    """Derive a k-gram histogram by summing n-grams over their first k bytes.

    The result matches direct extraction except for the last ``n - k`` windows
    of the file, which have no n-gram starting at them.
    """
    if not 1 <= k < hist.n:
        raise ValueError(f"k must satisfy 1 <= k < {hist.n}, got {k}")
    counts: Counter[bytes] = Counter()
    for gram, count in hist.counts.items():
        counts[gram[:k]] += count
    return NgramHistogram(k, dict(counts))


def merge_histograms(hists: Iterable[NgramHistogram]) -> NgramHistogram:
    """Sum histograms of equal gram length (order does not matter)."""
    total: Counter[bytes] = Counter()
    n = None
    for hist in hists:
        if n is None:
            n = hist.n
        elif hist.n != n:
            raise ValueError(f"cannot merge {hist.n}-grams into {n}-grams")
        total.update(hist.counts)
    return NgramHistogram(n or 4, dict(total))


class NgramExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping byte strings to n-gram histograms.

    Parameters
    ----------
    n : int, default=4
        Gram length.
    derive : int or None
        When set, the extracted histograms are marginalized to this length.
    """

    def __init__(self, n: int = 4, derive: int | None = None):
        self.n = n
        self.derive = derive

    def fit(self, X=None, y=None):
        if not 1 <= self.n <= 4:
            raise ValueError(f"n must be in 1..4, got {self.n}")
        if self.derive is not None and not 1 <= self.derive < self.n:
            raise ValueError(f"derive must satisfy 1 <= derive < n, got {self.derive}")
        return self

    def transform(self, X) -> list[NgramHistogram]:
        self.fit()
        out = []
        for content in X:
            hist = extract_ngrams(content, self.n)
            if self.derive is not None:
                hist = marginalize_prefix(hist, self.derive)
            out.append(hist)
        return out
