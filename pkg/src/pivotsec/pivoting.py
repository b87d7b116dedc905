"""Operator-domain pivoting: pair labels for malware and for hosts.

Two files are attributed to the same operator when their operator domains
intersect. A file's operator domains are the domains it contacted, minus
allowlisted (known benign) domains and domains contacted by too many distinct
files. Host pairs are labeled by pivoting further, from domains to the IPs
they resolve to.
"""
from __future__ import annotations

import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator

from .datamodel import CommunicationRecord, FormatError, HostSignature, PairLabel, _check_ipv4

__all__ = [
    "PivotConfig",
    "PivotResult",
    "HOST_PAIR_MODES",
    "build_popularity_index",
    "index_communications",
    "operator_domains",
    "operator_domain_map",
    "resolve_from_communications",
    "label_malware_pairs",
    "label_host_pairs",
    "OperatorPairLabeler",
    "read_resolve_map",
    "write_resolve_map",
]

logger = logging.getLogger(__name__)

HOST_PAIR_MODES = ("shared_domain_formula", "shared_malware_domains")

DEFAULT_SEED = 20180623


@dataclass(frozen=True)
class PivotConfig:
    benign_allowlist: frozenset[str] = frozenset()
    max_files_per_domain: int = 100
    negative_ratio: float | Fraction = 1.0
    rng_seed: int = DEFAULT_SEED
    multiclass: bool = False

    def __post_init__(self):
        object.__setattr__(self, "benign_allowlist",
                           frozenset(d.lower() for d in self.benign_allowlist))
        if self.max_files_per_domain < 1:
            raise ValueError("max_files_per_domain must be >= 1")
        if not self.negative_ratio > 0:
            raise ValueError("negative_ratio must be > 0")


@dataclass
class PivotResult:
    """Sorted pair labels plus the counts written to the sidecar report."""

    labels: list[PairLabel]
    positives: int
    negatives: int
    requested_negatives: int
    skipped_missing_signature: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def negative_shortfall(self) -> int:
        return self.requested_negatives - self.negatives

    def summary(self) -> dict:
        out = {
            "positives": self.positives,
            "negatives": self.negatives,
            "requested_negatives": self.requested_negatives,
            "negative_shortfall": self.negative_shortfall,
            "skipped_missing_signature": self.skipped_missing_signature,
        }
        out.update(self.extra)
        return out


def build_popularity_index(comms: Iterable[CommunicationRecord]) -> dict[str, int]:
    """Number of distinct files that contacted each domain."""
    files: dict[str, set[str]] = defaultdict(set)
    for rec in comms:
        files[rec.domain].add(rec.sha256)
    return {domain: len(shas) for domain, shas in files.items()}


def index_communications(comms: Iterable[CommunicationRecord]) -> dict[str, set[str]]:
    """Map each file hash to the set of domains it contacted."""
    by_file: dict[str, set[str]] = defaultdict(set)
    for rec in comms:
        by_file[rec.sha256].add(rec.domain)
    return dict(by_file)


def operator_domains(sha256: str, comms: Mapping[str, set[str]], cfg: PivotConfig,
                     idx: Mapping[str, int]) -> set[str]:
    """Domains of ``sha256`` that are neither allowlisted nor too popular.

    ``comms`` is the output of :func:`index_communications`.
    """
    return {
        d for d in comms.get(sha256, ())
        if d not in cfg.benign_allowlist and idx.get(d, 0) <= cfg.max_files_per_domain
    }


def operator_domain_map(comms: Sequence[CommunicationRecord], cfg: PivotConfig) -> dict[str, set[str]]:
    """Operator domains for every file in ``comms`` (possibly empty sets)."""
    by_file = index_communications(comms)
    idx = build_popularity_index(comms)
    return {sha: operator_domains(sha, by_file, cfg, idx) for sha in by_file}


def resolve_from_communications(comms: Iterable[CommunicationRecord]) -> dict[str, set[str]]:
    """Collect every IP each domain was seen resolving to."""
    resolve: dict[str, set[str]] = defaultdict(set)
    for rec in comms:
        resolve[rec.domain].add(rec.ip)
    return dict(resolve)


def _negative_count(ratio, positives: int) -> int:
    return math.ceil(Fraction(str(ratio)) * positives)


def _sample_negatives(entities: Sequence[str], positives: set[tuple[str, str]], wanted: int,
                      rng: random.Random) -> list[tuple[str, str]]:
    """Draw ``wanted`` canonical pairs uniformly, without replacement, from the
    pairs of ``entities`` that are not in ``positives``.

    ``entities`` must be sorted. Returns every available negative when fewer
    than ``wanted`` exist.
    """
    n = len(entities)
    available = n * (n - 1) // 2 - len(positives)
    if wanted <= 0 or available <= 0:
        return []
    if 2 * wanted >= available:
        pool = [p for p in combinations(entities, 2) if p not in positives]
        if wanted >= len(pool):
            return pool
        return rng.sample(pool, wanted)
    chosen: set[tuple[str, str]] = set()
    out = []
    while len(out) < wanted:
        i = rng.randrange(n)
        j = rng.randrange(n)
        if i == j:
            continue
        pair = (entities[i], entities[j]) if i < j else (entities[j], entities[i])
        if pair in positives or pair in chosen:
            continue
        chosen.add(pair)
        out.append(pair)
    return out


def _assemble(positive: Mapping[tuple[str, str], str | None], negative: Iterable[tuple[str, str]],
              multiclass: bool) -> list[PairLabel]:
    labels = [PairLabel(a, b, True, key if multiclass else None) for (a, b), key in positive.items()]
    labels.extend(PairLabel(a, b, False) for a, b in negative)
    labels.sort(key=lambda p: (p.entity_a, p.entity_b))
    return labels


def label_malware_pairs(comms: Sequence[CommunicationRecord], cfg: PivotConfig = PivotConfig()) -> PivotResult:
    """Label file pairs by operator-domain intersection.

    Every intersecting pair is emitted as positive. Negatives are sampled from
    the non-intersecting pairs, ``ceil(negative_ratio * positives)`` of them.
    In multiclass mode a positive carries the smallest shared domain as class.
    """
    domains = operator_domain_map(comms, cfg)
    files_by_domain: dict[str, list[str]] = defaultdict(list)
    for sha, ds in domains.items():
        for d in ds:
            files_by_domain[d].append(sha)

    positive: dict[tuple[str, str], str] = {}
    for d, shas in files_by_domain.items():
        for a, b in combinations(sorted(shas), 2):
            prev = positive.get((a, b))
            if prev is None or d < prev:
                positive[(a, b)] = d

    wanted = _negative_count(cfg.negative_ratio, len(positive))
    rng = random.Random(cfg.rng_seed)
    negative = _sample_negatives(sorted(domains), set(positive), wanted, rng)
    if len(negative) < wanted:
        logger.warning("only %d of %d requested negative pairs exist", len(negative), wanted)
    return PivotResult(
        labels=_assemble(positive, negative, cfg.multiclass),
        positives=len(positive),
        negatives=len(negative),
        requested_negatives=wanted,
    )


def label_host_pairs(
    comms: Sequence[CommunicationRecord],
    cfg: PivotConfig = PivotConfig(),
    resolve: Mapping[str, Iterable[str]] | None = None,
    signatures: Mapping[str, HostSignature] | None = None,
    mode: str = "shared_domain_formula",
) -> PivotResult:
    """Label IP pairs by pivoting through operator domains.

    ``shared_domain_formula``: whenever two files share an operator domain d,
    every pair of IPs d resolves to is positive.

    ``shared_malware_domains``: whenever one file has two distinct operator
    domains d1 and d2, every pair (ip1 in resolve(d1), ip2 in resolve(d2)) is
    positive.

    Negatives are sampled from the remaining pairs of known IPs. When
    ``signatures`` is given, only IPs with a signature are known, and
    positives touching an IP without one are skipped and counted.
    ``resolve`` defaults to the IPs recorded in ``comms``.
    """
    if mode not in HOST_PAIR_MODES:
        raise ValueError(f"unknown host-pair mode {mode!r}; expected one of {HOST_PAIR_MODES}")
    if resolve is None:
        resolve = resolve_from_communications(comms)
    resolve = {d.lower(): set(ips) for d, ips in resolve.items()}
    if not resolve:
        raise ValueError("resolve map is empty; host pairs cannot be labeled")

    domains = operator_domain_map(comms, cfg)
    for sha in sorted(domains):
        missing = sorted(d for d in domains[sha] if not resolve.get(d))
        if missing:
            raise KeyError(f"resolve map has no IPs for operator domain {missing[0]!r}")

    raw_positive: dict[tuple[str, str], str] = {}

    def add(ip1: str, ip2: str, key: str) -> None:
        if ip1 == ip2:
            return
        pair = (ip1, ip2) if ip1 < ip2 else (ip2, ip1)
        prev = raw_positive.get(pair)
        if prev is None or key < prev:
            raw_positive[pair] = key

    if mode == "shared_domain_formula":
        file_count: dict[str, int] = defaultdict(int)
        for ds in domains.values():
            for d in ds:
                file_count[d] += 1
        for d, count in file_count.items():
            if count >= 2:
                for ip1, ip2 in combinations(sorted(resolve[d]), 2):
                    add(ip1, ip2, d)
    else:
        linked: set[tuple[str, str]] = set()
        for ds in domains.values():
            linked.update(combinations(sorted(ds), 2))
        for d1, d2 in linked:
            for ip1 in resolve[d1]:
                for ip2 in resolve[d2]:
                    add(ip1, ip2, d1)

    if signatures is None:
        known = set().union(*resolve.values())
        positive = raw_positive
        skipped = 0
    else:
        all_ips = set().union(*resolve.values())
        known = {ip for ip in all_ips if ip in signatures}
        positive = {p: k for p, k in raw_positive.items() if p[0] in known and p[1] in known}
        skipped = len(raw_positive) - len(positive)

    wanted = _negative_count(cfg.negative_ratio, len(positive))
    rng = random.Random(cfg.rng_seed)
    negative = _sample_negatives(sorted(known), set(positive), wanted, rng)
    if len(negative) < wanted:
        logger.warning("only %d of %d requested negative host pairs exist", len(negative), wanted)
    return PivotResult(
        labels=_assemble(positive, negative, cfg.multiclass),
        positives=len(positive),
        negatives=len(negative),
        requested_negatives=wanted,
        skipped_missing_signature=skipped,
        extra={"mode": mode, "known_ips": len(known)},
    )


class OperatorPairLabeler(BaseEstimator):
    """Estimator wrapper around :func:`label_malware_pairs`.

    ``fit`` learns the domain popularity index and per-file operator domains;
    ``transform`` returns the sorted pair labels for the fitted corpus.
    """

    def __init__(self, benign_allowlist=frozenset(), max_files_per_domain=100,
                 negative_ratio=1.0, rng_seed=DEFAULT_SEED, multiclass=False):
        self.benign_allowlist = benign_allowlist
        self.max_files_per_domain = max_files_per_domain
        self.negative_ratio = negative_ratio
        self.rng_seed = rng_seed
        self.multiclass = multiclass

    def _config(self) -> PivotConfig:
        return PivotConfig(frozenset(self.benign_allowlist), self.max_files_per_domain,
                           self.negative_ratio, self.rng_seed, self.multiclass)

    def fit(self, X: Sequence[CommunicationRecord], y=None):
        cfg = self._config()
        self.comms_ = list(X)
        self.popularity_ = build_popularity_index(self.comms_)
        self.operator_domains_ = operator_domain_map(self.comms_, cfg)
        self.result_ = label_malware_pairs(self.comms_, cfg)
        return self

    def transform(self, X=None) -> list[PairLabel]:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "result_")
        return list(self.result_.labels)

    def fit_transform(self, X, y=None) -> list[PairLabel]:
        return self.fit(X).transform()


def read_resolve_map(source: Iterable[str]) -> dict[str, set[str]]:
    """Parse ``domain TAB ip`` lines into a resolve map."""
    resolve: dict[str, set[str]] = defaultdict(set)
    for lineno, line in enumerate(source, start=1):
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2 or not parts[0]:
            raise FormatError("expected 'domain<TAB>ip'", lineno)
        try:
            resolve[parts[0].lower()].add(_check_ipv4(parts[1]))
        except ValueError as exc:
            raise FormatError(str(exc), lineno, "ip") from None
    return dict(resolve)


def write_resolve_map(resolve: Mapping[str, Iterable[str]], stream) -> None:
    for domain in sorted(resolve):
        for ip in sorted(resolve[domain]):
            stream.write(f"{domain}\t{ip}\n")
