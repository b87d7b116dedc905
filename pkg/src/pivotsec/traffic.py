"""Session bucketing, lateral-movement path scoring and port-scan scoring."""
from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .datamodel import TrafficSession

__all__ = [
    "BUCKET_SECONDS",
    "BucketKey",
    "bucket_key",
    "bucketize",
    "AccessGraph",
    "build_access_graph",
    "build_access_graphs_by_protocol",
    "path_log_probability",
    "random_walk_paths",
    "PortModel",
    "fit_port_model",
    "scan_score",
    "SourceScore",
    "rank_sources",
    "SessionBucketizer",
    "AccessPathScorer",
    "PortScanScorer",
]

BUCKET_SECONDS = 600


class BucketKey(NamedTuple):
    bucket_index: int
    src_index: int
    dst_index: int
    src_port: int
    dst_port: int
    path: str


def bucket_key(s: TrafficSession) -> BucketKey:
    return BucketKey(s.min_start_time // BUCKET_SECONDS, s.src_index, s.dst_index,
                     s.src_port, s.dst_port, s.path)


def _merge_duration(group: Sequence[TrafficSession], start: int) -> int | None:
    if any(s.duration is None for s in group):
        return None
    return max(s.min_start_time + s.duration for s in group) - start


def bucketize(sessions: Iterable[TrafficSession]) -> list[TrafficSession]:
    """Aggregate sessions into one row per 10-minute bucket key.

    Counters and volumes are summed and the row keeps the earliest start time.
    Output is sorted by bucket key, and ``bucketize(bucketize(x)) == bucketize(x)``.
    """
    groups: dict[BucketKey, list[TrafficSession]] = defaultdict(list)
    for s in sessions:
        groups[bucket_key(s)].append(s)
    out = []
    for key in sorted(groups):
        group = groups[key]
        start = min(s.min_start_time for s in group)
        out.append(TrafficSession(
            min_start_time=start,
            src_index=key.src_index,
            dst_index=key.dst_index,
            src_port=key.src_port,
            dst_port=key.dst_port,
            tvolume=sum(s.tvolume for s in group),
            rtvolume=sum(s.rtvolume for s in group),
            pkt=sum(s.pkt for s in group),
            rpkt=sum(s.rpkt for s in group),
            cnt=sum(s.cnt for s in group),
            failed_num=sum(s.failed_num for s in group),
            path=key.path,
            duration=_merge_duration(group, start),
        ))
    return out


# --------------------------------------------------------------------------
# lateral movement


@dataclass
class AccessGraph:
    """Directed host graph weighted by session counts.

    Transitions use additive smoothing over every node:
    ``P(v|u) = (w(u,v) + alpha) / (W(u) + alpha * |V|)``.
    """

    weights: dict[tuple[int, int], int] = field(default_factory=dict)
    out_weight: dict[int, int] = field(default_factory=dict)
    nodes: frozenset[int] = frozenset()
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def successors(self, u: int) -> dict[int, int]:
        return {v: w for (a, v), w in self.weights.items() if a == u}

    def transition_probability(self, u: int, v: int) -> float:
        for host in (u, v):
            if host not in self.nodes:
                raise KeyError(f"host {host} is not in the access graph")
        return ((self.weights.get((u, v), 0) + self.alpha)
                / (self.out_weight.get(u, 0) + self.alpha * len(self.nodes)))


def build_access_graph(sessions: Iterable[TrafficSession], alpha: float = 1.0,
                       protocol: str | None = None) -> AccessGraph:
    """Sum ``cnt`` per directed host pair; ``protocol`` restricts to one path value."""
    weights: dict[tuple[int, int], int] = defaultdict(int)
    out_weight: dict[int, int] = defaultdict(int)
    nodes: set[int] = set()
    for s in sessions:
        if protocol is not None and s.path != protocol:
            continue
        weights[(s.src_index, s.dst_index)] += s.cnt
        out_weight[s.src_index] += s.cnt
        nodes.add(s.src_index)
        nodes.add(s.dst_index)
    return AccessGraph(dict(weights), dict(out_weight), frozenset(nodes), alpha)


def build_access_graphs_by_protocol(sessions: Sequence[TrafficSession],
                                    alpha: float = 1.0) -> dict[str, AccessGraph]:
    return {p: build_access_graph(sessions, alpha, p) for p in sorted({s.path for s in sessions})}


def path_log_probability(graph: AccessGraph, path: Sequence[int]) -> float:
    """Natural-log probability of walking ``path`` under the first-order chain.

    A single host has probability one.
    """
    if len(path) == 0:
        raise ValueError("path must contain at least one host")
    for host in path:
        if host not in graph.nodes:
            raise KeyError(f"host {host} is not in the access graph")
    denom_extra = graph.alpha * len(graph.nodes)
    total = 0.0
    for u, v in zip(path, path[1:]):
        num = graph.weights.get((u, v), 0) + graph.alpha
        total += math.log(num / (graph.out_weight.get(u, 0) + denom_extra))
    return total


def random_walk_paths(graph: AccessGraph, length: int, n_paths: int, seed: int = 0,
                      max_tries: int = 100_000) -> list[list[int]]:
    """Sample paths of ``length`` hosts by following observed edges
    proportionally to their weights (no smoothing, no teleport)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = random.Random(seed)
    succ: dict[int, tuple[list[int], list[int]]] = {}
    for (u, v), w in sorted(graph.weights.items()):
        succ.setdefault(u, ([], []))
        succ[u][0].append(v)
        succ[u][1].append(w)
    starts = sorted(succ) if length > 1 else sorted(graph.nodes)
    if not starts:
        raise ValueError("graph has no edges to walk")
    paths: list[list[int]] = []
    tries = 0
    while len(paths) < n_paths:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could not sample {n_paths} walks of length {length}")
        walk = [rng.choice(starts)]
        while len(walk) < length and walk[-1] in succ:
            hosts, weights = succ[walk[-1]]
            walk.append(rng.choices(hosts, weights)[0])
        if len(walk) == length:
            paths.append(walk)
    return paths


# --------------------------------------------------------------------------
# stealth port scans


@dataclass
class PortModel:
    """Per-port access counts with one reserved cell for unseen ports.

    ``p(port) = (count(port) + alpha) / (N + alpha * (U + 1))``
    """

    counts: dict[int, int] = field(default_factory=dict)
    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def universe(self) -> int:
        return len(self.counts)

    def probability(self, port: int) -> float:
        return ((self.counts.get(port, 0) + self.alpha)
                / (self.total + self.alpha * (self.universe + 1)))


def fit_port_model(sessions: Iterable[TrafficSession], alpha: float = 1.0) -> PortModel:
    """One observation per distinct (src, dst, dst_port, bucket)."""
    seen = {(s.src_index, s.dst_index, s.dst_port, s.min_start_time // BUCKET_SECONDS)
            for s in sessions}
    counts: dict[int, int] = defaultdict(int)
    for _, _, port, _ in seen:
        counts[port] += 1
    return PortModel(dict(counts), alpha)


def scan_score(model: PortModel, accessed_ports: Iterable[int]) -> float:
    """Surprise of a port combination, ``-sum(log p(port))``, assuming
    independent ports. Larger means more suspicious."""
    ports = set(accessed_ports)
    if model.total == 0:
        raise ValueError("port model has no observations")
    if not ports:
        raise ValueError("accessed_ports is empty")
    total = model.total
    denom = total + model.alpha * (model.universe + 1)
    return -sum(math.log((model.counts.get(p, 0) + model.alpha) / denom) for p in sorted(ports))


class SourceScore(NamedTuple):
    src_index: int
    window_start: int
    score: float


def rank_sources(model: PortModel, sessions: Iterable[TrafficSession],
                 window: int = BUCKET_SECONDS) -> list[SourceScore]:
    """Score the set of destination ports each source touched per time window.

    Sorted by descending score, then ascending source and window start.
    """
    if window <= 0 or window % BUCKET_SECONDS:
        raise ValueError(f"window must be a positive multiple of {BUCKET_SECONDS}, got {window}")
    ports: dict[tuple[int, int], set[int]] = defaultdict(set)
    for s in sessions:
        ports[(s.src_index, s.min_start_time // window * window)].add(s.dst_port)
    scored = [SourceScore(src, start, scan_score(model, ps)) for (src, start), ps in ports.items()]
    scored.sort(key=lambda r: (-r.score, r.src_index, r.window_start))
    return scored


# --------------------------------------------------------------------------
# estimator interfaces


def _check_sessions(X) -> list[TrafficSession]:
    X = list(X)
    for i, s in enumerate(X):
        if not isinstance(s, TrafficSession):
            raise TypeError(f"element {i} is {type(s).__name__}, expected TrafficSession")
    return X


class SessionBucketizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`bucketize`."""

    def fit(self, X, y=None):
        _check_sessions(X)
        return self

    def transform(self, X) -> list[TrafficSession]:
        return bucketize(_check_sessions(X))


class AccessPathScorer(BaseEstimator):
    """Learns an access graph from sessions and scores host paths.

    ``score_samples`` returns log-probabilities (lower is more unusual).
    """

    def __init__(self, alpha: float = 1.0, protocol: str | None = None):
        self.alpha = alpha
        self.protocol = protocol

    def fit(self, X, y=None):
        self.graph_ = build_access_graph(_check_sessions(X), self.alpha, self.protocol)
        return self

    def score_samples(self, paths: Iterable[Sequence[int]]) -> np.ndarray:
        check_is_fitted(self, "graph_")
        return np.array([path_log_probability(self.graph_, p) for p in paths], dtype=float)


class PortScanScorer(BaseEstimator):
    """Fits a :class:`PortModel` and ranks (source, window) port sets.

    ``score_samples`` takes an iterable of port sets and returns scan scores.
    """

    def __init__(self, alpha: float = 1.0, window: int = BUCKET_SECONDS):
        self.alpha = alpha
        self.window = window

    def fit(self, X, y=None):
        self.model_ = fit_port_model(_check_sessions(X), self.alpha)
        return self

    def score_samples(self, port_sets: Iterable[Iterable[int]]) -> np.ndarray:
        check_is_fitted(self, "model_")
        return np.array([scan_score(self.model_, ps) for ps in port_sets], dtype=float)

    def rank(self, X) -> list[SourceScore]:
        check_is_fitted(self, "model_")
        return rank_sources(self.model_, _check_sessions(X), self.window)
