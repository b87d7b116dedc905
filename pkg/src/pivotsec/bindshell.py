"""Two-phase connection pairing and bind/reverse shell candidate features.

A pair is two sessions between the same hosts that start within a short
window. Bind pairs repeat the direction A->B on a different destination port.
Reverse pairs flip it (B->A). Aggregative features are counted over every pair
in the period, before any noise filter is applied.

"phase-1 port" and "phase-2 port" always mean the destination ports of the
two sessions.
"""
from __future__ import annotations

from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import astuple, dataclass, fields
from typing import Callable, Iterable, Mapping, Sequence, TextIO

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .datamodel import TrafficSession

__all__ = [
    "BIND",
    "REVERSE",
    "DEFAULT_WINDOW_SECONDS",
    "DEFAULT_LOOKBACK_SECONDS",
    "ConnectionPair",
    "BindShellCandidate",
    "FEATURE_NAMES",
    "AGGREGATE_FEATURES",
    "NOISE_FILTERS",
    "pair_connections",
    "compute_candidate_features",
    "write_candidates",
    "read_candidates",
    "BindShellFeaturizer",
]

BIND = "bind"
REVERSE = "reverse"
DEFAULT_WINDOW_SECONDS = 120
DEFAULT_LOOKBACK_SECONDS = 7 * 24 * 3600


@dataclass(frozen=True)
class ConnectionPair:
    phase1: TrafficSession
    phase2: TrafficSession
    direction: str = BIND

    @property
    def source(self) -> int:
        return self.phase1.src_index

    @property
    def destination(self) -> int:
        return self.phase1.dst_index

    @property
    def port1(self) -> int:
        return self.phase1.dst_port

    @property
    def port2(self) -> int:
        return self.phase2.dst_port

    @property
    def key(self) -> tuple[int, int, int, int, int]:
        """(source, destination, phase-1 start, phase-1 port, phase-2 port)"""
        return (self.source, self.destination, self.phase1.min_start_time, self.port1, self.port2)


@dataclass(frozen=True)
class BindShellCandidate:
    index: int
    label: int
    source_host_id: int
    is_new: bool
    s_phase1_initiators_hosts: int
    s_phase2_initiators_hosts: int
    s_phase1_initiators_ports: int
    s_phase2_initiators_ports: int
    s_port_count: int
    s_src_port_phase1: int
    s_src_port_phase2: int
    s_pair_phase1_cnt: int
    s_pair_phase2_cnt: int
    s_start_time_phase1: int
    s_start_time_phase2: int
    s_duration_phase1: int
    s_duration_phase2: int
    s_dst_port_phase1: int
    s_dst_port_phase2: int
    s_volume_phase1: int
    s_volume_phase2: int
    s_rvolume_phase1: int
    s_rvolume_phase2: int
    s_path_phase1: str
    s_path_phase2: str
    s_spfss_unique_srcs: int
    s_arb_host_count: int
    s_arb_port_count: int

    def __post_init__(self):
        if self.label not in (1, 0, -1):
            raise ValueError(f"label must be 1, 0 or -1, got {self.label}")


FEATURE_NAMES = tuple(f.name for f in fields(BindShellCandidate))
AGGREGATE_FEATURES = (
    "s_phase1_initiators_hosts", "s_phase2_initiators_hosts",
    "s_phase1_initiators_ports", "s_phase2_initiators_ports",
    "s_port_count", "s_pair_phase1_cnt", "s_pair_phase2_cnt",
    "s_spfss_unique_srcs", "s_arb_host_count", "s_arb_port_count",
)

NoiseFilter = Callable[[ConnectionPair], bool]

NOISE_FILTERS: dict[str, NoiseFilter | None] = {
    "none": None,
    # shells usually listen on unregistered ports
    "high-port-phase2": lambda p: p.port2 >= 1024,
}


def _all_pairs(sessions: Sequence[TrafficSession], window_seconds: int) -> list[ConnectionPair]:
    by_hosts: dict[tuple[int, int], list[TrafficSession]] = defaultdict(list)
    for s in sessions:
        by_hosts[(s.src_index, s.dst_index)].append(s)
    starts: dict[tuple[int, int], list[int]] = {}
    for hosts, group in by_hosts.items():
        group.sort(key=lambda s: s.min_start_time)
        starts[hosts] = [s.min_start_time for s in group]

    pairs = []
    for (a, b), group in by_hosts.items():
        targets = [((a, b), BIND)]
        if a != b and (b, a) in by_hosts:
            targets.append(((b, a), REVERSE))
        for hosts, direction in targets:
            other = by_hosts[hosts]
            times = starts[hosts]
            for i, s1 in enumerate(group):
                t = s1.min_start_time
                lo = bisect_left(times, t)
                hi = bisect_right(times, t + window_seconds)
                for j in range(lo, hi):
                    s2 = other[j]
                    if direction == BIND and (j == i or s2.dst_port == s1.dst_port):
                        continue
                    pairs.append(ConnectionPair(s1, s2, direction))
    return pairs


def pair_connections(sessions: Sequence[TrafficSession], window_seconds: int = DEFAULT_WINDOW_SECONDS,
                     noise_filter: NoiseFilter | None = None) -> list[ConnectionPair]:
    """Emit every ordered two-phase pair within ``window_seconds``.

    Bind pairs: same source and destination, different destination ports.
    Reverse pairs: the second session runs from destination back to source.
    Pairs rejected by ``noise_filter`` are dropped.
    """
    if window_seconds <= 0:
        raise ValueError(f"window_seconds must be positive, got {window_seconds}")
    pairs = _all_pairs(list(sessions), window_seconds)
    if noise_filter is not None:
        pairs = [p for p in pairs if noise_filter(p)]
    pairs.sort(key=_pair_order)
    return pairs


def _pair_order(p: ConnectionPair):
    return (p.phase1.min_start_time, p.source, p.port1, p.port2, p.destination,
            p.phase2.min_start_time, p.direction, _session_key(p.phase1), _session_key(p.phase2))


def _session_key(s: TrafficSession) -> tuple:
    return astuple(s)[:-1] + (-1 if s.duration is None else s.duration,)


class _PopulationIndex:
    """Distinct-value sets over the unfiltered pairs, keyed per feature."""

    def __init__(self, population: Iterable[ConnectionPair]):
        self.src_p1_dsts = defaultdict(set)
        self.src_p2_dsts = defaultdict(set)
        self.src_p1_p2s = defaultdict(set)
        self.src_p2_p1s = defaultdict(set)
        self.port_couple = defaultdict(int)
        self.src_dst_p1s = defaultdict(set)
        self.src_dst_p2s = defaultdict(set)
        self.dst_p1_p2_srcs = defaultdict(set)
        self.dst_p1_srcs = defaultdict(set)
        self.dst_p1_p2s = defaultdict(set)
        for p in population:
            d = p.direction
            s, t, p1, p2 = p.source, p.destination, p.port1, p.port2
            self.src_p1_dsts[d, s, p1].add(t)
            self.src_p2_dsts[d, s, p2].add(t)
            self.src_p1_p2s[d, s, p1].add(p2)
            self.src_p2_p1s[d, s, p2].add(p1)
            self.port_couple[d, p1, p2] += 1
            self.src_dst_p1s[d, s, t].add(p1)
            self.src_dst_p2s[d, s, t].add(p2)
            self.dst_p1_p2_srcs[d, t, p1, p2].add(s)
            self.dst_p1_srcs[d, t, p1].add(s)
            self.dst_p1_p2s[d, t, p1].add(p2)


class _HostActivity:
    def __init__(self, sessions: Iterable[TrafficSession]):
        times = defaultdict(list)
        for s in sessions:
            times[s.src_index].append(s.min_start_time)
            if s.dst_index != s.src_index:
                times[s.dst_index].append(s.min_start_time)
        self.times = {h: sorted(ts) for h, ts in times.items()}

    def seen_between(self, host: int, start: int, end: int) -> bool:
        """Any session touching ``host`` with start time in [start, end)."""
        ts = self.times.get(host, [])
        i = bisect_left(ts, start)
        return i < len(ts) and ts[i] < end


def compute_candidate_features(
    pairs: Sequence[ConnectionPair],
    sessions: Sequence[TrafficSession],
    population: Sequence[ConnectionPair] | None = None,
    window_seconds: int = DEFAULT_WINDOW_SECONDS,
    lookback_seconds: int = DEFAULT_LOOKBACK_SECONDS,
    labels: Mapping[tuple, int] | None = None,
) -> list[BindShellCandidate]:
    """Build the feature rows for ``pairs``.

    ``sessions`` is the whole corpus for the period and ``population`` the
    unfiltered pairs over it (re-derived with ``window_seconds`` when omitted).
    Aggregates compare a candidate only with population pairs of the same
    direction. ``labels`` maps :attr:`ConnectionPair.key` to 1 or 0; pairs
    without an entry get -1.
    """
    sessions = list(sessions)
    if population is None:
        population = _all_pairs(sessions, window_seconds)
    corpus = set(sessions)
    for p in pairs:
        if p.phase1 not in corpus or p.phase2 not in corpus:
            raise ValueError(f"pair {p.key} references a session outside the corpus")
    idx = _PopulationIndex(population)
    activity = _HostActivity(sessions)
    labels = labels or {}

    rows = []
    for i, p in enumerate(sorted(pairs, key=_pair_order)):
        d, s, t, p1, p2 = p.direction, p.source, p.destination, p.port1, p.port2
        s1, s2 = p.phase1, p.phase2
        t1 = s1.min_start_time
        is_new = not (activity.seen_between(s, t1 - lookback_seconds, t1)
                      or activity.seen_between(t, t1 - lookback_seconds, t1))
        rows.append(BindShellCandidate(
            index=i,
            label=labels.get(p.key, -1),
            source_host_id=s,
            is_new=is_new,
            s_phase1_initiators_hosts=len(idx.src_p1_dsts[d, s, p1]),
            s_phase2_initiators_hosts=len(idx.src_p2_dsts[d, s, p2]),
            s_phase1_initiators_ports=len(idx.src_p1_p2s[d, s, p1]),
            s_phase2_initiators_ports=len(idx.src_p2_p1s[d, s, p2]),
            s_port_count=idx.port_couple[d, p1, p2],
            s_src_port_phase1=s1.src_port,
            s_src_port_phase2=s2.src_port,
            s_pair_phase1_cnt=len(idx.src_dst_p1s[d, s, t]),
            s_pair_phase2_cnt=len(idx.src_dst_p2s[d, s, t]),
            s_start_time_phase1=t1,
            s_start_time_phase2=s2.min_start_time,
            s_duration_phase1=s1.duration or 0,
            s_duration_phase2=s2.duration or 0,
            s_dst_port_phase1=p1,
            s_dst_port_phase2=p2,
            s_volume_phase1=s1.tvolume,
            s_volume_phase2=s2.tvolume,
            s_rvolume_phase1=s1.rtvolume,
            s_rvolume_phase2=s2.rtvolume,
            s_path_phase1=s1.path,
            s_path_phase2=s2.path,
            s_spfss_unique_srcs=len(idx.dst_p1_p2_srcs[d, t, p1, p2]),
            s_arb_host_count=len(idx.dst_p1_srcs[d, t, p1]),
            s_arb_port_count=len(idx.dst_p1_p2s[d, t, p1]),
        ))
    return rows


def _cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    return str(value)


def write_candidates(rows: Iterable[BindShellCandidate], stream: TextIO) -> None:
    """TSV with a header row naming every column."""
    stream.write("\t".join(FEATURE_NAMES) + "\n")
    for row in rows:
        stream.write("\t".join(_cell(v) for v in astuple(row)) + "\n")


def read_candidates(source: Iterable[str]) -> list[BindShellCandidate]:
    lines = iter(source)
    header = next(lines, "").rstrip("\n").split("\t")
    if tuple(header) != FEATURE_NAMES:
        raise ValueError("candidate file header does not match the feature list")
    types = {f.name: f.type for f in fields(BindShellCandidate)}
    out = []
    for line in lines:
        values = {}
        for name, raw in zip(FEATURE_NAMES, line.rstrip("\n").split("\t")):
            if name == "is_new":
                values[name] = raw == "1"
            elif types[name] in ("str", str):
                values[name] = raw
            else:
                values[name] = int(raw)
        out.append(BindShellCandidate(**values))
    return out


class BindShellFeaturizer(TransformerMixin, BaseEstimator):
    """Pairs sessions and turns the surviving pairs into feature rows.

    ``fit`` stores the corpus and its unfiltered pair population;
    ``transform`` returns :class:`BindShellCandidate` rows for the pairs that
    pass ``noise_filter``.
    """

    def __init__(self, window_seconds: int = DEFAULT_WINDOW_SECONDS,
                 lookback_seconds: int = DEFAULT_LOOKBACK_SECONDS,
                 noise_filter: NoiseFilter | str | None = None):
        self.window_seconds = window_seconds
        self.lookback_seconds = lookback_seconds
        self.noise_filter = noise_filter

    def _filter(self) -> NoiseFilter | None:
        if isinstance(self.noise_filter, str):
            try:
                return NOISE_FILTERS[self.noise_filter]
            except KeyError:
                raise ValueError(f"unknown noise filter {self.noise_filter!r}") from None
        return self.noise_filter

    def fit(self, X, y=None):
        self.sessions_ = list(X)
        self.population_ = pair_connections(self.sessions_, self.window_seconds)
        flt = self._filter()
        self.pairs_ = [p for p in self.population_ if flt is None or flt(p)]
        self.n_dropped_ = len(self.population_) - len(self.pairs_)
        return self

    def transform(self, X=None, labels: Mapping[tuple, int] | None = None) -> list[BindShellCandidate]:
        check_is_fitted(self, "pairs_")
        return compute_candidate_features(self.pairs_, self.sessions_, self.population_,
                                          self.window_seconds, self.lookback_seconds, labels)

    def fit_transform(self, X, y=None, **kw):
        return self.fit(X).transform(X, **kw)
