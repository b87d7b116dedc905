"""Brute-force reference computations shared by unit and acceptance tests.

They deliberately avoid the library's indexes: everything is recomputed by
scanning raw records, usually quadratically.
"""
from itertools import product

import pandas as pd


def operator_domains_bruteforce(comms, allowlist, max_files):
    files = sorted({r.sha256 for r in comms})
    od = {}
    for f in files:
        mine = set()
        for r in comms:
            if r.sha256 != f or r.domain in allowlist:
                continue
            users = {q.sha256 for q in comms if q.domain == r.domain}
            if len(users) <= max_files:
                mine.add(r.domain)
        od[f] = mine
    return od


def _od_fast_enough(comms, allowlist, max_files):
    # same definition, linear-time popularity, for large corpora
    users = {}
    for r in comms:
        users.setdefault(r.domain, set()).add(r.sha256)
    od = {}
    for r in comms:
        od.setdefault(r.sha256, set())
        if r.domain not in allowlist and len(users[r.domain]) <= max_files:
            od[r.sha256].add(r.domain)
    return od


def malware_positives(comms, allowlist=frozenset(), max_files=100):
    od = _od_fast_enough(comms, allowlist, max_files)
    files = sorted(od)
    out = {}
    for i, a in enumerate(files):
        for b in files[i + 1:]:
            common = od[a] & od[b]
            if common:
                out[(a, b)] = min(common)
    return out


def host_positives(comms, resolve, mode, allowlist=frozenset(), max_files=100, signatures=None):
    od = _od_fast_enough(comms, allowlist, max_files)
    files = sorted(od)
    raw = set()
    if mode == "shared_domain_formula":
        for a in files:
            for b in files:
                if a == b:
                    continue
                for d in od[a] & od[b]:
                    for ip1, ip2 in product(resolve[d], resolve[d]):
                        if ip1 != ip2:
                            raw.add((min(ip1, ip2), max(ip1, ip2)))
    else:
        for m in files:
            for d1, d2 in product(od[m], od[m]):
                if d1 == d2:
                    continue
                for ip1, ip2 in product(resolve[d1], resolve[d2]):
                    if ip1 != ip2:
                        raw.add((min(ip1, ip2), max(ip1, ip2)))
    if signatures is None:
        return raw, 0
    kept = {p for p in raw if p[0] in signatures and p[1] in signatures}
    return kept, len(raw) - len(kept)


SUMMED = ["tvolume", "rtvolume", "pkt", "rpkt", "cnt", "failed_num"]
KEY = ["bucket", "src_index", "dst_index", "src_port", "dst_port", "path"]


def bucket_groupby(sessions) -> pd.DataFrame:
    df = pd.DataFrame([s.__dict__ for s in sessions])
    df["bucket"] = df["min_start_time"] // 600
    agg = df.groupby(KEY, sort=True).agg(
        min_start_time=("min_start_time", "min"), **{c: (c, "sum") for c in SUMMED})
    return agg.reset_index()


def all_pairs_bruteforce(sessions, window):
    """Every (phase1, phase2, direction) triple by scanning all ordered session pairs."""
    out = []
    for i, s1 in enumerate(sessions):
        for j, s2 in enumerate(sessions):
            if i == j:
                continue
            dt = s2.min_start_time - s1.min_start_time
            if not 0 <= dt <= window:
                continue
            if (s2.src_index, s2.dst_index) == (s1.src_index, s1.dst_index) and s2.dst_port != s1.dst_port:
                out.append((s1, s2, "bind"))
            if (s1.src_index != s1.dst_index and s2.src_index == s1.dst_index
                    and s2.dst_index == s1.src_index):
                out.append((s1, s2, "reverse"))
    return out


def bindshell_features_bruteforce(s1, s2, direction, population, sessions, lookback):
    """Re-derive every aggregate feature of one candidate by scanning the population."""
    src, dst, p1, p2 = s1.src_index, s1.dst_index, s1.dst_port, s2.dst_port
    same = [(a, b) for a, b, d in population if d == direction]

    def distinct(values):
        return len(set(values))

    t1 = s1.min_start_time
    seen = any(t1 - lookback <= s.min_start_time < t1 and
               ({s.src_index, s.dst_index} & {src, dst}) for s in sessions)
    return {
        "source_host_id": src,
        "is_new": not seen,
        "s_phase1_initiators_hosts": distinct(a.dst_index for a, b in same if a.src_index == src and a.dst_port == p1),
        "s_phase2_initiators_hosts": distinct(a.dst_index for a, b in same if a.src_index == src and b.dst_port == p2),
        "s_phase1_initiators_ports": distinct(b.dst_port for a, b in same if a.src_index == src and a.dst_port == p1),
        "s_phase2_initiators_ports": distinct(a.dst_port for a, b in same if a.src_index == src and b.dst_port == p2),
        "s_port_count": sum(1 for a, b in same if a.dst_port == p1 and b.dst_port == p2),
        "s_src_port_phase1": s1.src_port,
        "s_src_port_phase2": s2.src_port,
        "s_pair_phase1_cnt": distinct(a.dst_port for a, b in same if a.src_index == src and a.dst_index == dst),
        "s_pair_phase2_cnt": distinct(b.dst_port for a, b in same if a.src_index == src and a.dst_index == dst),
        "s_start_time_phase1": s1.min_start_time,
        "s_start_time_phase2": s2.min_start_time,
        "s_duration_phase1": s1.duration or 0,
        "s_duration_phase2": s2.duration or 0,
        "s_dst_port_phase1": p1,
        "s_dst_port_phase2": p2,
        "s_volume_phase1": s1.tvolume,
        "s_volume_phase2": s2.tvolume,
        "s_rvolume_phase1": s1.rtvolume,
        "s_rvolume_phase2": s2.rtvolume,
        "s_path_phase1": s1.path,
        "s_path_phase2": s2.path,
        "s_spfss_unique_srcs": distinct(a.src_index for a, b in same
                                        if a.dst_index == dst and a.dst_port == p1 and b.dst_port == p2),
        "s_arb_host_count": distinct(a.src_index for a, b in same if a.dst_index == dst and a.dst_port == p1),
        "s_arb_port_count": distinct(b.dst_port for a, b in same if a.dst_index == dst and a.dst_port == p1),
    }
