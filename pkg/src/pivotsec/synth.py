"""Seeded synthetic corpora with planted ground truth.

The signals are planted so they are unambiguous by construction: operators own
private domains and IP pools, and attacks use ports and edges the background
never uses. The generators exist to check the pipelines, not to imitate real
adversaries.
"""
from __future__ import annotations

import json
import random
import string
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import TextIO

from .datamodel import (
    CommunicationRecord,
    FileRecord,
    HostSignature,
    TrafficSession,
    write_communications,
    write_files,
    write_host_signatures,
    write_traffic,
)
from .pivoting import PivotConfig, write_resolve_map

__all__ = [
    "BENIGN_DOMAINS",
    "ScanSpec",
    "LateralSpec",
    "BindShellSpec",
    "TrafficSpec",
    "ScenarioSpec",
    "GroundTruth",
    "OperatorCorpus",
    "gen_operator_corpus",
    "gen_traffic_scenario",
    "write_operator_corpus",
]

BENIGN_DOMAINS = (
    "google.com", "microsoft.com", "windowsupdate.com", "akamai.net", "cloudflare.com",
    "amazonaws.com", "apple.com", "facebook.com", "yahoo.com", "bing.com",
    "msftncsi.com", "digicert.com", "verisign.com", "mozilla.org", "wikipedia.org",
    "github.com", "office.com", "live.com", "adobe.com", "gstatic.com",
)

_TLDS = ("com", "net", "org", "info", "biz", "xyz", "top", "ru")

_STACKS = (
    {80: ("nginx", "1.14.0"), 22: ("OpenSSH", "7.4")},
    {80: ("Apache httpd", "2.4.29"), 3306: ("MySQL", "5.7.21")},
    {443: ("nginx", "1.10.3"), 8080: ("Jetty", "9.2.z")},
    {80: ("Microsoft IIS httpd", "8.5"), 3389: ("Remote Desktop", "10.0")},
    {21: ("vsftpd", "3.0.3"), 80: ("lighttpd", "1.4.45")},
    {22: ("Dropbear sshd", "2017.75"), 8443: ("Tomcat", "8.5.23")},
)

POPULAR_PORTS = (80, 443, 53, 445, 22, 3389, 8080, 25)

_MAX_PRIVATE_DOMAINS = 100_000


@dataclass(frozen=True)
class ScanSpec:
    enabled: bool = True
    port_count: int = 10
    target: int | None = None


@dataclass(frozen=True)
class LateralSpec:
    enabled: bool = True
    path_length: int = 4


@dataclass(frozen=True)
class BindShellSpec:
    enabled: bool = True
    window_gap_seconds: int = 30
    exploit_port: int = 445
    shell_port: int = 4444


@dataclass(frozen=True)
class TrafficSpec:
    n_hosts: int = 50
    n_servers: int = 5
    benign_sessions: int = 600
    duration_seconds: int = 6 * 3600
    scan: ScanSpec = field(default_factory=ScanSpec)
    lateral: LateralSpec = field(default_factory=LateralSpec)
    bindshell: BindShellSpec = field(default_factory=BindShellSpec)


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters for both generators.

    ``popularity_threshold`` should equal the ``max_files_per_domain`` the
    corpus will be pivoted with; that many plus one filler files contact every
    benign domain so those domains are filtered as too popular. Ground truth is
    exact only when ``cross_contact_rate`` is 0.
    """

    rng_seed: int = 0
    n_operators: int = 2
    malware_per_operator: int = 2
    domains_per_operator: int = 1
    benign_domain_count: int = 3
    popularity_threshold: int = 100
    extra_domain_prob: float = 0.5
    benign_contacts_per_malware: int = 2
    cross_contact_rate: float = 0.0
    traffic: TrafficSpec = field(default_factory=TrafficSpec)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        data = dict(data)
        traffic = dict(data.pop("traffic", {}))
        for key, sub in (("scan", ScanSpec), ("lateral", LateralSpec), ("bindshell", BindShellSpec)):
            if key in traffic:
                traffic[key] = sub(**traffic[key])
        return cls(traffic=TrafficSpec(**traffic), **data)


@dataclass
class GroundTruth:
    malware_pairs: list[tuple[str, str]] = field(default_factory=list)
    host_pairs: list[tuple[str, str]] = field(default_factory=list)
    scanner_ids: list[int] = field(default_factory=list)
    scan_window_start: int | None = None
    lateral_path: list[int] = field(default_factory=list)
    bindshell_pairs: list[tuple[int, int, int, int, int]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


@dataclass
class OperatorCorpus:
    files: list[FileRecord]
    communications: list[CommunicationRecord]
    resolve: dict[str, set[str]]
    signatures: dict[str, HostSignature]
    truth: GroundTruth
    pivot_config: PivotConfig


def _sha(rng: random.Random, bits: int) -> str:
    return f"{rng.getrandbits(bits):0{bits // 4}x}"


def _domain(rng: random.Random, taken: set[str]) -> str:
    while True:
        name = "".join(rng.choices(string.ascii_lowercase, k=9)) + "." + rng.choice(_TLDS)
        if name not in taken:
            taken.add(name)
            return name


def _ip(rng: random.Random, taken: set[str]) -> str:
    while True:
        ip = f"{rng.randrange(11, 223)}.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(1, 255)}"
        if ip not in taken:
            taken.add(ip)
            return ip


def _signature(ip: str, stack: dict, rng: random.Random) -> HostSignature:
    data = [{"port": port, "transport": "tcp", "product": product, "version": version,
             "data": f"{product} {version}\r\n"} for port, (product, version) in sorted(stack.items())]
    obj = {"ip_str": ip, "org": f"AS{rng.randrange(1000, 65000)}", "data": data}
    return HostSignature.from_json(json.dumps(obj, sort_keys=True))


def gen_operator_corpus(spec: ScenarioSpec = ScenarioSpec()) -> OperatorCorpus:
    """Operator-structured communications, resolve map and host signatures.

    Each malware of an operator contacts the operator's core domain (so every
    within-operator pair is positive), a random subset of its other private
    domains, and a few benign domains.
    """
    for name in ("n_operators", "malware_per_operator", "domains_per_operator",
                 "benign_domain_count", "popularity_threshold"):
        if getattr(spec, name) < 1:
            raise ValueError(f"{name} must be >= 1")
    if spec.benign_domain_count > len(BENIGN_DOMAINS):
        raise ValueError(f"only {len(BENIGN_DOMAINS)} benign domain names are available, "
                         f"{spec.benign_domain_count} requested")
    if spec.n_operators * spec.domains_per_operator > _MAX_PRIVATE_DOMAINS:
        raise ValueError("too many private domains requested")
    if spec.malware_per_operator > spec.popularity_threshold:
        raise ValueError("malware_per_operator exceeds the popularity threshold; "
                         "core domains would be filtered as popular")

    rng = random.Random(spec.rng_seed)
    taken_names: set[str] = set(BENIGN_DOMAINS)
    taken_ips: set[str] = set()
    benign = list(BENIGN_DOMAINS[:spec.benign_domain_count])
    resolve: dict[str, set[str]] = {}
    signatures: dict[str, HostSignature] = {}

    for d in benign:
        ips = {_ip(rng, taken_ips) for _ in range(rng.randint(1, 2))}
        resolve[d] = ips
        for ip in sorted(ips):
            signatures[ip] = _signature(ip, {443: ("gws", ""), 80: ("gws", "")}, rng)

    operators = []
    for op in range(spec.n_operators):
        stack = _STACKS[rng.randrange(len(_STACKS))]
        pool = [_ip(rng, taken_ips) for _ in range(spec.domains_per_operator + 1)]
        for ip in pool:
            signatures[ip] = _signature(ip, stack, rng)
        domains = [_domain(rng, taken_names) for _ in range(spec.domains_per_operator)]
        for d in domains:
            resolve[d] = set(rng.sample(pool, rng.randint(1, min(2, len(pool)))))
        shas = [_sha(rng, 256) for _ in range(spec.malware_per_operator)]
        operators.append((domains, shas))

    contacts: list[tuple[str, str]] = []
    for op, (domains, shas) in enumerate(operators):
        for sha in shas:
            chosen = [domains[0]] + [d for d in domains[1:] if rng.random() < spec.extra_domain_prob]
            chosen += rng.sample(benign, min(spec.benign_contacts_per_malware, len(benign)))
            if spec.n_operators > 1 and rng.random() < spec.cross_contact_rate:
                other = rng.choice([o for o in range(spec.n_operators) if o != op])
                chosen.append(rng.choice(operators[other][0]))
            contacts.extend((sha, d) for d in chosen)
    fillers = [_sha(rng, 256) for _ in range(spec.popularity_threshold + 1)]
    for sha in fillers:
        contacts.extend((sha, d) for d in benign)

    comms = []
    seen = set()
    for sha, d in contacts:
        if (sha, d) in seen:
            continue
        seen.add((sha, d))
        comms.append(CommunicationRecord(sha, d, rng.choice(sorted(resolve[d]))))

    all_shas = [sha for _, shas in operators for sha in shas] + fillers
    files = [FileRecord(sha, _sha(rng, 128), f"3:{_sha(rng, 64)}:{_sha(rng, 32)}", rng.randrange(1024, 1 << 22))
             for sha in all_shas]

    truth = GroundTruth()
    for _, shas in operators:
        truth.malware_pairs.extend(combinations(sorted(shas), 2))
    truth.malware_pairs.sort()
    users: dict[str, set[str]] = {}
    for rec in comms:
        users.setdefault(rec.domain, set()).add(rec.sha256)
    host_pairs = set()
    for domains, _ in operators:
        for d in domains:
            if len(users.get(d, ())) >= 2:
                host_pairs.update(combinations(sorted(resolve[d]), 2))
    truth.host_pairs = sorted(host_pairs)

    return OperatorCorpus(files, comms, resolve, signatures, truth,
                          PivotConfig(max_files_per_domain=spec.popularity_threshold))


def write_operator_corpus(corpus: OperatorCorpus, files: TextIO, comms: TextIO, resolve: TextIO,
                          signatures: TextIO, truth: TextIO) -> None:
    write_files(corpus.files, files)
    write_communications(corpus.communications, comms)
    write_resolve_map(corpus.resolve, resolve)
    write_host_signatures([corpus.signatures[ip] for ip in sorted(corpus.signatures)], signatures)
    truth.write(corpus.truth.to_json())


def _session(rng: random.Random, t: int, src: int, dst: int, port: int, path: str = "tcp",
             failed: bool = False) -> TrafficSession:
    pkt = rng.randint(1, 40)
    return TrafficSession(
        min_start_time=t, src_index=src, dst_index=dst,
        src_port=rng.randrange(1024, 65536), dst_port=port,
        tvolume=pkt * rng.randint(40, 1500), rtvolume=rng.randint(0, 60000),
        pkt=pkt, rpkt=rng.randint(0, 40), cnt=1, failed_num=1 if failed else 0, path=path,
    )


def gen_traffic_scenario(spec: ScenarioSpec = ScenarioSpec()) -> tuple[list[TrafficSession], GroundTruth]:
    """Background client/server traffic plus the enabled planted attacks.

    Hosts ``0 .. n_servers-1`` are servers; the rest are clients that talk to
    two or three home servers on those servers' service ports, and servers
    talk among themselves. Planted activity:

    * scan: one client touches ``port_count`` ports never used in the
      background, on one target, inside a single 10-minute bucket;
    * lateral: a chain of clients each connecting to the next (client to
      client edges never occur in the background);
    * bindshell: an exploit connection followed ``window_gap_seconds`` later
      by a connection to the shell port.

    Sessions are returned sorted by start time, one row per connection.
    """
    ts = spec.traffic
    rng = random.Random(spec.rng_seed)
    n_clients = ts.n_hosts - ts.n_servers
    if ts.n_servers < 2:
        raise ValueError("at least two servers are required")
    need = max(ts.lateral.path_length if ts.lateral.enabled else 0, 2)
    if n_clients < need:
        raise ValueError(f"{ts.n_hosts} hosts are too few for {ts.n_servers} servers "
                         f"and a path of {ts.lateral.path_length} clients")
    if ts.lateral.enabled and ts.lateral.path_length < 2:
        raise ValueError("lateral path_length must be >= 2")
    if ts.scan.enabled and ts.scan.port_count < 1:
        raise ValueError("scan port_count must be >= 1")
    if ts.bindshell.enabled and ts.bindshell.window_gap_seconds < 0:
        raise ValueError("window_gap_seconds must be >= 0")
    if ts.duration_seconds < 1200:
        raise ValueError("duration_seconds must cover at least two buckets")

    servers = list(range(ts.n_servers))
    clients = list(range(ts.n_servers, ts.n_hosts))
    services = {s: rng.sample(POPULAR_PORTS, 2) for s in servers}
    home = {c: rng.sample(servers, rng.randint(2, min(3, len(servers)))) for c in clients}

    sessions = []
    for _ in range(ts.benign_sessions):
        t = rng.randrange(ts.duration_seconds)
        if rng.random() < 0.15:
            src = rng.choice(servers)
            dst = rng.choice([s for s in servers if s != src])
        else:
            src = rng.choice(clients)
            dst = rng.choice(home[src])
        port = rng.choice(services[dst])
        sessions.append(_session(rng, t, src, dst, port, "udp" if port == 53 else "tcp",
                                 failed=rng.random() < 0.05))

    truth = GroundTruth()
    reserved = set(POPULAR_PORTS) | {ts.bindshell.shell_port}

    if ts.scan.enabled:
        scanner = rng.choice(clients)
        target = ts.scan.target if ts.scan.target is not None else rng.choice(
            [h for h in range(ts.n_hosts) if h != scanner])
        unseen = [p for p in range(1, 1024) if p not in reserved]
        ports = rng.sample(unseen, ts.scan.port_count)
        bucket = rng.randrange(ts.duration_seconds // 600)
        for port in ports:
            t = bucket * 600 + rng.randrange(600)
            sessions.append(_session(rng, t, scanner, target, port, failed=rng.random() < 0.7))
        truth.scanner_ids = [scanner]
        truth.scan_window_start = bucket * 600

    if ts.lateral.enabled:
        path = rng.sample(clients, ts.lateral.path_length)
        t = rng.randrange(ts.duration_seconds // 2)
        for u, v in zip(path, path[1:]):
            sessions.append(_session(rng, t, u, v, rng.choice((445, 3389, 22))))
            t += rng.randint(60, 900)
        truth.lateral_path = path

    if ts.bindshell.enabled:
        bs = ts.bindshell
        attacker, victim = rng.sample(clients, 2)
        t = rng.randrange(ts.duration_seconds - bs.window_gap_seconds)
        sessions.append(_session(rng, t, attacker, victim, bs.exploit_port))
        sessions.append(_session(rng, t + bs.window_gap_seconds, attacker, victim, bs.shell_port))
        truth.bindshell_pairs = [(attacker, victim, t, bs.exploit_port, bs.shell_port)]

    sessions.sort(key=lambda s: (s.min_start_time, s.src_index, s.dst_index, s.src_port, s.dst_port))
    return sessions, truth


def write_traffic_scenario(sessions, truth: GroundTruth, traffic: TextIO, truth_out: TextIO) -> None:
    write_traffic(sessions, traffic)
    truth_out.write(truth.to_json())
