"""Record schemas and TSV/JSONL readers and writers.

Every reader takes an iterable of text lines (an open file works) and returns
records in file order. Every writer emits UTF-8 text with LF line endings, no
header, and no trailing tabs, so ``read(write(records)) == records``.
"""
from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import IntEnum
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

__all__ = [
    "EPOCH",
    "FormatError",
    "FileRecord",
    "CommunicationRecord",
    "HostSignature",
    "TrafficSession",
    "Verdict",
    "VerdictRecord",
    "PairLabel",
    "NgramHistogram",
    "TRAFFIC_COLUMNS",
    "to_absolute_time",
    "read_files",
    "write_files",
    "read_communications",
    "write_communications",
    "read_host_signatures",
    "write_host_signatures",
    "read_traffic",
    "write_traffic",
    "read_ngram_file",
    "write_ngram_file",
    "read_verdicts",
    "write_verdicts",
    "read_pair_labels",
    "write_pair_labels",
    "escape_gram",
    "unescape_gram",
]

EPOCH = datetime(1912, 6, 23, tzinfo=timezone.utc)

TRAFFIC_COLUMNS = (
    "min_start_time", "src_index", "dst_index", "src_port", "dst_port",
    "tvolume", "rtvolume", "pkt", "rpkt", "cnt", "failed_num", "path",
)

_SHA256_RE = re.compile(r"[0-9a-f]{64}")
_MD5_RE = re.compile(r"[0-9a-f]{32}")
_INT_RE = re.compile(r"-?[0-9]+")
_WS_RE = re.compile(r"\s")


class FormatError(ValueError):
    """A line of an input file violates its schema."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


# --------------------------------------------------------------------------
# record types


def _check_ipv4(value: str) -> str:
    try:
        return str(ipaddress.IPv4Address(value))
    except (ipaddress.AddressValueError, ValueError):
        raise ValueError(f"invalid IPv4 address {value!r}") from None


def _check_port(name: str, value: int) -> None:
    if not 0 <= value <= 65535:
        raise ValueError(f"{name} out of range: {value}")


@dataclass(frozen=True)
class FileRecord:
    sha256: str
    md5: str
    ssdeep: str
    size: int

    def __post_init__(self):
        if not _SHA256_RE.fullmatch(self.sha256):
            raise ValueError(f"sha256 is not 64 lowercase hex chars: {self.sha256!r}")
        if not _MD5_RE.fullmatch(self.md5):
            raise ValueError(f"md5 is not 32 lowercase hex chars: {self.md5!r}")
        if "\t" in self.ssdeep or "\n" in self.ssdeep:
            raise ValueError("ssdeep may not contain tabs or newlines")
        if self.size < 0:
            raise ValueError(f"negative size: {self.size}")


@dataclass(frozen=True)
class CommunicationRecord:
    """One observed contact between a file and a domain resolved to an IP."""

    sha256: str
    domain: str
    ip: str

    def __post_init__(self):
        if not _SHA256_RE.fullmatch(self.sha256):
            raise ValueError(f"sha256 is not 64 lowercase hex chars: {self.sha256!r}")
        if not self.domain or _WS_RE.search(self.domain) or self.domain != self.domain.lower():
            raise ValueError(f"domain must be non-empty lowercase without whitespace: {self.domain!r}")
        if _check_ipv4(self.ip) != self.ip:
            raise ValueError(f"ip is not in dotted-quad form: {self.ip!r}")


@dataclass(frozen=True, eq=True)
class HostSignature:
    """Service scan of one host; ``raw`` keeps the JSON line untouched."""

    ip: str
    services: Mapping[int, Mapping[str, str]]
    raw: str

    __hash__ = None  # services is a mutable mapping

    def __post_init__(self):
        _check_ipv4(self.ip)
        for port in self.services:
            _check_port("service port", port)

    @classmethod
    def from_json(cls, text: str) -> "HostSignature":
        obj = json.loads(text)
        if not isinstance(obj, dict):
            raise ValueError("host signature must be a JSON object")
        ip = obj.get("ip_str", obj.get("ip"))
        if not isinstance(ip, str):
            raise ValueError("host signature lacks an 'ip_str' field")
        entries = obj.get("data", obj.get("services", []))
        if not isinstance(entries, list):
            raise ValueError("'data' must be an array of service entries")
        services: dict[int, dict[str, str]] = {}
        for entry in entries:
            if not isinstance(entry, dict) or "port" not in entry:
                raise ValueError("service entry without a port")
            port = entry["port"]
            if isinstance(port, bool) or not isinstance(port, int):
                raise ValueError(f"non-integer port {port!r}")
            _check_port("service port", port)
            desc = services.setdefault(port, {})
            for key, value in entry.items():
                if key == "port" or isinstance(value, (dict, list)) or value is None:
                    continue
                desc.setdefault(key, str(value))
        return cls(ip=ip, services=services, raw=text)


@dataclass(frozen=True)
class TrafficSession:
    """One (possibly aggregated) session row.

    ``duration`` is not part of the published schema; it is carried only when
    the input has a 13th column.
    """

    min_start_time: int
    src_index: int
    dst_index: int
    src_port: int
    dst_port: int
    tvolume: int
    rtvolume: int
    pkt: int
    rpkt: int
    cnt: int
    failed_num: int
    path: str
    duration: int | None = None

    def __post_init__(self):
        for name in ("min_start_time", "src_index", "dst_index", "tvolume",
                     "rtvolume", "pkt", "rpkt", "failed_num"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        _check_port("src_port", self.src_port)
        _check_port("dst_port", self.dst_port)
        if self.cnt < 1:
            raise ValueError(f"cnt must be >= 1, got {self.cnt}")
        if self.failed_num > self.cnt:
            raise ValueError(f"failed_num {self.failed_num} exceeds cnt {self.cnt}")
        if not self.path or _WS_RE.search(self.path):
            raise ValueError(f"path must be a non-empty token: {self.path!r}")
        if self.duration is not None and self.duration < 0:
            raise ValueError(f"negative duration: {self.duration}")

    @property
    def bucket_index(self) -> int:
        return self.min_start_time // 600


class Verdict(IntEnum):
    benign = 0
    malware = 1
    greyware = 2


@dataclass(frozen=True)
class VerdictRecord:
    file_index: int
    verdict: Verdict
    family_tags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.file_index < 0:
            raise ValueError(f"negative file index {self.file_index}")
        object.__setattr__(self, "verdict", Verdict(self.verdict))
        object.__setattr__(self, "family_tags", tuple(self.family_tags))
        for tag in self.family_tags:
            if not tag or "\t" in tag or "\n" in tag:
                raise ValueError(f"bad family tag {tag!r}")


@dataclass(frozen=True, order=True)
class PairLabel:
    """A labeled unordered entity pair in canonical (a < b) form."""

    entity_a: str
    entity_b: str
    positive: bool
    class_key: str | None = None

    def __post_init__(self):
        if not self.entity_a < self.entity_b:
            raise ValueError(f"pair not canonical: {self.entity_a!r} !< {self.entity_b!r}")
        if self.class_key is not None and not self.positive:
            raise ValueError("class_key is only allowed on positive pairs")


@dataclass(frozen=True)
class NgramHistogram:
    """Counts of every n-byte window of a file."""

    n: int
    counts: Mapping[bytes, int] = field(default_factory=dict)

    __hash__ = None

    def __post_init__(self):
        if not 1 <= self.n <= 4:
            raise ValueError(f"gram length must be in 1..4, got {self.n}")
        for gram, count in self.counts.items():
            if len(gram) != self.n:
                raise ValueError(f"gram {gram!r} does not have {self.n} bytes")
            if count < 1:
                raise ValueError(f"non-positive count {count} for gram {gram!r}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def sorted_items(self) -> list[tuple[bytes, int]]:
        return sorted(self.counts.items())


# --------------------------------------------------------------------------
# time


def to_absolute_time(relative_seconds: int) -> datetime:
    """Convert a traffic ``min_start_time`` into an aware UTC datetime."""
    if relative_seconds < 0:
        raise ValueError(f"relative time must be non-negative, got {relative_seconds}")
    return EPOCH + timedelta(seconds=relative_seconds)


# --------------------------------------------------------------------------
# shared parsing helpers


def _lines(source: Iterable[str]) -> Iterator[tuple[int, str]]:
    for lineno, line in enumerate(source, start=1):
        if line.endswith("\n"):
            line = line[:-1]
        if line.endswith("\r"):
            line = line[:-1]
        yield lineno, line


def _int(value: str, lineno: int, name: str) -> int:
    if not _INT_RE.fullmatch(value):
        raise FormatError(f"not an integer: {value!r}", lineno, name)
    return int(value)


def _is_header(first_field: str, names: Iterable[str]) -> bool:
    return first_field.strip().lower().replace(" ", "_") in names


def _write_lines(stream: TextIO, lines: Iterable[str]) -> None:
    for line in lines:
        stream.write(line)
        stream.write("\n")


# --------------------------------------------------------------------------
# malware file records


def read_files(source: Iterable[str]) -> list[FileRecord]:
    out = []
    for lineno, line in _lines(source):
        parts = line.split("\t")
        if lineno == 1 and _is_header(parts[0], {"sha256", "sha-256"}):
            continue
        if len(parts) != 4:
            raise FormatError(f"expected 4 columns, got {len(parts)}", lineno)
        sha, md5, ssdeep, size = parts
        if not _SHA256_RE.fullmatch(sha):
            raise FormatError(f"not a sha256 digest: {sha!r}", lineno, "sha256")
        if not _MD5_RE.fullmatch(md5):
            raise FormatError(f"not an md5 digest: {md5!r}", lineno, "md5")
        try:
            out.append(FileRecord(sha, md5, ssdeep, _int(size, lineno, "size")))
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(str(exc), lineno) from None
    return out


def write_files(records: Iterable[FileRecord], stream: TextIO) -> None:
    _write_lines(stream, (f"{r.sha256}\t{r.md5}\t{r.ssdeep}\t{r.size}" for r in records))


# --------------------------------------------------------------------------
# communications


def read_communications(source: Iterable[str], format: str = "tsv") -> list[CommunicationRecord]:
    """Parse ``sha256 TAB domain TAB ip`` lines.

    Domains are lowercased. Repeated (sha256, domain) lines collapse onto the
    first occurrence, whose ip is kept.
    """
    if format != "tsv":
        raise ValueError(f"unsupported communications format {format!r}")
    out: list[CommunicationRecord] = []
    seen: set[tuple[str, str]] = set()
    for lineno, line in _lines(source):
        parts = line.split("\t")
        if lineno == 1 and _is_header(parts[0], {"sha256", "sha-256", "sha_256"}):
            continue
        if len(parts) != 3:
            raise FormatError(f"expected 3 columns, got {len(parts)}", lineno)
        sha, domain, ip = parts
        if not _SHA256_RE.fullmatch(sha):
            raise FormatError(f"not a lowercase sha256 digest: {sha!r}", lineno, "sha256")
        domain = domain.lower()
        if not domain or _WS_RE.search(domain):
            raise FormatError(f"bad domain {domain!r}", lineno, "domain")
        try:
            ip = _check_ipv4(ip)
        except ValueError as exc:
            raise FormatError(str(exc), lineno, "ip") from None
        if (sha, domain) in seen:
            continue
        seen.add((sha, domain))
        out.append(CommunicationRecord(sha, domain, ip))
    return out


def write_communications(records: Iterable[CommunicationRecord], stream: TextIO) -> None:
    _write_lines(stream, (f"{r.sha256}\t{r.domain}\t{r.ip}" for r in records))


# --------------------------------------------------------------------------
# host signatures (JSON lines)


def read_host_signatures(source: Iterable[str]) -> list[HostSignature]:
    out = []
    for lineno, line in _lines(source):
        try:
            out.append(HostSignature.from_json(line))
        except ValueError as exc:  # json.JSONDecodeError is a ValueError
            raise FormatError(str(exc), lineno) from None
    return out


def write_host_signatures(records: Iterable[HostSignature], stream: TextIO) -> None:
    _write_lines(stream, (r.raw for r in records))


# --------------------------------------------------------------------------
# traffic


def read_traffic(source: Iterable[str]) -> list[TrafficSession]:
    """Parse traffic rows in the published 12-column order.

    A 13th column, when present, is read as the session duration in seconds.
    """
    out = []
    for lineno, line in _lines(source):
        parts = line.split("\t")
        if lineno == 1 and _is_header(parts[0], {"min_start_time"}):
            continue
        if len(parts) not in (12, 13):
            raise FormatError(f"expected 12 or 13 columns, got {len(parts)}", lineno)
        values = [_int(v, lineno, name) for v, name in zip(parts[:11], TRAFFIC_COLUMNS)]
        duration = _int(parts[12], lineno, "duration") if len(parts) == 13 else None
        try:
            out.append(TrafficSession(*values, parts[11], duration))
        except ValueError as exc:
            raise FormatError(str(exc), lineno) from None
    return out


def _traffic_line(s: TrafficSession) -> str:
    cols = [s.min_start_time, s.src_index, s.dst_index, s.src_port, s.dst_port,
            s.tvolume, s.rtvolume, s.pkt, s.rpkt, s.cnt, s.failed_num, s.path]
    if s.duration is not None:
        cols.append(s.duration)
    return "\t".join(map(str, cols))


def write_traffic(sessions: Iterable[TrafficSession], stream: TextIO) -> None:
    _write_lines(stream, map(_traffic_line, sessions))


# --------------------------------------------------------------------------
# n-gram histograms

_PLAIN_BYTES = frozenset(range(0x21, 0x7F)) - {ord("\\"), ord(":")}


def escape_gram(gram: bytes) -> str:
    """Text token for a gram: printable ASCII as-is, anything else as ``\\xNN``."""
    return "".join(chr(b) if b in _PLAIN_BYTES else f"\\x{b:02x}" for b in gram)


def unescape_gram(token: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(token):
        ch = token[i]
        if ch == "\\":
            hexpart = token[i + 2:i + 4]
            if token[i + 1:i + 2] != "x" or not re.fullmatch(r"[0-9a-fA-F]{2}", hexpart):
                raise ValueError(f"bad escape in gram token {token!r}")
            out.append(int(hexpart, 16))
            i += 4
        elif ord(ch) in _PLAIN_BYTES:
            out.append(ord(ch))
            i += 1
        else:
            raise ValueError(f"unescaped character {ch!r} in gram token {token!r}")
    return bytes(out)


def read_ngram_file(source: Iterable[str], n: int | None = None) -> list[tuple[int, NgramHistogram]]:
    """Parse ``index TAB gram:count TAB ...`` lines.

    The gram length is taken from ``n`` or, if omitted, from the first gram of
    each line (4 for a line without grams).
    """
    out = []
    for lineno, line in _lines(source):
        parts = line.split("\t")
        if lineno == 1 and _is_header(parts[0], {"index", "file_index"}):
            continue
        index = _int(parts[0], lineno, "file_index")
        if index < 0:
            raise FormatError("negative file index", lineno, "file_index")
        counts: dict[bytes, int] = {}
        for col, item in enumerate(parts[1:], start=2):
            token, sep, count = item.rpartition(":")
            if not sep:
                raise FormatError(f"expected gram:count, got {item!r}", lineno, f"column {col}")
            try:
                gram = unescape_gram(token)
            except ValueError as exc:
                raise FormatError(str(exc), lineno, f"column {col}") from None
            value = _int(count, lineno, f"column {col}")
            if value <= 0:
                raise FormatError(f"non-positive count {value}", lineno, f"column {col}")
            if gram in counts:
                raise FormatError(f"duplicated gram {token!r}", lineno, f"column {col}")
            counts[gram] = value
        size = n if n is not None else (len(next(iter(counts))) if counts else 4)
        try:
            out.append((index, NgramHistogram(size, counts)))
        except ValueError as exc:
            raise FormatError(str(exc), lineno) from None
    return out


def write_ngram_file(rows: Iterable[tuple[int, NgramHistogram]], stream: TextIO) -> None:
    """Write histograms with grams in ascending byte order."""
    def line(index: int, hist: NgramHistogram) -> str:
        cells = [str(index)]
        cells.extend(f"{escape_gram(g)}:{c}" for g, c in hist.sorted_items())
        return "\t".join(cells)

    _write_lines(stream, (line(i, h) for i, h in rows))


# --------------------------------------------------------------------------
# verdicts


def read_verdicts(source: Iterable[str]) -> list[VerdictRecord]:
    out = []
    for lineno, line in _lines(source):
        parts = line.split("\t")
        if lineno == 1 and _is_header(parts[0], {"index", "file_index"}):
            continue
        if len(parts) < 2:
            raise FormatError("expected at least index and verdict", lineno)
        index = _int(parts[0], lineno, "file_index")
        verdict = _int(parts[1], lineno, "verdict")
        if verdict not in (0, 1, 2):
            raise FormatError(f"verdict must be 0, 1 or 2, got {verdict}", lineno, "verdict")
        try:
            out.append(VerdictRecord(index, Verdict(verdict), tuple(parts[2:])))
        except ValueError as exc:
            raise FormatError(str(exc), lineno) from None
    return out


def write_verdicts(records: Iterable[VerdictRecord], stream: TextIO) -> None:
    _write_lines(stream, ("\t".join([str(r.file_index), str(int(r.verdict)), *r.family_tags])
                          for r in records))


# --------------------------------------------------------------------------
# pair labels


def read_pair_labels(source: Iterable[str]) -> list[PairLabel]:
    out = []
    for lineno, line in _lines(source):
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            raise FormatError(f"expected 3 or 4 columns, got {len(parts)}", lineno)
        if parts[2] not in ("0", "1"):
            raise FormatError(f"label must be 0 or 1, got {parts[2]!r}", lineno, "label")
        try:
            out.append(PairLabel(parts[0], parts[1], parts[2] == "1",
                                 parts[3] if len(parts) == 4 else None))
        except ValueError as exc:
            raise FormatError(str(exc), lineno) from None
    return out


def write_pair_labels(labels: Sequence[PairLabel], stream: TextIO) -> None:
    def line(p: PairLabel) -> str:
        cells = [p.entity_a, p.entity_b, "1" if p.positive else "0"]
        if p.class_key is not None:
            cells.append(p.class_key)
        return "\t".join(cells)

    _write_lines(stream, map(line, labels))
