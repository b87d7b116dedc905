import io
import json
import random
import string
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pivotsec.datamodel import (
    CommunicationRecord,
    FileRecord,
    FormatError,
    HostSignature,
    NgramHistogram,
    PairLabel,
    TrafficSession,
    Verdict,
    VerdictRecord,
    escape_gram,
    read_communications,
    read_files,
    read_host_signatures,
    read_ngram_file,
    read_pair_labels,
    read_traffic,
    read_verdicts,
    to_absolute_time,
    unescape_gram,
    write_communications,
    write_files,
    write_host_signatures,
    write_ngram_file,
    write_pair_labels,
    write_traffic,
    write_verdicts,
)

from conftest import random_sessions

A64 = "a" * 64


def dump(writer, records) -> str:
    buf = io.StringIO()
    writer(records, buf)
    return buf.getvalue()


# -- communications ---------------------------------------------------------


def test_read_communications_single_record():
    recs = read_communications(io.StringIO(f"{A64}\tevil.example\t10.0.0.1\n"))
    assert recs == [CommunicationRecord(A64, "evil.example", "10.0.0.1")]


def test_read_communications_dedups_keeping_first_ip():
    text = f"{A64}\tEvil.Example\t10.0.0.1\n{A64}\tevil.example\t10.0.0.2\n"
    recs = read_communications(io.StringIO(text))
    assert recs == [CommunicationRecord(A64, "evil.example", "10.0.0.1")]


def test_read_communications_rejects_non_hex_sha():
    with pytest.raises(FormatError) as err:
        read_communications(io.StringIO("xyz\tevil.example\t10.0.0.1"))
    assert err.value.line == 1
    assert err.value.field == "sha256"


@pytest.mark.parametrize("ip", ["10.0.0.256", "10.0.0", "a.b.c.d", "10.0.0.01"])
def test_read_communications_rejects_bad_ip(ip):
    with pytest.raises(FormatError) as err:
        read_communications(io.StringIO(f"{A64}\td.example\t1.1.1.1\n{A64}\te.example\t{ip}\n"))
    assert (err.value.line, err.value.field) == (2, "ip")


def test_read_communications_accepts_header():
    text = f"sha256\tdomain\tip\n{A64}\tevil.example\t10.0.0.1\n"
    assert len(read_communications(io.StringIO(text))) == 1


# -- traffic ------------------------------------------------------------------


def test_read_traffic_example():
    (s,) = read_traffic(io.StringIO("600\t1\t2\t5000\t445\t100\t50\t3\t2\t1\t0\ttcp"))
    assert s.cnt == 1 and s.dst_port == 445 and s.min_start_time == 600 and s.path == "tcp"


def test_read_traffic_failed_exceeds_cnt():
    with pytest.raises(FormatError) as err:
        read_traffic(io.StringIO("600\t1\t2\t5000\t445\t100\t50\t3\t2\t2\t3\ttcp\n"))
    assert err.value.line == 1


def test_read_traffic_cnt_zero():
    with pytest.raises(FormatError):
        read_traffic(io.StringIO("600\t1\t2\t5000\t445\t100\t50\t3\t2\t0\t0\ttcp\n"))


def test_read_traffic_non_integer():
    with pytest.raises(FormatError) as err:
        read_traffic(io.StringIO("600\t1\t2\t5000\t44x\t100\t50\t3\t2\t1\t0\ttcp\n"))
    assert err.value.field == "dst_port"


def test_read_traffic_empty():
    assert read_traffic(io.StringIO("")) == []


def test_read_traffic_duration_column():
    (s,) = read_traffic(io.StringIO("600\t1\t2\t5000\t445\t100\t50\t3\t2\t1\t0\ttcp\t42\n"))
    assert s.duration == 42


# -- n-gram file --------------------------------------------------------------


def test_read_ngram_line():
    ((idx, hist),) = read_ngram_file(io.StringIO("7\t0123:1\t1234:1"))
    assert idx == 7 and hist.counts == {b"0123": 1, b"1234": 1}


def test_ngram_writer_is_canonical():
    rows = read_ngram_file(io.StringIO("7\t1234:1\t0123:1"))
    assert rows[0][1].counts == {b"0123": 1, b"1234": 1}
    assert dump(write_ngram_file, rows) == "7\t0123:1\t1234:1\n"


@pytest.mark.parametrize("line", ["7\t0123:0", "7\t0123:-1", "7\t0123:1\t0123:2", "7\t01:1\t0123:1", "7\t0123"])
def test_read_ngram_errors(line):
    with pytest.raises(FormatError):
        read_ngram_file(io.StringIO(line))


@given(st.binary(min_size=1, max_size=4))
def test_gram_escape_round_trip(gram):
    token = escape_gram(gram)
    assert "\t" not in token and ":" not in token and " " not in token
    assert unescape_gram(token) == gram


# -- verdicts -----------------------------------------------------------------


def test_read_verdicts():
    recs = read_verdicts(io.StringIO("3\t1\tramnit\tallaple\n4\t0\n"))
    assert recs == [VerdictRecord(3, Verdict.malware, ("ramnit", "allaple")), VerdictRecord(4, Verdict.benign, ())]


def test_read_verdicts_bad_enum():
    with pytest.raises(FormatError) as err:
        read_verdicts(io.StringIO("5\t7"))
    assert err.value.line == 1


# -- pair labels / host signatures ---------------------------------------------


def test_pair_label_must_be_canonical():
    with pytest.raises(ValueError):
        PairLabel("b", "a", True)
    with pytest.raises(ValueError):
        PairLabel("a", "b", False, "d.example")


def test_host_signature_keeps_raw_text():
    raw = '{"ip_str": "1.2.3.4",  "data": [{"port": 80, "product": "nginx", "version": "1.14"}]}'
    sig = HostSignature.from_json(raw)
    assert sig.services == {80: {"product": "nginx", "version": "1.14"}}
    assert dump(write_host_signatures, [sig]) == raw + "\n"


def test_host_signature_port_range():
    with pytest.raises(FormatError):
        read_host_signatures(io.StringIO('{"ip_str": "1.2.3.4", "data": [{"port": 70000}]}'))


# -- time ---------------------------------------------------------------------


def test_absolute_time_epoch():
    assert to_absolute_time(0) == datetime(1912, 6, 23, tzinfo=timezone.utc)
    assert to_absolute_time(86400) == datetime(1912, 6, 24, tzinfo=timezone.utc)


def test_absolute_time_long_offset():
    # 3155673600 s = 36524 days; 1912-06-23 + 36525 days (25 leap days) is 2012-06-23
    expected = np.datetime64("1912-06-23T00:00:00") + np.timedelta64(3155673600, "s")
    assert str(expected) == "2012-06-22T00:00:00"
    assert to_absolute_time(3155673600) == datetime(2012, 6, 22, tzinfo=timezone.utc)


def test_absolute_time_negative():
    with pytest.raises(ValueError):
        to_absolute_time(-1)


# -- round trips over randomized records -------------------------------------


def _rand_token(rng, alphabet=string.ascii_lowercase + string.digits, lo=1, hi=12):
    return "".join(rng.choices(alphabet, k=rng.randint(lo, hi)))


def random_file_records(rng, n):
    return [FileRecord(f"{rng.getrandbits(256):064x}", f"{rng.getrandbits(128):032x}",
                       f"3:{_rand_token(rng)}:{_rand_token(rng)}", rng.randrange(1 << 30)) for _ in range(n)]


def random_comm_records(rng, n):
    out, seen = [], set()
    while len(out) < n:
        rec = CommunicationRecord(f"{rng.getrandbits(256):064x}", f"{_rand_token(rng)}.{rng.choice(['com', 'ru'])}",
                                  ".".join(str(rng.randrange(256)) for _ in range(4)))
        if (rec.sha256, rec.domain) not in seen:
            seen.add((rec.sha256, rec.domain))
            out.append(rec)
    return out


def random_signatures(rng, n):
    out = []
    for _ in range(n):
        obj = {"ip_str": ".".join(str(rng.randrange(256)) for _ in range(4)),
               "data": [{"port": rng.randrange(65536), "product": _rand_token(rng), "banner": "x\tyé"}
                        for _ in range(rng.randint(0, 3))],
               "tags": [_rand_token(rng)]}
        out.append(HostSignature.from_json(json.dumps(obj, indent=None if rng.random() < 0.5 else 0)
                                           .replace("\n", " ")))
    return out


def random_ngram_rows(rng, n):
    rows = []
    for i in range(n):
        counts = {bytes(rng.randrange(256) for _ in range(4)): rng.randint(1, 1000) for _ in range(rng.randint(1, 20))}
        rows.append((i, NgramHistogram(4, counts)))
    return rows


def random_verdicts(rng, n):
    return [VerdictRecord(i, Verdict(rng.randrange(3)), tuple(_rand_token(rng) for _ in range(rng.randint(0, 3))))
            for i in range(n)]


def random_pair_labels(rng, n):
    out = []
    for _ in range(n):
        a, b = sorted(rng.sample(range(10**6), 2))
        pos = rng.random() < 0.5
        out.append(PairLabel(f"e{a:07d}", f"e{b:07d}", pos, _rand_token(rng) if pos and rng.random() < 0.5 else None))
    return out


ROUND_TRIPS = {
    "files": (random_file_records, write_files, read_files),
    "communications": (random_comm_records, write_communications, read_communications),
    "host_signatures": (random_signatures, write_host_signatures, read_host_signatures),
    "traffic": (lambda rng, n: random_sessions(rng, n, with_duration=rng.random() < 0.5), write_traffic, read_traffic),
    "ngrams": (random_ngram_rows, write_ngram_file, read_ngram_file),
    "verdicts": (random_verdicts, write_verdicts, read_verdicts),
    "pair_labels": (random_pair_labels, write_pair_labels, read_pair_labels),
}


@pytest.mark.parametrize("name", sorted(ROUND_TRIPS))
def test_round_trip(name):
    gen, writer, reader = ROUND_TRIPS[name]
    records = gen(random.Random(name), 1000)
    text = dump(writer, records)
    assert "\t\n" not in text and "\r" not in text.replace("\\r", "")
    back = reader(io.StringIO(text))
    assert back == records
    assert dump(writer, back) == text


@settings(max_examples=200)
@given(st.lists(st.dictionaries(st.binary(min_size=4, max_size=4), st.integers(1, 10**6), min_size=1), max_size=5))
def test_ngram_write_idempotent(hists):
    rows = [(i, NgramHistogram(4, h)) for i, h in enumerate(hists)]
    first = dump(write_ngram_file, rows)
    assert dump(write_ngram_file, read_ngram_file(io.StringIO(first))) == first
