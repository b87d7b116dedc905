import random

import pytest

from pivotsec.datamodel import CommunicationRecord, TrafficSession


def random_sessions(rng: random.Random, n: int, hosts: int = 8, ports=(22, 80, 443, 445, 3389, 4444),
                    span: int = 3000, with_duration: bool = False) -> list[TrafficSession]:
    out = []
    for _ in range(n):
        cnt = rng.randint(1, 4)
        out.append(TrafficSession(
            min_start_time=rng.randrange(span),
            src_index=rng.randrange(hosts),
            dst_index=rng.randrange(hosts),
            src_port=rng.choice((1025, 2000, 50000)),
            dst_port=rng.choice(ports),
            tvolume=rng.randrange(10_000),
            rtvolume=rng.randrange(10_000),
            pkt=rng.randrange(50),
            rpkt=rng.randrange(50),
            cnt=cnt,
            failed_num=rng.randint(0, cnt),
            path=rng.choice(("tcp", "udp")),
            duration=rng.randrange(300) if with_duration else None,
        ))
    return out


def sha(i: int) -> str:
    return f"{i:064x}"


def random_comms(rng: random.Random, n_files: int, n_domains: int, n_records: int) -> list[CommunicationRecord]:
    out, seen = [], set()
    for _ in range(n_records):
        f, d = rng.randrange(n_files), rng.randrange(n_domains)
        if (f, d) in seen:
            continue
        seen.add((f, d))
        out.append(CommunicationRecord(sha(f), f"d{d}.example", f"10.0.{d // 256}.{d % 256}"))
    return out


@pytest.fixture
def rng():
    return random.Random(1234)
