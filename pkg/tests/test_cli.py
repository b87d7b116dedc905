import io
import json
import subprocess
import sys

import pytest

from pivotsec import cli
from pivotsec.bindshell import BindShellFeaturizer, write_candidates
from pivotsec.datamodel import read_communications, read_traffic, write_pair_labels, write_traffic
from pivotsec.pivoting import PivotConfig, label_malware_pairs
from pivotsec.traffic import bucketize


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err) if err.strip() else None)


@pytest.fixture
def ops(tmp_path, capsys):
    d = tmp_path / "ops"
    code, summary, _ = run(capsys, "synth", "--kind", "operators", "--out-dir", d, "--seed", 1)
    assert code == 0 and summary["positive_malware_pairs"] == 2
    return d


@pytest.fixture
def net(tmp_path, capsys):
    d = tmp_path / "net"
    code, _, _ = run(capsys, "synth", "--kind", "traffic", "--out-dir", d, "--seed", 1)
    assert code == 0
    return d


def test_pivot_malware_positives(ops, tmp_path, capsys):
    out = tmp_path / "pairs.tsv"
    code, summary, _ = run(capsys, "pivot-malware", "--comms", ops / "comms.tsv", "--out", out)
    assert code == 0 and summary["positives"] == 2
    assert summary["command"] == "pivot-malware"
    assert json.loads((tmp_path / "pairs.tsv.report.json").read_text())["positives"] == 2
    with open(ops / "comms.tsv") as fh:
        direct = label_malware_pairs(read_communications(fh), PivotConfig())
    buf = io.StringIO()
    write_pair_labels(direct.labels, buf)
    assert out.read_text() == buf.getvalue()


def test_pivot_hosts(ops, tmp_path, capsys):
    truth = json.loads((ops / "ground_truth.json").read_text())
    out = tmp_path / "hosts.tsv"
    code, summary, _ = run(capsys, "pivot-hosts", "--comms", ops / "comms.tsv", "--signatures",
                           ops / "signatures.jsonl", "--resolve", ops / "resolve.tsv", "--out", out)
    assert code == 0 and summary["positives"] == len(truth["host_pairs"])


def test_traffic_commands_match_library(net, tmp_path, capsys):
    with open(net / "traffic.tsv") as fh:
        sessions = read_traffic(fh)
    code, _, _ = run(capsys, "bucketize", "--traffic", net / "traffic.tsv", "--out", tmp_path / "b.tsv")
    buf = io.StringIO()
    write_traffic(bucketize(sessions), buf)
    assert code == 0 and (tmp_path / "b.tsv").read_text() == buf.getvalue()

    code, _, _ = run(capsys, "bindshell", "--traffic", net / "traffic.tsv", "--out", tmp_path / "c.tsv")
    buf = io.StringIO()
    write_candidates(BindShellFeaturizer().fit_transform(sessions), buf)
    assert code == 0 and (tmp_path / "c.tsv").read_text() == buf.getvalue()


def test_scan_score_finds_scanner(net, tmp_path, capsys):
    truth = json.loads((net / "ground_truth.json").read_text())
    code, summary, _ = run(capsys, "scan-score", "--traffic", net / "traffic.tsv", "--out", tmp_path / "s.tsv")
    assert code == 0 and summary["top"]["src_index"] == truth["scanner_ids"][0]
    first = (tmp_path / "s.tsv").read_text().splitlines()[0].split("\t")
    assert int(first[0]) == truth["scanner_ids"][0]


def test_path_score(net, tmp_path, capsys):
    truth = json.loads((net / "ground_truth.json").read_text())
    paths = tmp_path / "paths.txt"
    paths.write_text(",".join(map(str, truth["lateral_path"])) + "\n0,1\n")
    code, summary, _ = run(capsys, "path-score", "--traffic", net / "traffic.tsv", "--paths", paths,
                           "--out", tmp_path / "p.tsv")
    assert code == 0 and summary["paths"] == 2
    rows = [line.split("\t") for line in (tmp_path / "p.tsv").read_text().splitlines()]
    assert [float(r[1]) for r in rows] == sorted(float(r[1]) for r in rows)


def test_ngram_extract_and_derive(tmp_path, capsys):
    f = tmp_path / "f.bin"
    f.write_bytes(b"01234")
    code, summary, _ = run(capsys, "ngram-extract", f, "--out", tmp_path / "g4.tsv")
    assert code == 0 and summary["grams"] == [2]
    code, _, _ = run(capsys, "ngram-derive", "--ngrams", tmp_path / "g4.tsv", "--k", 3, "--out", tmp_path / "g3.tsv")
    assert code == 0
    assert (tmp_path / "g3.tsv").read_text().splitlines()[-1] == "0\t012:1\t123:1"


def test_ngram_extract_workers(tmp_path, capsys):
    files = []
    for i in range(3):
        p = tmp_path / f"{i}.bin"
        p.write_bytes(bytes(range(i, i + 40)))
        files.append(p)
    run(capsys, "ngram-extract", *files, "--out", tmp_path / "a.tsv")
    code, _, _ = run(capsys, "--workers", 2, "ngram-extract", *files, "--out", tmp_path / "b.tsv")
    assert code == 0 and (tmp_path / "a.tsv").read_text() == (tmp_path / "b.tsv").read_text()


def test_eval_direct(capsys):
    code, summary, _ = run(capsys, "eval", "--precision", 0.1, "--base-rate", 0.0001)
    assert code == 0 and summary["lift"] == pytest.approx(1000.0)


def test_eval_files(tmp_path, capsys):
    (tmp_path / "p.tsv").write_text("a\t1\nb\t0\nc\t1\n")
    (tmp_path / "l.tsv").write_text("a\t1\nb\t0\nc\t-1\n")
    (tmp_path / "r.txt").write_text("a\nc\nb\n")
    code, summary, _ = run(capsys, "eval", "--predictions", tmp_path / "p.tsv", "--labels", tmp_path / "l.tsv",
                           "--ranked", tmp_path / "r.txt", "--out", tmp_path / "rep.json")
    assert code == 0 and summary["cells"]["tp"] == 1 and summary["cells"]["unknown"] == 1
    assert json.loads((tmp_path / "rep.json").read_text())["cells"] == summary["cells"]


def test_config_and_flag_precedence(ops, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pivot-malware": {"comms": str(ops / "comms.tsv"), "negative_ratio": 0.5}}))
    code, summary, _ = run(capsys, "--config", cfg, "pivot-malware", "--out", tmp_path / "o.tsv")
    assert code == 0 and summary["negatives"] == 1
    code, summary, _ = run(capsys, "--config", cfg, "pivot-malware", "--out", tmp_path / "o.tsv",
                           "--negative-ratio", 1.0)
    assert code == 0 and summary["negatives"] == 2


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"eval": {"bogus": 1}}))
    code, _, err = run(capsys, "--config", cfg, "eval", "--precision", 0.1, "--base-rate", 0.1)
    assert code == 2 and "bogus" in err["error"]


def test_missing_input_is_usage_error(tmp_path, capsys):
    out = tmp_path / "o.tsv"
    code, summary, err = run(capsys, "bucketize", "--traffic", tmp_path / "nope.tsv", "--out", out)
    assert code == 2 and summary is None and err["exit_code"] == 2
    assert not out.exists()


def test_missing_required_setting(capsys):
    code, _, err = run(capsys, "bucketize")
    assert code == 2 and "traffic" in err["error"]


def test_runtime_error_leaves_no_output(tmp_path, capsys):
    bad = tmp_path / "t.tsv"
    bad.write_text("xyz\n")
    out = tmp_path / "o.tsv"
    code, _, err = run(capsys, "bucketize", "--traffic", bad, "--out", out)
    assert code == 1 and err["line"] == 1
    assert list(tmp_path.iterdir()) == [bad]


def test_bad_lift_input_is_runtime_error(capsys):
    code, _, err = run(capsys, "eval", "--precision", 0.1, "--base-rate", 0)
    assert code == 1 and err["type"] == "ValueError"


def test_unknown_subcommand_exits_2():
    proc = subprocess.run([sys.executable, "-m", "pivotsec", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pivotsec", "eval", "--precision", "0.5", "--base-rate", "0.5"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["lift"] == 1.0
