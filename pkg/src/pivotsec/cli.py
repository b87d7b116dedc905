"""``pivotsec`` command line.

Every subcommand reads its inputs, calls the library, writes its outputs
atomically and prints a JSON summary on stdout. Settings come from flags,
then from the subcommand's section of ``--config`` (a JSON object keyed by
subcommand name), then from built-in defaults.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
Errors are reported as a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import bindshell, evaluation, ngrams, pivoting, synth, traffic
from .datamodel import (
    FormatError,
    read_communications,
    read_host_signatures,
    read_ngram_file,
    read_traffic,
    write_ngram_file,
    write_pair_labels,
    write_traffic,
)

DEFAULT_SEED = pivoting.DEFAULT_SEED

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

DEFAULTS: dict[str, dict[str, Any]] = {
    "pivot-malware": dict(comms=None, out=None, report=None, allowlist=None,
                          max_files_per_domain=100, negative_ratio=1.0, seed=DEFAULT_SEED,
                          multiclass=False),
    "pivot-hosts": dict(comms=None, signatures=None, resolve=None, out=None, report=None,
                        allowlist=None, max_files_per_domain=100, negative_ratio=1.0,
                        seed=DEFAULT_SEED, multiclass=False, mode="shared_domain_formula"),
    "bucketize": dict(traffic=None, out=None),
    "scan-score": dict(traffic=None, out=None, alpha=1.0, window=traffic.BUCKET_SECONDS),
    "path-score": dict(traffic=None, paths=None, out=None, alpha=1.0, protocol=None),
    "bindshell": dict(traffic=None, out=None, window_seconds=bindshell.DEFAULT_WINDOW_SECONDS,
                      lookback_seconds=bindshell.DEFAULT_LOOKBACK_SECONDS, noise_filter="none"),
    "ngram-extract": dict(inputs=None, out=None, n=4),
    "ngram-derive": dict(ngrams=None, out=None, k=None),
    "eval": dict(precision=None, base_rate=None, predictions=None, labels=None, ranked=None,
                 complete=False, out=None),
    "synth": dict(kind="operators", out_dir=None, seed=DEFAULT_SEED, spec=None),
}

REQUIRED = {
    "pivot-malware": ("comms", "out"),
    "pivot-hosts": ("comms", "signatures", "out"),
    "bucketize": ("traffic", "out"),
    "scan-score": ("traffic", "out"),
    "path-score": ("traffic", "paths", "out"),
    "bindshell": ("traffic", "out"),
    "ngram-extract": ("inputs", "out"),
    "ngram-derive": ("ngrams", "out", "k"),
    "eval": (),
    "synth": ("out_dir",),
}

INPUT_PATHS = {"comms", "signatures", "resolve", "allowlist", "traffic", "paths", "ngrams",
               "predictions", "labels", "ranked"}


class UsageError(Exception):
    pass


class AtomicOutputs:
    """Collect outputs in temporary files and rename them into place only
    when the whole command succeeds."""

    def __init__(self):
        self._pending: list[tuple[str, Path]] = []

    def open(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        self._pending.append((tmp, path))
        return os.fdopen(fd, "w", encoding="utf-8", newline="")

    @property
    def paths(self) -> list[str]:
        return [str(p) for _, p in self._pending]

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            for tmp, final in self._pending:
                os.replace(tmp, final)
        else:
            for tmp, _ in self._pending:
                try:
                    os.unlink(tmp)
                except FileNotFoundError:
                    pass
        return False


# --------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pivotsec", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file with one section per subcommand")
    parser.add_argument("--workers", type=int, default=1, help="worker processes where supported")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    flag = argparse.BooleanOptionalAction

    def pivot_common(p):
        p.add_argument("--comms", help="communications TSV")
        p.add_argument("--out", help="pair label TSV to write")
        p.add_argument("--report", help="sidecar JSON report (default: OUT.report.json)")
        p.add_argument("--allowlist", help="file of benign domains, one per line")
        p.add_argument("--max-files-per-domain", type=int)
        p.add_argument("--negative-ratio", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--multiclass", action=flag)

    pivot_common(sub.add_parser("pivot-malware", help="label malware pairs"))
    p = sub.add_parser("pivot-hosts", help="label host (IP) pairs")
    pivot_common(p)
    p.add_argument("--signatures", help="host signatures JSONL")
    p.add_argument("--resolve", help="domain<TAB>ip file (default: IPs in the comms file)")
    p.add_argument("--mode", choices=pivoting.HOST_PAIR_MODES)

    p = sub.add_parser("bucketize", help="aggregate sessions into 10-minute buckets")
    p.add_argument("--traffic")
    p.add_argument("--out")

    p = sub.add_parser("scan-score", help="rank sources by port-combination surprise")
    p.add_argument("--traffic")
    p.add_argument("--out")
    p.add_argument("--alpha", type=float)
    p.add_argument("--window", type=int, help="seconds, multiple of 600")

    p = sub.add_parser("path-score", help="log-probability of host paths")
    p.add_argument("--traffic")
    p.add_argument("--paths", help="one comma-joined host path per line")
    p.add_argument("--out")
    p.add_argument("--alpha", type=float)
    p.add_argument("--protocol", help="restrict the graph to one path/protocol value")

    p = sub.add_parser("bindshell", help="pair connections and compute candidate features")
    p.add_argument("--traffic")
    p.add_argument("--out")
    p.add_argument("--window-seconds", type=int)
    p.add_argument("--lookback-seconds", type=int)
    p.add_argument("--noise-filter", choices=sorted(bindshell.NOISE_FILTERS))

    p = sub.add_parser("ngram-extract", help="4-gram histograms of files")
    p.add_argument("inputs", nargs="*", help="files; the position is the file index")
    p.add_argument("--out")
    p.add_argument("--n", type=int)

    p = sub.add_parser("ngram-derive", help="derive k-gram histograms from an n-gram file")
    p.add_argument("--ngrams")
    p.add_argument("--out")
    p.add_argument("--k", type=int)

    p = sub.add_parser("eval", help="evaluation report / precision lift")
    p.add_argument("--precision", type=float)
    p.add_argument("--base-rate", type=float)
    p.add_argument("--predictions", help="key<TAB>0|1")
    p.add_argument("--labels", help="key<TAB>1|0|-1")
    p.add_argument("--ranked", help="one key per line, most suspicious first")
    p.add_argument("--complete", action=flag, help="labels cover every positive")
    p.add_argument("--out", help="JSON report to write")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--kind", choices=("operators", "traffic"))
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--spec", help="JSON file with ScenarioSpec fields")
    return parser


def _resolve_settings(args: argparse.Namespace) -> dict[str, Any]:
    section: dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        section = config.get(args.command, {})
        if not isinstance(section, dict):
            raise UsageError(f"config section {args.command!r} must be an object")
    defaults = DEFAULTS[args.command]
    unknown = set(section) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    settings = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if key == "inputs" and value == []:
            value = None
        if value is None:
            value = section.get(key, default)
        settings[key] = value
    missing = [k for k in REQUIRED[args.command] if settings[k] in (None, [])]
    if missing:
        raise UsageError(f"{args.command}: missing required setting(s) {', '.join(missing)}")
    for key in INPUT_PATHS & settings.keys():
        if settings[key] is not None and not os.path.exists(settings[key]):
            raise UsageError(f"input file does not exist: {settings[key]}")
    for path in settings.get("inputs") or []:
        if not os.path.exists(path):
            raise UsageError(f"input file does not exist: {path}")
    return settings


def _read(path: str):
    return open(path, encoding="utf-8", newline="")


# --------------------------------------------------------------------------
# subcommands


def _pivot_config(s: dict) -> pivoting.PivotConfig:
    allow: frozenset[str] = frozenset()
    if s["allowlist"]:
        with _read(s["allowlist"]) as fh:
            allow = frozenset(line.strip().lower() for line in fh if line.strip())
    try:
        return pivoting.PivotConfig(allow, s["max_files_per_domain"], s["negative_ratio"],
                                    s["seed"], bool(s["multiclass"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_pivot(result: pivoting.PivotResult, s: dict, outputs: AtomicOutputs) -> dict:
    with outputs.open(s["out"]) as fh:
        write_pair_labels(result.labels, fh)
    summary = result.summary()
    with outputs.open(s["report"] or s["out"] + ".report.json") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def cmd_pivot_malware(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    cfg = _pivot_config(s)
    with _read(s["comms"]) as fh:
        comms = read_communications(fh)
    return _write_pivot(pivoting.label_malware_pairs(comms, cfg), s, outputs)


def cmd_pivot_hosts(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    cfg = _pivot_config(s)
    with _read(s["comms"]) as fh:
        comms = read_communications(fh)
    with _read(s["signatures"]) as fh:
        sigs = {sig.ip: sig for sig in read_host_signatures(fh)}
    resolve = None
    if s["resolve"]:
        with _read(s["resolve"]) as fh:
            resolve = pivoting.read_resolve_map(fh)
    result = pivoting.label_host_pairs(comms, cfg, resolve, sigs, s["mode"])
    return _write_pivot(result, s, outputs)


def _load_traffic(path: str):
    with _read(path) as fh:
        return read_traffic(fh)


def cmd_bucketize(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    sessions = _load_traffic(s["traffic"])
    rows = traffic.bucketize(sessions)
    with outputs.open(s["out"]) as fh:
        write_traffic(rows, fh)
    return {"input_rows": len(sessions), "output_rows": len(rows)}


def cmd_scan_score(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    sessions = _load_traffic(s["traffic"])
    model = traffic.fit_port_model(sessions, s["alpha"])
    ranked = traffic.rank_sources(model, sessions, s["window"])
    with outputs.open(s["out"]) as fh:
        for r in ranked:
            fh.write(f"{r.src_index}\t{r.window_start}\t{r.score!r}\n")
    top = ranked[0] if ranked else None
    return {"observations": model.total, "ports": model.universe, "windows": len(ranked),
            "top": None if top is None else {"src_index": top.src_index,
                                             "window_start": top.window_start, "score": top.score}}


def cmd_path_score(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    graph = traffic.build_access_graph(_load_traffic(s["traffic"]), s["alpha"], s["protocol"])
    paths = []
    with _read(s["paths"]) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            try:
                paths.append([int(h) for h in line.split(",")])
            except ValueError:
                raise FormatError(f"bad path {line!r}", lineno) from None
    scored = sorted(((traffic.path_log_probability(graph, p), ",".join(map(str, p))) for p in paths))
    with outputs.open(s["out"]) as fh:
        for logp, text in scored:
            fh.write(f"{text}\t{logp!r}\n")
    return {"nodes": len(graph.nodes), "edges": len(graph.weights), "paths": len(scored)}


def cmd_bindshell(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    sessions = _load_traffic(s["traffic"])
    est = bindshell.BindShellFeaturizer(s["window_seconds"], s["lookback_seconds"], s["noise_filter"])
    try:
        rows = est.fit_transform(sessions)
    except ValueError as exc:
        if "noise filter" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    with outputs.open(s["out"]) as fh:
        bindshell.write_candidates(rows, fh)
    return {"sessions": len(sessions), "unfiltered_pairs": len(est.population_),
            "candidates": len(rows), "dropped_by_filter": est.n_dropped_}


def _extract_file(args: tuple[str, int]):
    path, n = args
    with open(path, "rb") as fh:
        return ngrams.extract_ngrams(fh.read(), n)


def cmd_ngram_extract(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    jobs = [(p, s["n"]) for p in s["inputs"]]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            hists = list(pool.map(_extract_file, jobs))
    else:
        hists = [_extract_file(j) for j in jobs]
    with outputs.open(s["out"]) as fh:
        write_ngram_file(enumerate(hists), fh)
    return {"files": len(hists), "n": s["n"], "grams": [h.total for h in hists]}


def cmd_ngram_derive(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    with _read(s["ngrams"]) as fh:
        rows = read_ngram_file(fh)
    derived = [(i, ngrams.marginalize_prefix(h, s["k"])) for i, h in rows]
    with outputs.open(s["out"]) as fh:
        write_ngram_file(derived, fh)
    return {"files": len(derived), "k": s["k"]}


def _read_keyed(path: str) -> dict[str, str]:
    out = {}
    with _read(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise FormatError("expected 'key<TAB>value'", lineno)
            out[parts[0]] = parts[1]
    return out


def cmd_eval(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    if s["predictions"] is None:
        if s["precision"] is None or s["base_rate"] is None:
            raise UsageError("eval needs --predictions/--labels or --precision and --base-rate")
        report = {"precision": s["precision"], "base_rate": s["base_rate"],
                  "lift": evaluation.precision_lift(s["precision"], s["base_rate"])}
    else:
        if s["labels"] is None:
            raise UsageError("eval --predictions also needs --labels")
        preds = {k: evaluation.as_label(v) is evaluation.Label.pos
                 for k, v in _read_keyed(s["predictions"]).items()}
        labels = {k: evaluation.as_label(v) for k, v in _read_keyed(s["labels"]).items()}
        ranked = None
        if s["ranked"]:
            with _read(s["ranked"]) as fh:
                ranked = [line.strip() for line in fh if line.strip()]
        report = evaluation.evaluation_report(preds, labels, ranked, s["base_rate"], bool(s["complete"]))
    if s["out"]:
        with outputs.open(s["out"]) as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def cmd_synth(s: dict, outputs: AtomicOutputs, workers: int) -> dict:
    fields: dict = {}
    if isinstance(s["spec"], dict):
        fields = dict(s["spec"])
    elif s["spec"]:
        with _read(s["spec"]) as fh:
            fields = json.load(fh)
    fields["rng_seed"] = s["seed"]
    try:
        spec = synth.ScenarioSpec.from_dict(fields)
    except TypeError as exc:
        raise UsageError(f"bad scenario spec: {exc}") from None
    out = Path(s["out_dir"])
    if s["kind"] == "operators":
        corpus = synth.gen_operator_corpus(spec)
        with outputs.open(out / "files.tsv") as f1, outputs.open(out / "comms.tsv") as f2, \
                outputs.open(out / "resolve.tsv") as f3, outputs.open(out / "signatures.jsonl") as f4, \
                outputs.open(out / "ground_truth.json") as f5:
            synth.write_operator_corpus(corpus, f1, f2, f3, f4, f5)
        return {"kind": "operators", "files": len(corpus.files),
                "communications": len(corpus.communications),
                "positive_malware_pairs": len(corpus.truth.malware_pairs),
                "positive_host_pairs": len(corpus.truth.host_pairs)}
    if s["kind"] == "traffic":
        sessions, truth = synth.gen_traffic_scenario(spec)
        with outputs.open(out / "traffic.tsv") as f1, outputs.open(out / "ground_truth.json") as f2:
            synth.write_traffic_scenario(sessions, truth, f1, f2)
        return {"kind": "traffic", "sessions": len(sessions), "scanner_ids": truth.scanner_ids,
                "lateral_path": truth.lateral_path}
    raise UsageError(f"unknown synth kind {s['kind']!r}")


COMMANDS = {
    "pivot-malware": cmd_pivot_malware,
    "pivot-hosts": cmd_pivot_hosts,
    "bucketize": cmd_bucketize,
    "scan-score": cmd_scan_score,
    "path-score": cmd_path_score,
    "bindshell": cmd_bindshell,
    "ngram-extract": cmd_ngram_extract,
    "ngram-derive": cmd_ngram_derive,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": str(exc), "type": type(exc).__name__, "exit_code": code}
    if isinstance(exc, FormatError):
        err.update(line=exc.line, field=exc.field)
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _resolve_settings(args)
        with AtomicOutputs() as outputs:
            summary = COMMANDS[args.command](settings, outputs, args.workers)
        summary = {"command": args.command, "outputs": outputs.paths, **summary}
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        return _fail(EXIT_RUNTIME, exc)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
