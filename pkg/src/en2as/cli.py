"""``en2as`` command-line runner: ``search``, ``compare`` and ``inspect``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import re
import sys
import tempfile
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .arch import GenotypeFormatError, deserialize, pairwise_distances, pretty, spec_from_header
from .config import ConfigError, Plan, RunConfig, load_plan, load_run_config
from .novelty import dump_archive, load_archive
from .search import SearchConfig, run_pipeline

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SEED_ENV = "EN2AS_SEED"
SUMMARY_COLUMNS = ("label", "controller", "selector", "mean_acc", "std_acc",
                   "mean_diversity", "runtime_s")
RUN_COLUMNS = ("label", "controller", "selector", "repeat", "seed", "status", "val_accuracy",
               "test_accuracy", "final_diversity", "runtime_s", "error")
CURVE_COLUMNS = ("label", "repeat", "seed", "series", "index", "value")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed_arg(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="en2as", description="Novelty-driven one-shot architecture search.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("search", help="train, select and retrain once")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--seed", type=_seed_arg)
    s.add_argument("--out", required=True, type=Path)

    c = sub.add_parser("compare", help="run a controller x selector grid")
    c.add_argument("--plan", required=True, type=Path)
    c.add_argument("--seed", type=_seed_arg)
    c.add_argument("--out", required=True, type=Path)
    c.add_argument("--jobs", type=int)

    i = sub.add_parser("inspect", help="summarise an archive, genotype or result file")
    i.add_argument("path", type=Path)
    return p


def resolve_seed(cli_seed: int | None, config_seed: int) -> int:
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return _seed_arg(env.strip())
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"{SEED_ENV}: {exc}") from None
    return config_seed


# -- output helpers ----------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_") or "cell"


# -- running -----------------------------------------------------------------


def execute(run: RunConfig, search: SearchConfig) -> dict:
    """One pipeline run; returns the JSON document plus trace and archive text."""
    spec = run.space.build()
    dataset = run.dataset.build()
    oracle = run.evaluator.build(spec)
    result = run_pipeline(search, dataset, spec, oracle=oracle, config_echo=run.echo())
    return {"doc": result.to_dict(), "trace": result.trace,
            "archive": dump_archive(result.archive), "selected": result.to_dict()["result"]["genotype"]}


def write_run(out: Path, run: dict) -> None:
    write_atomic(out / "result.json", to_json(run["doc"]))
    write_atomic(out / "trace.jsonl",
                 "".join(json.dumps(r, sort_keys=True) + "\n" for r in run["trace"]))
    write_atomic(out / "archive.txt", run["archive"])
    write_atomic(out / "selected.txt", run["selected"])


def cmd_search(args) -> int:
    run = load_run_config(args.config)
    seed = resolve_seed(args.seed, run.search.seed)
    search = replace(run.search, seed=seed)
    try:
        out = execute(run, search)
        write_run(args.out, out)
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"en2as search: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    res = out["doc"]["result"]
    edges = " ".join(f"{s}:{o}" for s, o in res["edges"])
    print(f"seed={seed} selected=[{edges}] val_acc={res['val_accuracy']:.4f} "
          f"test_acc={res['test_accuracy']:.4f} diversity={res['final_diversity']:.4f} "
          f"out={args.out}")
    return EXIT_OK


def _compare_task(task):
    label, repeat, run, search = task
    t0 = time.perf_counter()
    try:
        out = execute(run, search)
        return label, repeat, search, out, None, time.perf_counter() - t0
    except Exception as exc:  # noqa: BLE001 - recorded per run
        return label, repeat, search, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0


def run_plan(plan: Plan, master_seed: int, out_dir: Path, jobs: int = 1) -> tuple[list, list]:
    tasks = [(label, r, plan.base, replace(cfg, seed=master_seed + r))
             for label, cfg in plan.cells for r in range(plan.repeats)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_compare_task, tasks))
    else:
        outcomes = [_compare_task(t) for t in tasks]

    run_rows, curve_rows = [], []
    for label, repeat, search, out, error, elapsed in outcomes:
        row = {"label": label, "controller": search.controller, "selector": search.selector,
               "repeat": repeat, "seed": search.seed, "status": "ok" if error is None else "failed",
               "val_accuracy": "", "test_accuracy": "", "final_diversity": "",
               "runtime_s": f"{elapsed:.3f}", "error": error or ""}
        if out is not None:
            write_run(out_dir / "runs" / _slug(label) / f"seed-{search.seed}", out)
            res = out["doc"]["result"]
            row.update(val_accuracy=repr(res["val_accuracy"]),
                       test_accuracy=repr(res["test_accuracy"]),
                       final_diversity=repr(res["final_diversity"]))
            for series, values in out["doc"]["traces"].items():
                curve_rows.extend({"label": label, "repeat": repeat, "seed": search.seed,
                                   "series": series, "index": i, "value": repr(v)}
                                  for i, v in enumerate(values))
        run_rows.append(row)

    summary = []
    for label, cfg in plan.cells:
        ok = [r for r in run_rows if r["label"] == label and r["status"] == "ok"]
        acc = np.array([float(r["val_accuracy"]) for r in ok])
        div = np.array([float(r["final_diversity"]) for r in ok])
        runtime = sum(float(r["runtime_s"]) for r in run_rows if r["label"] == label)
        summary.append({
            "label": label, "controller": cfg.controller, "selector": cfg.selector,
            "mean_acc": repr(float(acc.mean())) if ok else "nan",
            "std_acc": repr(float(acc.std(ddof=0))) if ok else "nan",
            "mean_diversity": repr(float(div.mean())) if ok else "nan",
            "runtime_s": f"{runtime:.3f}",
        })
    return summary, run_rows, curve_rows


def cmd_compare(args) -> int:
    plan = load_plan(args.plan)
    seed = resolve_seed(args.seed, plan.base.search.seed)
    jobs = args.jobs if args.jobs is not None else plan.jobs
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    try:
        summary, runs, curves = run_plan(plan, seed, args.out, jobs)
        write_atomic(args.out / "summary.csv", _csv_text(SUMMARY_COLUMNS, summary))
        write_atomic(args.out / "runs.csv", _csv_text(RUN_COLUMNS, runs))
        write_atomic(args.out / "curves.csv", _csv_text(CURVE_COLUMNS, curves))
    except Exception as exc:  # noqa: BLE001
        print(f"en2as compare: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    failed_cells = [row["label"] for row in summary if row["mean_acc"] == "nan"]
    for row in summary:
        print(f"{row['label']:<32} acc={row['mean_acc'][:8]:<8} +- {row['std_acc'][:8]:<8} "
              f"diversity={row['mean_diversity'][:8]}")
    for r in runs:
        if r["status"] != "ok":
            print(f"en2as compare: {r['label']} seed {r['seed']} failed: {r['error']}",
                  file=sys.stderr)
    if failed_cells:
        print(f"en2as compare: cells with no successful run: {', '.join(failed_cells)}",
              file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- inspect -----------------------------------------------------------------


def slot_histograms(archive) -> list[tuple[tuple[int, int, int], Counter, Counter]]:
    codes = archive.codes
    return [(slot, Counter(codes[:, 2 * e].tolist()), Counter(codes[:, 2 * e + 1].tolist()))
            for e, slot in enumerate(archive.spec.slots)]


def describe_archive(archive) -> str:
    spec = archive.spec
    lines = [f"archive: {len(archive)}/{archive.capacity} entries, {spec.header()}"]
    if len(archive) == 0:
        return "\n".join(lines)
    d = pairwise_distances(archive.codes, spec)
    off = d[np.triu_indices(len(archive), 1)]
    lines.append(f"mean pairwise distance: {archive.diversity():.6f}")
    if off.size:
        lines.append(f"min/max pairwise distance: {off.min():.6f} {off.max():.6f}")
    genos = Counter(archive.genotypes())
    lines.append(f"distinct genotypes: {len(genos)}")
    lines.append("slot histograms:")
    for (cell, node, slot), src, op in slot_histograms(archive):
        s = " ".join(f"{k}:{v}" for k, v in sorted(src.items()))
        o = " ".join(f"{spec.ops[k]}:{v}" for k, v in sorted(op.items()))
        lines.append(f"  cell {cell} node {node} input {slot} | src {s} | op {o}")
    top, count = genos.most_common(1)[0]
    lines.append(f"most frequent genotype ({count} of {len(archive)}):")
    lines.append(pretty(top))
    return "\n".join(lines)


def describe_result(doc: dict) -> str:
    res = doc["result"]
    ops = doc.get("config", {}).get("resolved", {}).get("space", {}).get("ops")
    text = res["genotype"]
    g = deserialize(text, spec_from_header(text.split("\n", 1)[0], ops))
    return "\n".join([
        f"seed: {doc.get('seed')}",
        f"val accuracy: {res['val_accuracy']:.6f}",
        f"test accuracy: {res['test_accuracy']:.6f}",
        f"final diversity: {res['final_diversity']:.6f}",
        "selected genotype:",
        pretty(g),
    ])


def describe_path(path: Path) -> str:
    if path.is_dir():
        parts = [describe_path(path / name) for name in ("result.json", "archive.txt")
                 if (path / name).exists()]
        if not parts:
            raise UsageError(f"{path}: no result.json or archive.txt inside")
        return "\n\n".join(parts)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None
    head = text.lstrip()
    try:
        if head.startswith("{"):
            return describe_result(json.loads(text))
        if head.startswith("archive"):
            return describe_archive(load_archive(text))
        if head.startswith("cellspec"):
            return pretty(deserialize(text, spec_from_header(text.split("\n", 1)[0])))
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed file: {exc}") from None
    raise UsageError(f"{path}: not an archive, genotype or result file")


def cmd_inspect(args) -> int:
    print(describe_path(args.path))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"search": cmd_search, "compare": cmd_compare, "inspect": cmd_inspect}[args.command]
    try:
        return handler(args)
    except (ConfigError, UsageError, GenotypeFormatError) as exc:
        print(f"en2as {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
