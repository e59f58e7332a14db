"""``specbench`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 a theory check failed. Errors print one JSON line on stdout and the
details on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    RANGES,
    BenchError,
    ResultsStore,
    accuracy_curve,
    derive_seed,
    normalized_auac,
    rank_models,
    run_benchmark,
    run_frequency_recovery,
    store_header,
)
from .config import OUTPUT_ENV, ConfigError, load_config, load_graph
from .graph import generate_graph, load_edge_list
from .models import PRELIM_LAYERS, PRELIM_TRAIN
from .report import auac_csv, curves_csv, ranking_csv, render_curves, render_energy
from .spectral import bin_eigenvectors, frequency_thirds, graph_basis, save_basis
from .tasks import make_classification_task, make_regression_task, task_manifest
from .theory import lipschitz_gap, theory_report


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(arg, cfg=None) -> Path:
    env = os.environ.get(OUTPUT_ENV)
    if env:
        d = Path(env)
    elif arg:
        d = Path(arg)
    elif cfg is not None:
        d = cfg.resolved_output_dir()
    else:
        d = Path("specbench-out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load(args, **sections):
    return load_config(args.config, overrides=sections)


# --- subcommands -------------------------------------------------------------------

def cmd_decompose(args) -> int:
    if args.config:
        cfg = _load(args)
        specs, base, width = cfg.datasets, cfg.base_dir, cfg.protocol.bin_width
    elif args.edges:
        specs = [{"name": args.name or Path(args.edges).stem, "edges": str(Path(args.edges).resolve())}]
        base, width = ".", 0.1
    else:
        raise UsageError("decompose needs --config or --edges")
    if args.bin_width:
        width = args.bin_width
    out = _out_dir(args.out)
    summary = []
    for spec in specs:
        g = load_graph(spec, base)
        basis = graph_basis(g)
        save_basis(basis, g, out / f"{spec['name']}.basis.npz")
        if "edges" in spec:
            _, remap = load_edge_list(Path(base) / spec["edges"])
            remap.write_csv(out / f"{spec['name']}.remap.csv")
        bins = bin_eigenvectors(basis, width)
        info = {
            "dataset": spec["name"],
            "n": g.n,
            "edges": g.num_edges,
            "graph_hash": g.fingerprint(include_features=False),
            "bin_width": width,
            "bin_counts": bins.counts.tolist(),
            "ranges": frequency_thirds(bins).as_dict() if bins.nonempty().size >= 3 else None,
            "eigenvalues": basis.eigenvalues.tolist(),
            "tool_version": __version__,
        }
        _write_json(out / f"{spec['name']}.spectrum.json", info)
        summary.append({k: info[k] for k in ("dataset", "n", "edges", "bin_counts")})
    _emit({"status": "ok", "command": "decompose", "datasets": summary})
    return 0


def cmd_synth(args) -> int:
    cfg = _load(args)
    out = _out_dir(args.out, cfg) / "tasks"
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.protocol
    written = []
    for ds in cfg.load_datasets():
        manifests = []
        for b in ds.bins.nonempty():
            for run in range(p.runs):
                t = make_classification_task(
                    ds.graph, ds.bins, int(b), p.num_classes, derive_seed(p.base_seed, "split", int(b), run),
                    p.mode, p.fractions,
                )
                manifests.append({"run": run, **task_manifest(t, ds.graph)})
        if ds.ranges is not None:
            for inp, tgt in ((("low",), "high"), (("high",), "low")):
                t = make_regression_task(ds.bins, ds.ranges, inp, tgt, derive_seed(p.base_seed, "split"))
                manifests.append(task_manifest(t, ds.graph))
        doc = {"dataset": ds.name, "config_hash": cfg.digest(), "tool_version": __version__,
               "tasks": manifests}
        _write_json(out / f"{ds.name}.json", doc)
        written.append(str(out / f"{ds.name}.json"))
    _emit({"status": "ok", "command": "synth", "files": written})
    return 0


def cmd_bench(args) -> int:
    cfg = _load(
        args,
        protocol={"runs": args.runs, "base_seed": args.seed},
        train={"epochs": args.epochs, "layers": args.layers},
    )
    if args.models:
        cfg = replace(cfg, models=tuple(args.models.split(",")))
    workers = args.workers or cfg.workers
    out = _out_dir(args.out, cfg)
    datasets = cfg.load_datasets()
    store = ResultsStore(out / "results.jsonl")
    store.create(store_header(cfg.protocol, datasets, cfg.models, {"run_config_hash": cfg.digest()}))
    records = run_benchmark(datasets, cfg.models, cfg.protocol, workers, on_record=store.append)
    failed = sum(1 for r in records if any(f.startswith("failed") for f in r["flags"]))
    _emit({"status": "ok", "command": "bench", "store": str(store.path), "records": len(records),
           "failed": failed})
    return 0


def cmd_recover(args) -> int:
    cfg = _load(args)
    out = _out_dir(args.out, cfg)
    tc = PRELIM_TRAIN if args.epochs is None else replace(PRELIM_TRAIN, epochs=args.epochs)
    directions = ["low->high", "high->low"] if args.direction == "both" else [args.direction]
    results = []
    for ds in cfg.load_datasets():
        for d in directions:
            comp = run_frequency_recovery(ds.graph, args.model, d, tc, PRELIM_LAYERS, seed=args.seed, dataset=ds)
            stem = f"recover_{ds.name}_{d.replace('->', '-')}"
            doc = {**comp.to_json(), "tool_version": __version__, "config_hash": cfg.digest()}
            _write_json(out / f"{stem}.json", doc)
            (out / f"{stem}.svg").write_text(render_energy(comp, {"config_hash": cfg.digest()}))
            target = "high" if d == "low->high" else "low"
            results.append({"dataset": ds.name, "direction": d,
                            "output_mass_in_target": comp.range_mass("output", target)})
    _emit({"status": "ok", "command": "recover", "results": results})
    return 0


def cmd_theory(args) -> int:
    n, k = args.n, args.k
    if args.graph == "path":
        g = generate_graph("path", {"n": n})
    elif args.graph == "cycle":
        g = generate_graph("cycle", {"n": n})
    else:
        g, _ = load_edge_list(args.graph)
        if g.n != n:
            raise UsageError(f"graph has {g.n} nodes but --n is {n}")
    basis = graph_basis(g)
    report = theory_report(n, k, basis, args.samples, args.seed)
    rng = np.random.default_rng(derive_seed(args.seed, "lipschitz"))
    a = rng.normal(size=(args.pairs, n))
    b = rng.normal(size=(args.pairs, n))
    violations = 0
    for v1, v2 in zip(a / np.linalg.norm(a, axis=1, keepdims=True), b / np.linalg.norm(b, axis=1, keepdims=True)):
        lhs, rhs = lipschitz_gap(v1, v2, basis)
        violations += lhs > rhs
    report.update(lipschitz_pairs=args.pairs, lipschitz_violations=int(violations),
                  graph=args.graph, tool_version=__version__)
    if args.out:
        _write_json(_out_dir(args.out) / f"theory_n{n}_k{k}.json", report)
    _emit(report)
    if not (report["holds_paper_bound"] and report["holds_euclidean_bound"]) or violations:
        raise CheckFailed(f"theory check failed for n={n}, k={k}")
    return 0


def cmd_report(args) -> int:
    header, records = ResultsStore(args.results).read()
    if not records:
        raise BenchError(f"{args.results}: no records")
    out = _out_dir(args.out)
    keys = []
    for r in records:
        key = (r["dataset"], r["model"], r.get("layers"))
        if key not in keys:
            keys.append(key)
    curves, skipped = [], []
    for d, m, layers in keys:
        try:
            curves.append(accuracy_curve(records, m, d, layers=layers))
        except BenchError as exc:
            skipped.append(str(exc))
    if not curves:
        raise BenchError("no valid curves in results store")
    scores, rankings = [], {}
    for rng in RANGES:
        rs = []
        for c in curves:
            try:
                rs.append(normalized_auac(c, rng))
            except BenchError:
                pass
        scores += rs
        if rs and len({s.dataset for s in rs}) * len({s.model for s in rs}) == len(rs):
            rankings[rng] = rank_models(rs)
    meta = {"config_hash": header.get("config_hash"), "tool_version": __version__}
    (out / "curves.csv").write_text(curves_csv(curves))
    (out / "auac.csv").write_text(auac_csv(scores))
    parts = [ranking_csv(t, r).splitlines(keepends=True) for r, t in rankings.items()]
    (out / "ranking.csv").write_text("".join(parts[0] + [ln for p in parts[1:] for ln in p[1:]]) if parts else "")
    _write_json(out / "ranking.json", {
        r: {"order": t.order(), "avg_rank": t.avg_rank, "std_rank": t.std_rank, "ranks": t.ranks}
        for r, t in rankings.items()
    })
    (out / "curves.svg").write_text(render_curves(curves, args.layout, meta=meta))
    _write_json(out / "report.json", {**meta, "schema_version": header.get("schema_version"),
                                      "curves": len(curves), "skipped": skipped})
    _emit({"status": "ok", "command": "report", "curves": len(curves), "scores": len(scores),
           "out": str(out)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="specbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"specbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("decompose", help="eigendecompose graphs and cache the bases")
    d.add_argument("--config")
    d.add_argument("--edges")
    d.add_argument("--name")
    d.add_argument("--bin-width", type=float)
    d.add_argument("--out")
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("synth", help="write task manifests for every bin")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="run the per-bin benchmark sweep")
    b.add_argument("--config", required=True)
    b.add_argument("--models", help="comma-separated model kinds")
    b.add_argument("--runs", type=int)
    b.add_argument("--epochs", type=int)
    b.add_argument("--layers", type=int)
    b.add_argument("--seed", type=int, help="base seed")
    b.add_argument("--workers", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("recover", help="frequency-recovery regression experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--model", default="gcn")
    r.add_argument("--direction", choices=["low->high", "high->low", "both"], default="both")
    r.add_argument("--epochs", type=int)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_recover)

    t = sub.add_parser("theory", help="check the discretization bounds by sampling")
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--k", type=int, required=True)
    t.add_argument("--samples", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--pairs", type=int, default=10000)
    t.add_argument("--graph", default="path", help="path, cycle, or an edge-list file with n nodes")
    t.add_argument("--out")
    t.set_defaults(func=cmd_theory)

    rp = sub.add_parser("report", help="curves, AUAC, rankings and plots from a results store")
    rp.add_argument("--results", required=True)
    rp.add_argument("--layout", choices=["panels", "overlay"], default="panels")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return p


def _fail(code: int, kind: str, exc: BaseException) -> int:
    msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
    _emit({"status": "error", "code": code, "kind": kind, "error": msg})
    print(f"specbench: {kind}: {exc}", file=sys.stderr)
    if code == 2 and not isinstance(exc, (ValueError, OSError)):
        traceback.print_exc(file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(1, "usage", exc)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(1, "usage", exc)
    except CheckFailed as exc:
        return _fail(3, "check", exc)
    except Exception as exc:
        return _fail(2, "runtime", exc)


if __name__ == "__main__":
    sys.exit(main())
