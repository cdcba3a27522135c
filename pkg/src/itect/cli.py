"""Single entry point multiplexing the pipeline's subcommands.

Exit codes: 0 success, 1 usage error, 2 data error. Machine-readable
outputs embed the tool version and the effective configuration; CSV
outputs get a ``<name>.meta.json`` sidecar instead.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, baselines, corpus, ents, forest as forest_mod, pipeline, slamm, synth
from .errors import DataError, ItectError


def _threads(value: str | int | None) -> int:
    if value in (None, "auto"):
        env = os.environ.get("ITECT_THREADS", "auto")
        if env != "auto":
            return max(1, int(env))
        return os.cpu_count() or 1
    return max(1, int(value))


def _pool_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _provenance(args: argparse.Namespace, inputs: list[str | Path]) -> dict:
    digests = {}
    for p in inputs:
        try:
            digests[str(p)] = corpus.file_digest(p)
        except OSError:
            digests[str(p)] = None
    config = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func",) and v is not None
    }
    return {"tool_version": __version__, "config": config, "input_digests": digests}


def _write_json(path: str | Path, payload: dict, args, inputs) -> None:
    payload = dict(payload)
    payload["_provenance"] = _provenance(args, inputs)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_sidecar(path: str | Path, args, inputs) -> None:
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(_provenance(args, inputs), fh, sort_keys=True, indent=1)
        fh.write("\n")


# -- subcommand implementations ---------------------------------------


def _cmd_ingest(args) -> int:
    diags: list[str] = []
    manifest = corpus.scan_directory(args.root, args.label, args.category, diags)
    manifest.save(args.out)
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)
    print(f"wrote {len(manifest)} entries to {args.out}")
    return 0


def _cmd_split(args) -> int:
    manifest = corpus.CorpusManifest.load(args.manifest)
    out = corpus.split_manifest(manifest, args.train, args.seed)
    dest = args.out or args.manifest
    out.save(dest)
    counts = {s: len(out.by_split(s)) for s in corpus.SPLITS}
    print(f"wrote {dest}: {counts}")
    return 0


def _load_split_entries(manifest: corpus.CorpusManifest, split: str | None):
    if split:
        return [e for e in manifest if e.split == split]
    return list(manifest)


def _cmd_ents(args) -> int:
    manifest = corpus.CorpusManifest.load(args.manifest)
    entries = _load_split_entries(manifest, args.split)
    if not entries:
        raise DataError("no manifest entries selected")
    if args.alpha == "auto":
        mal = [e.size_bytes for e in entries if e.label == "malware"]
        ben = [e.size_bytes for e in entries if e.label == "benign"]
        alpha = ents.compute_alpha(mal, ben, args.chunk)
    else:
        alpha = int(args.alpha)
    params = ents.EntsParams(chunk_size=args.chunk, alpha=alpha, tau=args.tau)

    def profile_of(entry):
        data = corpus.load_sample(entry.path)
        return ents.entropy_profile(data, params, source_digest=entry.digest).values

    rows = _pool_map(profile_of, entries, _threads(args.threads))
    matrix = ents.FeatureMatrix(
        rows=np.array(rows),
        col_index=list(range(params.n_points)),
        labels=[e.label for e in entries],
        digests=[e.digest for e in entries],
    )
    ents.write_feature_csv(matrix, args.out)
    _write_sidecar(args.out, args, [args.manifest])
    if args.params_out:
        _write_json(
            args.params_out,
            {"chunk_size": params.chunk_size, "alpha": params.alpha, "tau": params.tau},
            args,
            [args.manifest],
        )
    print(f"wrote {len(entries)} profiles (alpha={alpha}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    matrix = ents.read_feature_csv(args.features)
    pruned = ents.prune_correlated(matrix, cutoff=args.prune_cutoff)
    labels = [1 if l == "malware" else 0 for l in pruned.labels]
    config = forest_mod.ForestConfig(
        trees=args.trees,
        class_weight_fp=args.fpweight,
        max_depth=args.max_depth,
        min_leaf=args.min_leaf,
        seed=args.seed,
    )
    trained = forest_mod.calibrate_zero_fp(
        pruned.rows, labels, config, folds=args.folds, feature_cols=pruned.col_index
    )
    trained.save(args.out)
    _write_sidecar(args.out, args, [args.features])
    print(
        f"trained {config.trees} trees on {pruned.rows.shape[0]} rows, "
        f"{len(pruned.col_index)} retained dims, cutoff={trained.cutoff:.4f}"
    )
    return 0


def _zoo_documents(manifest, category: str, split: str | None):
    if category == "benign":
        entries = [e for e in manifest if e.label == "benign"]
    else:
        entries = [
            e for e in manifest if e.label == "malware" and e.category == category
        ]
    if split:
        entries = [e for e in entries if e.split == split]
    return entries


def _cmd_slamm_train(args) -> int:
    manifest = corpus.CorpusManifest.load(args.manifest)
    entries = _zoo_documents(manifest, args.category, args.split)
    if not entries:
        raise DataError(f"no entries for category {args.category!r}")
    diags: list[str] = []
    model = slamm.NgramModel.train(
        (corpus.load_sample(e.path) for e in entries),
        n=args.n,
        zoo_id=args.category,
        diagnostics=diags,
    )
    model.save(args.out)
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)
    print(f"trained {args.n}-gram model over {len(entries)} files -> {args.out}")
    return 0


def _load_slamm_models(model_paths: str, benign_path: str):
    malware = []
    for p in model_paths.split(","):
        m = slamm.NgramModel.load(p.strip())
        malware.append((m, m.histogram()))
    b = slamm.NgramModel.load(benign_path)
    return malware, (b, b.histogram())


def _cmd_slamm_classify(args) -> int:
    malware, benign = _load_slamm_models(args.models, args.benign)
    for path in args.files:
        data = corpus.load_sample(path)
        v = slamm.slamm_classify(data, malware, benign)
        print(
            json.dumps(
                {
                    "path": str(path),
                    "cx": v.cx,
                    "cd": v.cd,
                    "cmse": v.cmse,
                    "overall": v.overall,
                },
                sort_keys=True,
            )
        )
    return 0


def _cmd_baseline(args) -> int:
    spec = baselines.CompressorSpec(algorithm_id=args.compressor, level=args.level)
    manifest = corpus.CorpusManifest.load(args.manifest)
    entries = list(manifest)
    if args.metric == "cr":
        rows = [
            [baselines.compression_rate(corpus.load_sample(e.path), spec)]
            for e in entries
        ]
        matrix = ents.FeatureMatrix(
            rows=np.array(rows),
            col_index=[0],
            labels=[e.label for e in entries],
            digests=[e.digest for e in entries],
        )
    else:
        if not args.train:
            raise DataError("ncd baseline requires --train manifest")
        train_entries = list(corpus.CorpusManifest.load(args.train))
        matrix = baselines.similarity_rows(
            [corpus.load_sample(e.path) for e in entries],
            [corpus.load_sample(e.path) for e in train_entries],
            spec,
            test_digests=[e.digest for e in entries],
            test_labels=[e.label for e in entries],
        )
    ents.write_feature_csv(matrix, args.out)
    _write_sidecar(args.out, args, [args.manifest])
    print(f"wrote {matrix.rows.shape} {args.metric} features to {args.out}")
    return 0


def _cmd_classify(args) -> int:
    trained = forest_mod.TrainedForest.load(args.ents)
    with open(args.ents_params, "r", encoding="utf-8") as fh:
        p = json.load(fh)
    params = ents.EntsParams(
        chunk_size=p["chunk_size"], alpha=p["alpha"], tau=p["tau"]
    )
    malware, benign = _load_slamm_models(args.slamm, args.benign)
    t0 = time.perf_counter()
    lines = []
    for path in args.files:
        try:
            data = corpus.load_sample(path)
        except (OSError, DataError) as exc:
            print(f"diagnostic: {path}: {exc}", file=sys.stderr)
            continue
        digest = hashlib.sha256(data).hexdigest()
        v = pipeline.itect_classify(data, digest, trained, params, malware, benign)
        lines.append(v.to_json())
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    print(
        f"classified {len(lines)} files in {time.perf_counter() - t0:.2f}s -> {args.out}"
    )
    return 0


def _read_verdicts(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [pipeline.Verdict.from_json(line) for line in fh if line.strip()]


def _cmd_eval(args) -> int:
    verdicts = _read_verdicts(args.verdicts)
    manifest = corpus.CorpusManifest.load(args.manifest)
    labels = {e.digest: e.label for e in manifest}
    categories = {e.digest: e.category for e in manifest}
    report = pipeline.evaluate(verdicts, labels, categories)
    _write_json(args.out, report.to_dict(), args, [args.verdicts, args.manifest])
    print(
        f"accuracy={report.accuracy:.4f} precision={report.precision:.4f} "
        f"fp={report.fp} fn={report.fn}"
    )
    return 0


def _cmd_sweep(args) -> int:
    verdicts = _read_verdicts(args.verdicts)
    manifest = corpus.CorpusManifest.load(args.manifest)
    labels = {e.digest: e.label for e in manifest}
    benign = [v for v in verdicts if labels.get(v.digest) == "benign"]
    malware = [v for v in verdicts if labels.get(v.digest) == "malware"]
    fractions = [float(f) for f in args.fractions.split(",")]
    reports = pipeline.prevalence_sweep(
        benign, malware, labels, fractions, seed=args.seed
    )
    payload = {
        "points": [
            {"malware_fraction": f, **r.to_dict()}
            for f, r in zip(fractions, reports)
        ]
    }
    _write_json(args.out, payload, args, [args.verdicts, args.manifest])
    print(f"wrote {len(reports)} prevalence points to {args.out}")
    return 0


def _cmd_synth(args) -> int:
    manifest = synth.synth_corpus(
        args.profile,
        args.count,
        (args.size_min, args.size_max),
        args.seed,
        args.out,
    )
    if args.manifest_out:
        manifest.save(args.manifest_out)
    print(f"wrote {len(manifest)} {args.profile} files under {args.out}")
    return 0


def _cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    params = ents.EntsParams(chunk_size=256, alpha=5, tau=0.5)
    results = []
    for n in sizes:
        rng = np.random.default_rng([args.seed, n])
        datas = [rng.integers(0, 256, size=4096).astype(np.uint8).tobytes() for _ in range(n)]
        t0 = time.perf_counter()
        for d in datas:
            ents.entropy_profile(d, params)
        results.append({"files": n, "profile_seconds": time.perf_counter() - t0})
    _write_json(args.out, {"results": results}, args, [])
    print(json.dumps(results))
    return 0


# -- parser ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="itect", description=__doc__)
    parser.add_argument("--version", action="version", version=f"itect {__version__}")
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--threads", default=None, help="worker pool size or 'auto'")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a directory into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--label", required=True, choices=corpus.LABELS)
    p.add_argument("--category", required=True, choices=corpus.CATEGORIES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="assign stratified train/validation/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train", type=float, default=2 / 3)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("ents", help="compute entropy-profile features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--alpha", default="auto")
    p.add_argument("--chunk", type=int, default=256)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--split", default=None, choices=corpus.SPLITS)
    p.add_argument("--out", required=True)
    p.add_argument("--params-out")
    p.set_defaults(func=_cmd_ents)

    p = sub.add_parser("train", help="train + calibrate the feature forest")
    p.add_argument("--features", required=True)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--fpweight", type=float, default=5.0)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--prune-cutoff", type=float, default=0.8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("slamm-train", help="train an n-gram zoo model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--category", required=True, choices=corpus.CATEGORIES)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--split", default=None, choices=corpus.SPLITS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_slamm_train)

    p = sub.add_parser("slamm-classify", help="classify files with zoo models")
    p.add_argument("--models", required=True, help="comma-separated malware models")
    p.add_argument("--benign", required=True)
    p.add_argument("files", nargs="+")
    p.set_defaults(func=_cmd_slamm_classify)

    p = sub.add_parser("baseline", help="compression-rate or NCD features")
    p.add_argument("metric", choices=("cr", "ncd"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--train", help="train manifest for NCD columns")
    p.add_argument("--compressor", default="lzma2", choices=("lzma2", "zlib"))
    p.add_argument("--level", type=int, default=9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("classify", help="run both detectors, OR the verdicts")
    p.add_argument("--ents", required=True, help="trained forest file")
    p.add_argument("--ents-params", required=True)
    p.add_argument("--slamm", required=True, help="comma-separated malware models")
    p.add_argument("--benign", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("files", nargs="+")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("eval", help="score verdicts against a labeled manifest")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="evaluate at varying malware prevalence")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--fractions", default="0,0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--profile", required=True, choices=synth.PROFILES)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size-min", type=int, default=65536)
    p.add_argument("--size-max", type=int, default=131072)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest-out")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("bench", help="time profile extraction at several scales")
    p.add_argument("--sizes", default="100,200,400")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bench)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    # Pull --config early so its values become parser defaults; explicit
    # flags still win because argparse reads them after defaults.
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = argv[i + 1]
    with open(path, "r", encoding="utf-8") as fh:
        values = json.load(fh)
    defaults = {k.replace("-", "_"): v for k, v in values.items()}
    for sub in parser._subparsers._group_actions[0].choices.values():  # type: ignore[union-attr]
        sub.set_defaults(**defaults)
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
    return argv


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"itect: usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --version / --help
        return 0 if exc.code in (0, None) else 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"itect: config error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (DataError, ItectError) as exc:
        print(f"itect: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"itect: i/o error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
