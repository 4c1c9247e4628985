"""Command-line entry point wiring the pipeline end to end:

    synth -> partition -> train-blackbox -> serve -> approximate -> compare -> report

plus standalone render/augment helpers.  Exit codes: 0 success, 2 usage,
3 runtime failure.  Flag values win over config-file values, which win
over defaults; every artifact-writing command echoes its resolved config
into a manifest.json for provenance and replay.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import approx, augment, corpus, features, models, oracle, render, similarity
from .corpus import BinarySample
from .models import ModelKind
from .render import RenderConfig, RenderMode

USAGE_EXIT = 2
RUNTIME_EXIT = 3


def _parse_config_file(path: str | None) -> dict[str, str]:
    """Flat TOML-style key = value lines; '#' starts a comment."""
    if not path:
        return {}
    values: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {raw!r} is not key = value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip().strip("\"'")
    return values


def _resolve(args: argparse.Namespace, options: dict) -> dict:
    """Merge precedence: command-line flag > config file > default."""
    file_cfg = _parse_config_file(getattr(args, "config", None))
    resolved = {}
    for key, (default, coerce) in options.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_cfg:
            resolved[key] = coerce(file_cfg[key])
        else:
            resolved[key] = default
    return resolved


def _fractions(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _write_manifest(out_dir: Path, command: str, config: dict, artifacts: dict[str, str]) -> None:
    manifest = {
        "command": command,
        "config": {k: _jsonable(v) for k, v in config.items()},
        "artifacts": artifacts,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))


def _load_partition_file(path: str):
    manifest = json.loads(Path(path).read_text())
    return corpus.partition_from_manifest(manifest)


def _corpus_index(path: str) -> dict[str, BinarySample]:
    return corpus.samples_by_id(corpus.load_directory(path))


def _render_config(cfg: dict) -> RenderConfig:
    return RenderConfig(
        mode=RenderMode(cfg["mode"]),
        order=cfg["order"],
        entropy_window=cfg["window"],
    )


# -- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _resolve(
        args,
        {
            "benign": (500, int),
            "malware": (500, int),
            "min_size": (4096, int),
            "max_size": (16384, int),
        },
    )
    cfg["seed"] = args.seed
    out = Path(args.out)
    samples = corpus.synth_corpus(
        args.seed, cfg["benign"], cfg["malware"], (cfg["min_size"], cfg["max_size"])
    )
    corpus.save_directory(samples, out / "samples")
    rollup = hashlib.sha256(
        "".join(sorted(s.id for s in samples)).encode()
    ).hexdigest()
    _write_manifest(
        out,
        "synth",
        cfg,
        {
            "samples/": rollup,
            "samples/labels.csv": _sha256_file(out / "samples" / "labels.csv"),
        },
    )
    print(f"wrote {len(samples)} samples to {out / 'samples'}")
    return 0


def cmd_partition(args) -> int:
    cfg = _resolve(args, {"ratios": ((0.6, 0.25, 0.15), _fractions)})
    cfg.update({"seed": args.seed, "corpus": args.corpus})
    samples = corpus.load_directory(Path(args.corpus))
    part = corpus.partition(samples, tuple(cfg["ratios"]), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = corpus.partition_manifest(part, tuple(cfg["ratios"]), args.seed)
    (out / "partition.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    _write_manifest(
        out, "partition", cfg, {"partition.json": _sha256_file(out / "partition.json")}
    )
    print(
        f"partitioned {len(samples)} samples into "
        f"{len(part.blackbox_train)}/{len(part.substitute_pool)}/{len(part.comparison)}"
    )
    return 0


def cmd_render(args) -> int:
    cfg = _resolve(
        args, {"mode": ("ch", str), "order": (9, int), "window": (65, int)}
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    render_cfg = _render_config(cfg)
    artifacts = {}
    for input_path in args.inputs:
        path = Path(input_path)
        sample = BinarySample.from_bytes(path.read_bytes())
        image = render.render(sample, render_cfg)
        png = out / f"{path.stem}.{cfg['mode']}.png"
        render.to_png(image, png)
        artifacts[png.name] = _sha256_file(png)
    _write_manifest(out, "render", cfg, artifacts)
    print(f"rendered {len(artifacts)} images to {out}")
    return 0


def cmd_train_blackbox(args) -> int:
    cfg = _resolve(
        args,
        {
            "kind": ("logreg", str),
            "holdout": (0.2, float),
            "epochs": (50, int),
            "lr": (1.0, float),  # byte-frequency features want a big step
            "buckets": (features.DEFAULT_BIGRAM_BUCKETS, int),
        },
    )
    cfg.update({"seed": args.seed, "corpus": args.corpus, "partition": args.partition})
    by_id = _corpus_index(args.corpus)
    part = _load_partition_file(args.partition)
    train_ids = sorted(part.blackbox_train)
    missing = [i for i in train_ids if i not in by_id]
    if missing:
        raise ValueError(f"{len(missing)} partition ids missing from corpus")
    labeled = []
    for sample_id in train_ids:
        sample = by_id[sample_id]
        if sample.ground_truth is None:
            raise ValueError(f"sample {sample_id[:12]} has no ground-truth label")
        labeled.append((features.blackbox_features(sample, cfg["buckets"]), sample.ground_truth))
    # model owner's own holdout, carved inside X
    fit_idx, val_idx = approx.holdout_split(
        list(range(len(labeled))), cfg["holdout"], args.seed
    )
    fit = [labeled[i] for i in fit_idx]
    val = [labeled[i] for i in val_idx]
    if cfg["kind"] == "logreg":
        model = models.train_logreg(
            fit,
            models.TrainConfig(
                seed=args.seed, epochs=cfg["epochs"], learning_rate=cfg["lr"]
            ),
        )
    elif cfg["kind"] == "forest":
        model = models.train_forest(fit, seed=args.seed)
    else:
        raise ValueError(f"unsupported black-box kind {cfg['kind']!r}")
    report = models.evaluate(model, val)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models.save_model(model, out / "model.json")
    metrics = {
        "holdout_accuracy": report.accuracy,
        "per_class_accuracy": {k.value: v for k, v in report.per_class_accuracy.items()},
        "n_holdout": report.n,
        "n_train": len(fit),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2))
    _write_manifest(
        out,
        "train-blackbox",
        cfg,
        {
            "model.json": _sha256_file(out / "model.json"),
            "metrics.json": _sha256_file(out / "metrics.json"),
        },
    )
    print(f"black-box holdout accuracy: {report.accuracy:.4f}")
    return 0


def cmd_serve(args) -> int:
    cfg = _resolve(
        args,
        {
            "bind": ("127.0.0.1:8080", str),
            "limit": (None, int),
            "log": (None, str),
        },
    )
    server = oracle.serve(
        oracle.OracleConfig(
            model_path=args.model,
            bind_address=cfg["bind"],
            query_limit=cfg["limit"],
            log_path=cfg["log"],
        )
    )
    print(f"serving {args.model} on {server.endpoint}", flush=True)
    try:
        server.wait()
    except KeyboardInterrupt:
        print("shutting down")
        server.stop()
    return 0


def cmd_approximate(args) -> int:
    cfg = _resolve(
        args,
        {
            "substitute": ("knn", str),
            "mode": ("ch", str),
            "order": (9, int),
            "window": (65, int),
            "grid": (features.DEFAULT_GRID, int),
            "fractions": (approx.DEFAULT_BATCH_FRACTIONS, _fractions),
            "acc_threshold": (0.90, float),
            "sim_threshold": (0.85, float),
            "val_fraction": (0.2, float),
        },
    )
    cfg.update(
        {
            "seed": args.seed,
            "corpus": args.corpus,
            "partition": args.partition,
            "oracle": args.oracle,
        }
    )
    part = _load_partition_file(args.partition)
    by_id = _corpus_index(args.corpus)
    approx_cfg = approx.ApproxConfig(
        batch_fractions=tuple(cfg["fractions"]),
        accuracy_threshold=cfg["acc_threshold"],
        similarity_threshold=cfg["sim_threshold"],
        validation_fraction=cfg["val_fraction"],
        substitute_kind=ModelKind(cfg["substitute"]),
        render_config=_render_config(cfg),
        grid=cfg["grid"],
        seed=args.seed,
    )
    client = oracle.OracleClient(args.oracle)
    model, trace = approx.progressive_approximate(part, approx_cfg, client, by_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models.save_model(model, out / "substitute.json")
    trace.save(out / "trace.json")
    _write_manifest(
        out,
        "approximate",
        cfg,
        {
            "substitute.json": _sha256_file(out / "substitute.json"),
            "trace.json": _sha256_file(out / "trace.json"),
        },
    )
    last = trace.records[-1]
    print(
        f"stopped ({trace.stop_reason.value}) after batch {last.batch_index}: "
        f"val_acc={last.validation_accuracy:.4f} similarity={last.similarity:.4f} "
        f"queries={last.queries_used}"
    )
    return 0


def cmd_compare(args) -> int:
    cfg = _resolve(
        args,
        {
            "mode": ("ch", str),
            "order": (9, int),
            "window": (65, int),
            "grid": (features.DEFAULT_GRID, int),
        },
    )
    cfg.update(
        {
            "corpus": args.corpus,
            "partition": args.partition,
            "oracle": args.oracle,
            "substitute": args.substitute,
        }
    )
    part = _load_partition_file(args.partition)
    by_id = _corpus_index(args.corpus)
    substitute = models.load_model(args.substitute)
    comparison = [by_id[i] for i in sorted(part.comparison)]
    client = oracle.OracleClient(args.oracle)
    report = similarity.compare_models(
        client,
        substitute,
        comparison,
        partition=part,
        render_config=_render_config(cfg),
        grid=cfg["grid"],
    )
    payload = {"report": report.to_dict(), "config": {k: _jsonable(v) for k, v in cfg.items()}}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, sort_keys=True, indent=2))
    print(f"similarity={report.similarity:.4f} over {report.n} comparison samples")
    return 0


def cmd_augment(args) -> int:
    arm = augment.AugmentArm(args.arm)
    in_dir, out = Path(args.in_dir), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pngs = sorted(in_dir.glob("*.png"))
    if not pngs:
        raise augment.EmptyInputError(f"no .png files in {in_dir}")
    artifacts = {}
    transforms = {"flip": augment.flip, "rotate": augment.rotate90}
    selected = ["flip"] if arm is augment.AugmentArm.FLIP else (
        ["rotate"] if arm is augment.AugmentArm.ROTATE else ["flip", "rotate"]
    )
    for png in pngs:
        image = render.from_png(png, source_id=png.stem)
        render.to_png(image, out / png.name)
        artifacts[png.name] = _sha256_file(out / png.name)
        for name in selected:
            variant = transforms[name](image)
            target = out / f"{png.stem}.{name}.png"
            render.to_png(variant, target)
            artifacts[target.name] = _sha256_file(target)
    _write_manifest(out, "augment", {"arm": args.arm, "in": str(in_dir)}, artifacts)
    print(f"wrote {len(artifacts)} images to {out}")
    return 0


def cmd_report(args) -> int:
    """Markdown summary comparing substitute runs, one table row per input."""
    rows = []
    for input_path in args.inputs:
        payload = json.loads(Path(input_path).read_text())
        if "report" in payload:  # compare output
            reports = [payload["report"]]
            trace = None
        else:  # emit_report bundle
            reports = payload.get("reports", [])
            trace = payload.get("trace")
        for rep in reports:
            val_acc = trace["records"][-1]["validation_accuracy"] if trace else None
            per = rep.get("per_class", {})
            rows.append(
                {
                    "substitute": rep.get("substitute_descriptor") or Path(input_path).stem,
                    "val_acc": val_acc,
                    "similarity": rep["similarity"],
                    "benign": (per.get("benign") or {}).get("fraction"),
                    "malware": (per.get("malware") or {}).get("fraction"),
                }
            )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def fmt(x, pct=False):
        if x is None:
            return "-"
        return f"{100 * x:.2f}%" if pct else f"{x:.2f}"

    lines = [
        "# Substitute comparison",
        "",
        "| Substitute | Validation accuracy | Similarity | Benign split | Malware split |",
        "|---|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row['substitute']} | {fmt(row['val_acc'])} | "
            f"{fmt(row['similarity'], pct=True)} | {fmt(row['benign'], pct=True)} | "
            f"{fmt(row['malware'], pct=True)} |"
        )
    (out / "report.md").write_text("\n".join(lines) + "\n")
    _write_manifest(
        out,
        "report",
        {"inputs": [str(p) for p in args.inputs]},
        {"report.md": _sha256_file(out / "report.md")},
    )
    print(f"wrote comparison of {len(rows)} runs to {out / 'report.md'}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="approxlab",
        description="black-box classifier approximation workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, config=True):
        if seed:
            p.add_argument("--seed", type=int, required=True, help="RNG seed (required)")
        if config:
            p.add_argument("--config", help="key = value config file")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p, seed=True)
    p.add_argument("--benign", type=int)
    p.add_argument("--malware", type=int)
    p.add_argument("--min-size", dest="min_size", type=int)
    p.add_argument("--max-size", dest="max_size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("partition", help="split a corpus into X / X' / X''")
    common(p, seed=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratios", type=_fractions)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("render", help="render binaries to PNG canvases")
    common(p)
    p.add_argument("--mode", choices=["ch", "en"])
    p.add_argument("--order", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train-blackbox", help="train the byte-feature target model")
    common(p, seed=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--kind", choices=["logreg", "forest"])
    p.add_argument("--holdout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--buckets", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_blackbox)

    p = sub.add_parser("serve", help="serve a model behind the prediction API")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--bind")
    p.add_argument("--limit", type=int)
    p.add_argument("--log")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("approximate", help="run the progressive approximation loop")
    common(p, seed=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--oracle", required=True, help="oracle endpoint URL")
    p.add_argument("--substitute", choices=[k.value for k in ModelKind])
    p.add_argument("--mode", choices=["ch", "en"])
    p.add_argument("--order", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--fractions", type=_fractions)
    p.add_argument("--acc-threshold", dest="acc_threshold", type=float)
    p.add_argument("--sim-threshold", dest="sim_threshold", type=float)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("compare", help="measure black-box/substitute agreement")
    common(p)
    p.add_argument("--oracle", required=True)
    p.add_argument("--substitute", required=True, help="substitute model file")
    p.add_argument("--partition", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=["ch", "en"])
    p.add_argument("--order", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("augment", help="expand rendered images by flip/rotation")
    common(p, config=False)
    p.add_argument("--arm", choices=[a.value for a in augment.AugmentArm], required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("report", help="Markdown summary across substitute runs")
    common(p, config=False)
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # diagnostics on stderr, exit 3
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
