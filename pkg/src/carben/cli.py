"""Command-line entry point: train, attack, perturb, bench, serve.

Dataset specifiers: `synth:<seed>:<n>` (synthetic shape dataset) or
`cifar:<path>` (CIFAR-10 binary batch file).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import classifier, evaluation, imaging, transforms
from .attack import AttackConfig, adversarial_batch_perturb, order_search
from .classifier import LabeledDataset
from .evaluation import ThreatSpec, leaderboard_load, leaderboard_rank, leaderboard_save, render_entries, render_report
from .transforms import KIND_NAMES, Kind, ParamBounds

CONFIG_KEYS = {"enabled", "epsilon", "steps", "step_fraction", "sweeps", "early_stop", "seed", "bounds"}


def parse_dataset(spec: str) -> LabeledDataset:
    parts = spec.split(":")
    if parts[0] == "synth" and len(parts) == 3:
        return classifier.synth_shapes(int(parts[1]), int(parts[2]))
    if parts[0] == "cifar" and len(parts) == 2:
        return classifier.load_cifar10(parts[1])
    raise ValueError(f"bad dataset specifier {spec!r}; use synth:<seed>:<n> or cifar:<path>")


def parse_kind(name: str) -> Kind:
    kind = KIND_NAMES.get(name.lower())
    if kind is None:
        raise ValueError(f"unknown kind {name!r}; valid kinds: {', '.join(sorted(KIND_NAMES))}")
    return kind


def load_attack_config(path: str | None) -> AttackConfig:
    if path is None:
        return AttackConfig()
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    if "enabled" in doc:
        kwargs["enabled"] = tuple(parse_kind(n) for n in doc["enabled"])
    if "bounds" in doc:
        bounds = dict(transforms.DEFAULT_BOUNDS)
        for name, (lo, hi) in doc["bounds"].items():
            kind = parse_kind(name)
            identity = transforms.DEFAULT_BOUNDS[kind].identity
            bounds[kind] = ParamBounds(kind, float(lo), float(hi), identity)
        kwargs["bounds"] = bounds
    for key in ("epsilon", "step_fraction"):
        if key in doc:
            kwargs[key] = float(doc[key])
    for key in ("steps", "sweeps", "seed"):
        if key in doc:
            kwargs[key] = int(doc[key])
    if "early_stop" in doc:
        kwargs["early_stop"] = bool(doc["early_stop"])
    return AttackConfig(**kwargs)


def parse_chain(text: str):
    """Parse `brightness=0.2,contrast=1.3` into a transform chain."""
    chain = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"bad chain element {part!r}; expected kind=value")
        name, value = part.split("=", 1)
        kind = parse_kind(name.strip())
        if kind is Kind.LINF:
            raise ValueError("linf requires an optimized tensor; use the attack command")
        chain.append((kind, float(value)))
    return chain


def cmd_train(args) -> int:
    dataset = parse_dataset(args.dataset)
    batch_perturb = adversarial_batch_perturb() if args.adversarial else None
    weights = classifier.train(
        dataset, args.epochs, args.lr, args.momentum, args.batch_size, args.seed, batch_perturb=batch_perturb
    )
    classifier.save_weights(weights, args.out)
    acc = classifier.accuracy(weights, dataset)
    print(f"trained on {len(dataset)} samples; clean accuracy {acc:.4f}; wrote {args.out}")
    return 0


def cmd_attack(args) -> int:
    weights = classifier.load_weights(args.model)
    image = imaging.read_ppm(args.image)
    config = load_attack_config(args.config)
    order, result = order_search(weights, image, args.label, config, args.strategy)
    imaging.write_ppm(result.adversarial, args.out)
    sidecar = {
        "order": [k.key for k in order],
        "params": {
            k.key: (float(p) if k is not Kind.LINF else {"epsilon": config.epsilon, "max_abs": float(np.abs(p.delta).max())})
            for k, p in result.chain
        },
        "success": result.success,
        "loss_trace": result.loss_trace,
        "queries": result.model_queries,
    }
    with open(args.out + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")
    print(f"attack {'succeeded' if result.success else 'failed'}; final loss {result.final_loss:.4f}; wrote {args.out}")
    return 0


def cmd_perturb(args) -> int:
    image = imaging.read_ppm(args.image)
    chain = parse_chain(args.chain)
    out = transforms.compose(image, chain)
    imaging.write_ppm(out, args.out)
    print(f"applied {len(chain)} transforms; wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    weights = classifier.load_weights(args.model)
    dataset = parse_dataset(args.dataset)
    config = load_attack_config(args.config)
    threats = [ThreatSpec(name.strip(), strategy=args.strategy) for name in args.threats.split(",") if name.strip()]
    report = evaluation.evaluate(weights, dataset, threats, config, model_id=args.name, workers=args.workers)
    if args.report:
        fmt = "csv" if args.report.endswith(".csv") else "markdown"
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(render_report(report, fmt))
    entries = []
    if args.leaderboard:
        entry = evaluation.report_to_entry(report, args.name, args.arch, args.reference)
        entries = leaderboard_load(args.leaderboard) if os.path.exists(args.leaderboard) else []
        entries.append(entry)
        leaderboard_save(entries, args.leaderboard)
    for name, acc in report.robust_accuracy.items():
        print(f"{name}: {acc:.4f}")
    if entries:
        print(render_entries(leaderboard_rank(entries), "markdown"), end="")
    print(f"evaluated {report.dataset_size} samples in {report.wall_seconds:.1f}s")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import LoadedModel, PanelService, Sample, create_app

    models = []
    for i, path in enumerate(p.strip() for p in args.models.split(",") if p.strip()):
        if not os.path.exists(path):
            raise FileNotFoundError(f"weight file not found: {path}")
        stem = os.path.splitext(os.path.basename(path))[0]
        models.append(LoadedModel(id=f"m{i}", name=stem, kind_tag=stem, weights=classifier.load_weights(path)))
    dataset = parse_dataset(args.samples)
    samples = [
        Sample(id=f"s{i}", image=img, label=lbl, class_name=dataset.class_names[lbl])
        for i, (img, lbl) in enumerate(zip(dataset.images, dataset.labels))
    ]
    config = load_attack_config(args.config)
    service = PanelService(models, samples, args.leaderboard, config)
    static_dir = args.static if args.static and os.path.isdir(args.static) else None
    app = create_app(service, static_dir=static_dir)
    port = args.port if args.port is not None else int(os.environ.get("CARBEN_PORT", "8787"))
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carben", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier on a dataset")
    p.add_argument("--dataset", required=True, help="synth:<seed>:<n> or cifar:<path>")
    p.add_argument("--out", required=True, help="output weight file (CPW1)")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adversarial", action="store_true", help="attack-in-the-loop training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run a composite attack on one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="input PPM file")
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--config", default=None, help="attack config JSON")
    p.add_argument("--strategy", default="fixed", choices=["fixed", "random", "exhaustive"])
    p.add_argument("--out", required=True, help="adversarial PPM output (+ .json sidecar)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("perturb", help="apply a literal transform chain to an image")
    p.add_argument("--image", required=True)
    p.add_argument("--chain", required=True, help='e.g. "brightness=0.2,contrast=1.3"')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("bench", help="robust-accuracy benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--threats", default="clean,linf,semantic,full")
    p.add_argument("--strategy", default="fixed", choices=["fixed", "random", "exhaustive"])
    p.add_argument("--config", default=None)
    p.add_argument("--report", default=None, help="report output (.md or .csv)")
    p.add_argument("--leaderboard", default=None, help="leaderboard JSON to append to")
    p.add_argument("--name", default="model")
    p.add_argument("--arch", default="")
    p.add_argument("--reference", default="")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="start the panel API server")
    p.add_argument("--models", required=True, help="comma-separated CPW1 files")
    p.add_argument("--samples", required=True, help="dataset specifier for panel samples")
    p.add_argument("--leaderboard", required=True, help="leaderboard JSON path")
    p.add_argument("--config", default=None)
    p.add_argument("--port", type=int, default=None, help="default: $CARBEN_PORT or 8787")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", default=None, help="directory of built panel assets")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 0
    except Exception as exc:  # runtime failure -> exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
