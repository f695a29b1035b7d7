"""Command-line front end.

Subcommands cover the experiment stages: dataset generation, localizer
training, attack execution, cross-model evaluation, and the penalty-weight
search. Every artifact-producing command writes a manifest.tsv with
content digests so reruns can be compared byte for byte. All commands
exit nonzero on error, with the diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import forgery, harness, localizer
from .attacks import ATTACK_METHODS, AttackConfig
from .errors import DomainError, TamperfoolError
from .forgery import GenerationParams
from .localizer import TrainingConfig

ENV_SEED = "TAMPERFOOL_SEED"


def _env_seed() -> int | None:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise DomainError(f"{ENV_SEED} must be an integer, got {raw!r}") from None


def _config_of(args) -> dict[str, str]:
    return harness.load_config(args.config) if args.config else {}


def _resolve(args, config: dict, key: str, cast, default, attr: str | None = None):
    """Command line beats the config file beats the built-in default."""
    value = getattr(args, attr or key, None)
    if value is not None:
        return value
    if key in config:
        try:
            return cast(config[key])
        except ValueError:
            raise DomainError(
                f"config key {key!r}: cannot parse {config[key]!r}"
            ) from None
    return default


def _resolve_seed(args, config, default: int) -> int:
    env = _env_seed()
    if env is not None:
        return env
    return _resolve(args, config, "seed", int, default)


def _load_val_split(data_dir):
    dataset = forgery.load_dataset(data_dir)
    if not dataset.val_indices:
        raise DomainError(f"dataset at {data_dir} has no validation split")
    return dataset, [dataset.samples[i] for i in dataset.val_indices]


def cmd_gen_data(args) -> int:
    config = _config_of(args)
    n = _resolve(args, config, "n", int, 512)
    seed = _resolve_seed(args, config, 7)
    size = _resolve(args, config, "size", int, 128)
    dataset = forgery.build_dataset(
        n, seed=seed, params=GenerationParams(height=size, width=size)
    )
    forgery.save_dataset(dataset, args.out)
    harness.write_manifest(
        args.out, {"command": "gen-data", "n": n, "seed": seed, "size": size}
    )
    print(f"wrote {n} samples ({size}x{size}, seed {seed}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _config_of(args)
    cfg = TrainingConfig(
        learning_rate=_resolve(args, config, "learning_rate", float, 1e-3),
        epochs=_resolve(args, config, "epochs", int, 30),
        batch_size=_resolve(args, config, "batch_size", int, 8),
        seed=_resolve_seed(args, config, 0),
    )
    dataset = forgery.load_dataset(args.data)
    model = localizer.train(args.arch, dataset, cfg)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    localizer.save_model(model, out)
    val_f1 = model.training_manifest["val_f1"]
    shown = "n/a" if val_f1 is None else f"{val_f1:.4f}"
    print(f"trained {args.arch} ({cfg.epochs} epochs): val F1 {shown}, saved {out}")
    return 0


def cmd_attack(args) -> int:
    config = _config_of(args)
    cfg = AttackConfig(
        lambda_=_resolve(args, config, "lambda", float, AttackConfig().lambda_, attr="lambda_"),
        learning_rate=_resolve(args, config, "lr", float, AttackConfig().learning_rate),
        iterations=_resolve(args, config, "iters", int, AttackConfig().iterations),
        epsilon=_resolve(args, config, "eps", float, AttackConfig().epsilon),
    )
    model = None
    if args.method in ("opt", "fgsm"):
        if not args.victim:
            raise DomainError(f"attack method {args.method!r} needs --victim")
        model = localizer.load_model(args.victim)
    dataset, val = _load_val_split(args.data)
    results = harness.attack_batch(args.method, val, model=model, cfg=cfg)
    images = [harness.quantize_to_8bit(r.adversarial_image) for r in results]
    harness.save_attacked_set(args.out, dataset.val_indices, images, results, cfg)
    meta = {
        "command": "attack",
        "method": args.method,
        "victim": model.architecture_id if model else "",
        "images": len(images),
    }
    if args.method == "opt":
        meta["lambda"] = f"{cfg.lambda_:g}"
        meta["iterations"] = cfg.iterations
        meta["learning_rate"] = f"{cfg.learning_rate:g}"
    elif args.method == "fgsm":
        meta["epsilon"] = f"{cfg.epsilon:g}"
    harness.write_manifest(args.out, meta)
    print(f"attacked {len(images)} validation images with {args.method} -> {args.out}")
    return 0


def _load_attacked_tree(root, expected_indices):
    """Map victim-id directories of method directories to image lists."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"attacked directory not found: {root}")
    attacked: dict[str, dict[str, list]] = {}
    for victim_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        victim_id = "" if victim_dir.name == "baseline" else victim_dir.name
        methods = {}
        for method_dir in sorted(p for p in victim_dir.iterdir() if p.is_dir()):
            if not (method_dir / "attacks.tsv").exists():
                continue
            indices, images, rows = harness.load_attacked_set(method_dir)
            if indices != list(expected_indices):
                raise DomainError(
                    f"{method_dir} covers indices {indices[:3]}..., expected "
                    f"the dataset's validation split"
                )
            for row in rows:
                if row["victim"] != victim_id:
                    raise DomainError(
                        f"{method_dir}: provenance says victim {row['victim']!r} "
                        f"but the directory layout says {victim_id!r}"
                    )
            methods[method_dir.name] = images
        if methods:
            attacked[victim_id] = methods
    if not attacked:
        raise DomainError(f"no attacked sets found under {root}")
    return attacked


def cmd_evaluate(args) -> int:
    models = {}
    for token in args.models.split(","):
        model = localizer.load_model(token.strip())
        if model.architecture_id in models:
            raise DomainError(
                f"two models share architecture id {model.architecture_id!r}"
            )
        models[model.architecture_id] = model
    dataset, val = _load_val_split(args.data)
    attacked = _load_attacked_tree(args.attacked, dataset.val_indices)
    table = harness.transfer_matrix(models, val, attacked)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    harness.emit_report(table, "tsv", f"{out}.tsv")
    harness.emit_report(table, "markdown", f"{out}.md")
    print(f"evaluated {len(table.rows)} rows -> {out}.tsv, {out}.md")
    return 0


def cmd_lambda_search(args) -> int:
    config = _config_of(args)
    base_cfg = AttackConfig(
        learning_rate=_resolve(args, config, "lr", float, AttackConfig().learning_rate),
        iterations=_resolve(args, config, "iters", int, AttackConfig().iterations),
    )
    model = localizer.load_model(args.victim)
    dataset, _ = _load_val_split(args.data)
    result = harness.lambda_search(
        model, dataset, args.psnr_floor, base_cfg=base_cfg
    )
    for row in result.trace:
        print(
            f"lambda={row.lambda_:g}\tf1_after={row.f1_after:.4f}"
            f"\tpsnr={row.psnr:.2f}\tssim={row.ssim:.4f}"
        )
    if args.out:
        harness.write_lambda_trace(result, Path(args.out))
    print(f"chosen_lambda={result.chosen_lambda:g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tamperfool",
        description="Forgery localizers, adversarial attacks, and their evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="key = value config file; flags win")

    p = sub.add_parser("gen-data", help="synthesize a forgery dataset")
    p.add_argument("--n", type=int, help="number of samples (default 512)")
    p.add_argument("--seed", type=int, help=f"base seed (default 7, env {ENV_SEED} wins)")
    p.add_argument("--size", type=int, help="square image side (default 128)")
    p.add_argument("--out", required=True, help="output dataset directory")
    add_config(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a localizer on a dataset")
    p.add_argument("--arch", required=True, choices=("A", "B"))
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--seed", type=int, help=f"training seed (default 0, env {ENV_SEED} wins)")
    add_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="attack a dataset's validation split")
    p.add_argument("--method", required=True, choices=ATTACK_METHODS)
    p.add_argument("--victim", help="victim model file (opt and fgsm only)")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for attacked images")
    p.add_argument("--lambda", dest="lambda_", type=float, help="perturbation penalty weight")
    p.add_argument("--eps", type=float, help="fgsm step size")
    p.add_argument("--iters", type=int, help="optimization iterations")
    p.add_argument("--lr", type=float, help="optimization learning rate")
    add_config(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="cross-evaluate models on attacked sets")
    p.add_argument("--models", required=True, help="comma-separated model files")
    p.add_argument(
        "--attacked",
        required=True,
        help="directory of <victim>/<method> attacked sets ('baseline' = model-free)",
    )
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="report path prefix (.tsv and .md added)")
    add_config(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("lambda-search", help="grid-search the penalty weight")
    p.add_argument("--victim", required=True, help="victim model file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--psnr-floor", type=float, default=34.0)
    p.add_argument("--out", help="optional trace TSV path")
    p.add_argument("--iters", type=int, help="optimization iterations")
    p.add_argument("--lr", type=float, help="optimization learning rate")
    add_config(p)
    p.set_defaults(func=cmd_lambda_search)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TamperfoolError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
