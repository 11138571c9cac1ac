"""Command-line entry point: ``tbformer {datagen,train,predict,eval,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import numerics as nx
from .checkpoint import CheckpointError, checkpoint_load
from .config import ConfigError, ModelConfig
from .data.dataset import MANIFEST_NAME, generate_dataset, load_entry, read_manifest
from .data.distort import Distortion, DistortionError, resize_to
from .data.netpbm import load_ppm, save_pgm
from .evaluation import format_robustness, robustness_csv, robustness_table
from .model import bce_loss, forward, init_params, predict
from .runconfig import SECTIONS, RunConfig, field_types, load_run_config
from .train import MODEL_FILE, train

log = logging.getLogger("tbformer")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
RUN_CONFIG_NAME = "run.ini"


class UsageError(Exception):
    """Bad command-line usage or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--seed", type=int, help="run seed (model init, data, batch order)")
    p.add_argument("--variant", choices=("rgb_only", "rgb_noise_concat", "full_ahfm"))
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config field, e.g. --set schedule.lr0=0.05",
    )
    group = p.add_argument_group("config fields")
    for section in SECTIONS:
        for key in field_types(section):
            group.add_argument(
                f"--{section}-{key.replace('_', '-')}", dest=f"cfg__{section}__{key}", metavar="V", help=argparse.SUPPRESS
            )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tbformer", description="Two-branch Transformer forgery localization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("datagen", help="generate a synthetic forgery dataset")
    _add_config_flags(p)
    p.add_argument("--count", type=int)

    p = sub.add_parser("train", help="train a model on a manifest's train split")
    _add_config_flags(p)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.add_argument("--iters", type=int, help="shorthand for schedule.iter_total")
    p.add_argument("--stop-after", type=int, help="stop after this many iterations (checkpointed)")

    p = sub.add_parser("predict", help="predict a mask for one PPM image")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out-mask", type=Path, required=True, help="probability PGM; a *_bin.pgm sibling is also written")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--distort", action="append", default=[], metavar="KIND:PARAM")
    p.add_argument("--mode", choices=("per_image", "pooled"))
    p.add_argument("--gt-as-pred", action="store_true", help="score ground-truth masks as predictions")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter on a toy model")
    _add_config_flags(p)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-entries", type=int, default=16, help="coordinates probed per tensor; 0 probes all")
    return parser


def _overrides(args) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out.setdefault(section.strip(), {})[name.strip()] = value
    for dest, value in vars(args).items():
        if dest.startswith("cfg__") and value is not None:
            _, section, key = dest.split("__")
            out.setdefault(section, {})[key] = value
    if args.seed is not None:
        out.setdefault("run", {})["seed"] = str(args.seed)
    if args.variant is not None:
        out.setdefault("model", {})["variant"] = args.variant
    if args.out is not None:
        out.setdefault("run", {})["out"] = str(args.out)
    return out


def resolve_config(args, extra: dict[str, dict[str, str]] | None = None) -> RunConfig:
    overrides = _overrides(args)
    for section, values in (extra or {}).items():
        overrides.setdefault(section, {}).update(values)
    path = args.config
    if path is None and getattr(args, "checkpoint", None) is not None:
        sibling = Path(args.checkpoint).parent / RUN_CONFIG_NAME
        if sibling.is_file():
            path = sibling
    try:
        return load_run_config(path, overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _load_params(path: Path, cfg: ModelConfig) -> dict[str, np.ndarray]:
    return checkpoint_load(path, init_params(cfg))


def cmd_datagen(args) -> int:
    extra = {"data": {"count": str(args.count)}} if args.count is not None else None
    rc = resolve_config(args, extra)
    if rc.data.count < 3:
        raise UsageError(f"--count must be at least 3, got {rc.data.count}")
    out = Path(rc.run.out)
    manifest = generate_dataset(rc.data.count, rc.data.ratios, out, rc.run.seed, (rc.model.H, rc.model.W))
    counts = manifest.counts()
    print(out / MANIFEST_NAME)
    log.info("wrote %d samples (%s)", len(manifest.entries), counts)
    return EXIT_OK


def _manifest_path(args, rc: RunConfig) -> Path:
    path = getattr(args, "manifest", None) or (Path(rc.data.manifest) if rc.data.manifest else None)
    if path is None:
        raise UsageError("a manifest is required (--manifest or [data] manifest)")
    return Path(path)


def cmd_train(args) -> int:
    extra = {"schedule": {"iter_total": str(args.iters)}} if args.iters is not None else None
    rc = resolve_config(args, extra)
    cfg = rc.model_config
    manifest = read_manifest(_manifest_path(args, rc))
    train_entries = manifest.split("train")
    if rc.data.max_train is not None:
        train_entries = train_entries[: rc.data.max_train]
    if not train_entries:
        raise UsageError("manifest has no train entries")
    data = [load_entry(e) for e in train_entries]
    val = [load_entry(e) for e in manifest.split("val")]
    out = Path(rc.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_CONFIG_NAME).write_text(rc.to_ini())
    state = train(
        cfg,
        rc.schedule,
        data,
        out,
        resume=args.resume,
        stop_after=args.stop_after,
        val_data=val or None,
        forged_weight=rc.run.forged_weight,
    )
    last = state.losses[-1][2] if state.losses else float("nan")
    print(f"{out / MODEL_FILE}\titerations={state.iteration}\tloss={last:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    rc = resolve_config(args)
    cfg = rc.model_config
    params = _load_params(args.checkpoint, cfg)
    image = load_ppm(args.image)
    h, w = image.shape[1:]
    model_in = image if (h, w) == (cfg.H, cfg.W) else resize_to(image, cfg.H, cfg.W)
    prob = predict(model_in, params, cfg)
    if prob.shape != (h, w):
        prob = resize_to(prob[None], h, w)[0]
    out = Path(args.out_mask)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_pgm(out, prob)
    binary = out.with_name(out.stem + "_bin" + (out.suffix or ".pgm"))
    save_pgm(binary, (prob >= 0.5).astype(np.float64))
    print(f"{out}\t{binary}")
    return EXIT_OK


def cmd_eval(args) -> int:
    extra = {"run": {"metrics_mode": args.mode}} if args.mode else None
    rc = resolve_config(args, extra)
    cfg = rc.model_config
    try:
        specs = [Distortion.parse(s) for s in args.distort]
    except DistortionError as exc:
        raise UsageError(str(exc)) from exc
    if args.checkpoint is None and not args.gt_as_pred:
        raise UsageError("eval needs --checkpoint (or --gt-as-pred)")
    params = _load_params(args.checkpoint, cfg) if args.checkpoint is not None else {}
    manifest = read_manifest(_manifest_path(args, rc))
    entries = manifest.split(args.split)
    if not entries:
        raise UsageError(f"manifest has no {args.split} entries")
    data = [(e.image.name, *load_entry(e)) for e in entries]
    rows = robustness_table(params, cfg, data, specs, rc.run.metrics_mode, args.gt_as_pred)
    out = Path(rc.run.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, row in enumerate(rows):
        tag = "baseline" if i == 0 else str(specs[i - 1]).replace(":", "_")
        (out / f"metrics_{tag}.csv").write_text(row.report.to_csv())
    (out / "robustness.csv").write_text(robustness_csv(rows))
    print(rows[0].report.summary())
    print(format_robustness(rows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rc = resolve_config(args)
    base = rc.model_config
    cfg = ModelConfig.toy(variant=base.variant, seed=base.seed)
    params = {k: v.astype(np.float64) for k, v in init_params(cfg).items()}
    rng = np.random.default_rng([cfg.seed, 0x6C])
    image = rng.uniform(0.0, 1.0, size=(3, cfg.H, cfg.W))
    gt = np.zeros((cfg.H, cfg.W))
    gt[cfg.H // 4 : cfg.H // 2 + 3, cfg.W // 3 : cfg.W - 5] = 1.0

    def loss_fn(leaves):
        return bce_loss(forward(image, leaves, cfg, strict=False), gt)

    report = nx.grad_check(loss_fn, params, eps=args.eps, max_entries=args.max_entries or None, seed=cfg.seed)
    print(report.format())
    ok = report.passed(args.tol)
    print(f"{'PASS' if ok else 'FAIL'}: max rel err {report.max_rel_err:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"tbformer: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tbformer {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, DistortionError) as exc:
        print(f"tbformer {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic for any failure
        print(f"tbformer {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
