"""Command-line front end.

Verbs: synth-data, pretrain-ffe, train, translate, evaluate.  Every flag has
a config-file equivalent and flags override the file.  Exit codes: 0 success,
1 usage, 2 config, 3 data, 4 training divergence, 5 evaluation protocol
violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import config as cfgmod
from . import data as datamod
from .backbone import load_ffe_checkpoint, pretrain_ffe, save_ffe_checkpoint
from .evaluation import evaluate_protocol
from .exceptions import (
    ConfigError,
    DataError,
    DivergenceError,
    EvalProtocolError,
    VisnirError,
)
from .training import load_generator_for_inference, train_loop

VERBS = ("synth-data", "pretrain-ffe", "train", "translate", "evaluate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors must exit 1
        raise UsageError(message)


def _key_doc() -> str:
    lines = ["config keys (also settable via --set section.key=value):"]
    for section, keys in cfgmod.SCHEMA.items():
        for key, (_kind, default, help_text) in keys.items():
            lines.append(f"  {section}.{key:<22} {help_text} (default: {default})")
    return "\n".join(lines)


def build_parser() -> _Parser:
    parser = _Parser(
        prog="visnir",
        description="VIS-to-NIR face translation: synthesize data, pretrain the "
        "face feature extractor, train the translation networks, translate "
        "images and run verification.",
        epilog=_key_doc(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="verb", metavar="|".join(VERBS))

    def common(p):
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value")

    p = sub.add_parser("synth-data", help="generate the synthetic paired dataset")
    common(p)
    p.add_argument("--out-dir", help="dataset root (data.root)")
    p.add_argument("--seed", type=int, help="synthesis seed (data.seed)")

    p = sub.add_parser("pretrain-ffe", help="pretrain the face feature extractor")
    common(p)
    p.add_argument("--out", help="FFE checkpoint path (ffe.pretrained_path)")
    p.add_argument("--epochs", type=int, help="pretraining epochs (ffe.pretrain_epochs)")
    p.add_argument("--seed", type=int, help="pretraining seed (ffe.pretrain_seed)")

    p = sub.add_parser("train", help="train the translation networks")
    common(p)
    p.add_argument("--out-dir", help="run directory (train.out_dir)")
    p.add_argument("--ablation", choices=["basic", "basic-pc", "ffe-pc"],
                   help="ablation arm (train.ablation)")
    p.add_argument("--resume", help="checkpoint to resume from (train.resume)")
    p.add_argument("--epochs", type=int, help="training epochs (train.epochs)")
    p.add_argument("--seed", type=int, help="training seed (train.seed)")

    p = sub.add_parser("translate", help="translate VIS images to fake NIR")
    common(p)
    p.add_argument("--checkpoint", help="training checkpoint (train.checkpoint)")
    p.add_argument("--input", help="VIS image directory (data.translate_input)")
    p.add_argument("--out-dir", help="output directory (data.translate_out)")
    p.add_argument("--grids", action="store_true",
                   help="also write vis|real|fake grids (data.write_grids)")

    p = sub.add_parser("evaluate", help="run the verification protocol")
    common(p)
    p.add_argument("--checkpoint", help="training checkpoint (train.checkpoint)")
    p.add_argument("--out", help="report path (train.report)")

    return parser


def _flag_overrides(args) -> list[str]:
    mapping = {
        "synth-data": {"out_dir": "data.root", "seed": "data.seed"},
        "pretrain-ffe": {"out": "ffe.pretrained_path", "epochs": "ffe.pretrain_epochs",
                         "seed": "ffe.pretrain_seed"},
        "train": {"out_dir": "train.out_dir", "ablation": "train.ablation",
                  "resume": "train.resume", "epochs": "train.epochs",
                  "seed": "train.seed"},
        "translate": {"checkpoint": "train.checkpoint", "input": "data.translate_input",
                      "out_dir": "data.translate_out"},
        "evaluate": {"checkpoint": "train.checkpoint", "out": "train.report"},
    }
    extra = []
    for attr, dotted in mapping.get(args.verb, {}).items():
        value = getattr(args, attr.replace("-", "_"), None)
        if value is not None:
            extra.append(f"{dotted}={value}")
    if args.verb == "translate" and getattr(args, "grids", False):
        extra.append("data.write_grids=true")
    return extra


def _load_config(args) -> cfgmod.AppConfig:
    for item in args.overrides:
        dotted = item.split("=", 1)[0].strip()
        if "=" not in item or not cfgmod.known_key(dotted):
            raise UsageError(f"unknown --set key {item!r}; see --help for documented keys")
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return cfgmod.parse_config(path, args.overrides + _flag_overrides(args))


def _ensure_split(cfg: cfgmod.AppConfig) -> datamod.ProtocolSplit:
    manifest = cfg.data.split_manifest
    if manifest.is_file():
        return datamod.load_split(manifest, cfg.data.root)
    samples = datamod.scan_dataset(cfg.data.root)
    split = datamod.make_split(
        samples,
        cfg.data.n_train_subjects,
        cfg.data.n_test_subjects,
        cfg.data.pairs_per_subject,
        cfg.data.synth.seed,
        name=cfg.data.protocol_name,
    )
    manifest.parent.mkdir(parents=True, exist_ok=True)
    datamod.save_split(split, manifest)
    return split


def cmd_synth_data(cfg: cfgmod.AppConfig) -> int:
    samples = datamod.generate_synthetic_dataset(cfg.data.synth, cfg.data.root)
    print(f"wrote {len(samples)} VIS/NIR pairs "
          f"({cfg.data.synth.n_subjects} subjects) under {cfg.data.root}")
    return 0


def cmd_pretrain_ffe(cfg: cfgmod.AppConfig) -> int:
    split = _ensure_split(cfg)
    labeled = datamod.make_labeled_set(split.train_samples, cfg.ffe.input_resolution)
    result = pretrain_ffe(
        labeled,
        cfg.ffe,
        epochs=cfg.ffe_pretrain.epochs,
        seed=cfg.ffe_pretrain.seed,
        learning_rate=cfg.ffe_pretrain.learning_rate,
        batch_size=cfg.ffe_pretrain.batch_size,
    )
    out = Path(cfg.ffe_pretrain.path) if cfg.ffe_pretrain.path else (
        cfg.run.out_dir / "ffe_pretrained.ckpt"
    )
    save_ffe_checkpoint(out, result.model, {
        "train_accuracy": result.train_accuracy,
        "final_loss": result.final_loss,
        "n_identities": labeled.n_identities,
        "split_name": split.name,
    })
    print(f"pretrained FFE on {labeled.n_identities} identities: "
          f"train accuracy {result.train_accuracy:.3f}, saved to {out}")
    return 0


def cmd_train(cfg: cfgmod.AppConfig) -> int:
    cfg = cfgmod.apply_ablation(cfg)
    split = _ensure_split(cfg)
    pretrained_sd = None
    ffe_config = cfg.ffe
    if cfg.generator.encoder == "ffe" and cfg.ffe_pretrain.path:
        model, _ = load_ffe_checkpoint(Path(cfg.ffe_pretrain.path))
        pretrained_sd = model.state_dict()
        ffe_config = model.config
    manifest = train_loop(
        split,
        cfg.train,
        cfg.run.out_dir,
        gen_config=cfg.generator,
        ffe_config=ffe_config,
        disc_config=cfg.discriminator,
        pretrained_ffe=pretrained_sd,
        resume_from=cfg.run.resume,
    )
    print(f"trained {manifest.step} steps; final checkpoint {manifest.path}")
    return 0


def _to_uint8(img: torch.Tensor) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    arr = ((img.clamp(-1, 1) + 1) / 2 * 255).round().to(torch.uint8)
    return arr.permute(1, 2, 0).numpy()


def cmd_translate(cfg: cfgmod.AppConfig) -> int:
    generator, manifest = load_generator_for_inference(cfg.run.checkpoint)
    resolution = manifest.train_config.get("resolution", cfg.train.resolution)
    in_dir = cfg.data.translate_input
    if not in_dir.is_dir():
        raise DataError(f"translate input directory not found: {in_dir}")
    paths = sorted(in_dir.rglob("*.png"))
    if not paths:
        raise DataError(f"no PNG images under {in_dir}")
    out_dir = cfg.data.translate_out
    written = 0
    for path in paths:
        rel = path.relative_to(in_dir)
        vis = torch.from_numpy(datamod.load_image(path, resolution, "vis"))[None]
        with torch.no_grad():
            fake = generator(vis)[0]
        fake_gray = _to_uint8(fake).mean(axis=2).round().astype(np.uint8)
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(fake_gray, "L").save(target)
        written += 1
        if cfg.data.write_grids:
            panels = [_to_uint8(vis[0])]
            real_nir = cfg.data.root / "nir" / rel
            if real_nir.is_file():
                panels.append(
                    _to_uint8(torch.from_numpy(datamod.load_image(real_nir, resolution, "nir")))
                )
            panels.append(np.repeat(fake_gray[:, :, None], 3, axis=2))
            grid = np.concatenate(panels, axis=1)
            grid_path = out_dir / "grids" / rel
            grid_path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(grid, "RGB").save(grid_path)
    print(f"translated {written} images into {out_dir}")
    return 0


def cmd_evaluate(cfg: cfgmod.AppConfig) -> int:
    if not cfg.ffe_pretrain.path:
        raise ConfigError("evaluate needs ffe.pretrained_path (the verification matcher)")
    matcher, _ = load_ffe_checkpoint(Path(cfg.ffe_pretrain.path))
    split = _ensure_split(cfg)
    report = evaluate_protocol(split, cfg.run.checkpoint, matcher)
    cfg.run.report.parent.mkdir(parents=True, exist_ok=True)
    report.save(cfg.run.report)
    sys.stdout.write(report.to_json())
    return 0


_HANDLERS = {
    "synth-data": cmd_synth_data,
    "pretrain-ffe": cmd_pretrain_ffe,
    "train": cmd_train,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
}

_PREFIXES = (
    (ConfigError, "config"),
    (DivergenceError, "training"),
    (EvalProtocolError, "evaluation"),
    (DataError, "data"),
    (VisnirError, "model"),
)


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb is None:
            raise UsageError("missing command verb")
        cfg = _load_config(args)
        return _HANDLERS[args.verb](cfg)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n\n{parser.format_usage()}")
        return 1
    except VisnirError as exc:
        prefix = next(p for klass, p in _PREFIXES if isinstance(exc, klass))
        sys.stderr.write(f"{prefix}: {exc}\n")
        return exc.exit_code


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
