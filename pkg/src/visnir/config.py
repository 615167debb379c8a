"""Config file handling.

One INI file with sections [ffe], [generator], [discriminator], [loss],
[train] and [data] drives every command; ``--set section.key=value`` flags
override file values.  Unknown sections or keys in the file are config
errors; unknown override keys are usage errors raised by the CLI layer.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import DEFAULT_BOTTLENECKS, FFEConfig
from .data import SyntheticSpec
from .discriminator import DiscriminatorConfig
from .exceptions import ConfigError
from .generator import GeneratorConfig
from .losses import LossWeights
from .training import ABLATION_ARMS, TrainConfig

_BOTTLENECK_DEFAULT = "; ".join(",".join(str(v) for v in row) for row in DEFAULT_BOTTLENECKS)

# section -> key -> (kind, default, help)
SCHEMA = {
    "ffe": {
        "input_resolution": ("int", "112", "square input size of the embedding mode"),
        "stem_channels": ("int", "32", "channels of the stride-2 stem convolution"),
        "bottleneck_spec": ("bottlenecks", _BOTTLENECK_DEFAULT,
                            "semicolon-separated rows: expansion,channels,repeats,stride"),
        "embedding_dim": ("int", "128", "embedding length"),
        "spatial_tap_stage": ("int", "1", "stage index feeding the translator"),
        "head_channels": ("int", "256", "channels before the global depthwise conv"),
        "pretrained_path": ("str", "", "FFE checkpoint consumed by train/evaluate"),
        "pretrain_epochs": ("int", "10", "epochs for pretrain-ffe"),
        "pretrain_lr": ("float", "1e-3", "learning rate for pretrain-ffe"),
        "pretrain_batch_size": ("int", "16", "batch size for pretrain-ffe"),
        "pretrain_seed": ("int", "0", "seed for pretrain-ffe"),
    },
    "generator": {
        "translator_blocks": ("int", "6", "residual blocks in the translator"),
        "translator_channels": ("int", "128", "translator width (= encoder tap channels)"),
        "decoder_channels": ("intlist", "64,32", "channels of the two upsampling stages"),
        "output_channels": ("int", "3", "image channels produced"),
        "encoder": ("str", "ffe", "'ffe' (face feature extractor) or 'plain'"),
    },
    "discriminator": {
        "layer_channels": ("intlist", "64,128,256,512", "channels per conv layer"),
        "kernel": ("int", "4", "conv kernel size"),
        "strides": ("intlist", "2,2,2,1,1", "stride per layer incl. final score conv"),
    },
    "loss": {
        "lambda_cyc": ("float", "1.0", "cycle-consistency weight"),
        "gamma_pc": ("float", "10.0", "pixel-consistency weight"),
    },
    "train": {
        "epochs": ("int", "10", "training epochs"),
        "batch_size": ("int", "2", "paired images per step"),
        "learning_rate": ("float", "2e-4", "Adam learning rate"),
        "decay_start_fraction": ("float", "0.5", "fraction of epochs before linear lr decay"),
        "image_pool_size": ("int", "50", "history pool capacity per domain"),
        "seed": ("int", "0", "training seed"),
        "resolution": ("int", "64", "training image resolution"),
        "freeze_ffe_epochs": ("int", "0", "epochs with frozen generator encoders"),
        "checkpoint_every": ("int", "1", "epochs between checkpoints"),
        "out_dir": ("str", "runs/default", "directory for checkpoints and logs"),
        "ablation": ("str", "none", "one of none, basic, basic-pc, ffe-pc"),
        "resume": ("str", "", "checkpoint to resume from"),
        "checkpoint": ("str", "", "checkpoint consumed by translate/evaluate "
                                  "(default: <out_dir>/checkpoint_final.ckpt)"),
        "report": ("str", "", "evaluation report path (default: <out_dir>/eval_report.json)"),
    },
    "data": {
        "root": ("str", "dataset", "dataset root with vis/ and nir/ subtrees"),
        "n_subjects": ("int", "16", "synthetic identities to generate"),
        "images_per_subject": ("int", "12", "synthetic pairs per identity"),
        "resolution": ("int", "64", "synthetic render resolution"),
        "jitter_px": ("int", "3", "max NIR misalignment translation"),
        "noise_sigma": ("float", "0.02", "NIR sensor noise std"),
        "seed": ("int", "7", "synthesis and split seed"),
        "n_train_subjects": ("int", "12", "training identities in the split"),
        "n_test_subjects": ("int", "4", "test identities in the split"),
        "pairs_per_subject": ("int", "12", "pairs kept per identity"),
        "split_manifest": ("str", "", "split manifest path (default: <root>/split.json)"),
        "protocol_name": ("str", "custom", "name recorded in split and report"),
        "translate_input": ("str", "", "VIS directory for translate (default: <root>/vis)"),
        "translate_out": ("str", "", "output directory for translate "
                                     "(default: <out_dir>/translated)"),
        "write_grids": ("bool", "false", "also write vis|real|fake comparison grids"),
    },
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(section: str, key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "intlist":
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if kind == "bottlenecks":
            rows = []
            for row in raw.split(";"):
                parts = [int(v) for v in row.replace(" ", "").split(",") if v]
                if len(parts) != 4:
                    raise ValueError(f"bottleneck row needs 4 integers: {row!r}")
                rows.append(tuple(parts))
            return tuple(rows)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    raise ConfigError(f"unknown schema kind {kind}")


@dataclass
class PretrainSettings:
    epochs: int
    learning_rate: float
    batch_size: int
    seed: int
    path: str


@dataclass
class DataSettings:
    root: Path
    synth: SyntheticSpec
    n_train_subjects: int
    n_test_subjects: int
    pairs_per_subject: int
    split_manifest: Path
    protocol_name: str
    translate_input: Path | None
    translate_out: Path | None
    write_grids: bool


@dataclass
class RunPaths:
    out_dir: Path
    ablation: str
    resume: Path | None
    checkpoint: Path
    report: Path


@dataclass
class AppConfig:
    ffe: FFEConfig
    ffe_pretrain: PretrainSettings
    generator: GeneratorConfig
    discriminator: DiscriminatorConfig
    loss: LossWeights
    train: TrainConfig
    data: DataSettings
    run: RunPaths
    values: dict = field(default_factory=dict)  # effective raw values


def known_key(dotted: str) -> bool:
    if dotted.count(".") != 1:
        return False
    section, key = dotted.split(".")
    return section in SCHEMA and key in SCHEMA[section]


def parse_config(path: Path, overrides: list[str] | None = None) -> AppConfig:
    """Read an INI file, apply overrides, build typed config objects."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    values: dict = {}
    for section, keys in SCHEMA.items():
        for key, (kind, default, _help) in keys.items():
            values[f"{section}.{key}"] = _convert(section, key, kind, default)

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            values[f"{section}.{key}"] = _convert(section, key, SCHEMA[section][key][0], raw)

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, raw = item.split("=", 1)
        dotted = dotted.strip()
        if not known_key(dotted):
            raise ConfigError(f"unknown override key {dotted!r}")
        section, key = dotted.split(".")
        values[dotted] = _convert(section, key, SCHEMA[section][key][0], raw)

    return _build(values)


def _build(v: dict) -> AppConfig:
    ffe = FFEConfig(
        input_resolution=v["ffe.input_resolution"],
        stem_channels=v["ffe.stem_channels"],
        bottleneck_spec=v["ffe.bottleneck_spec"],
        embedding_dim=v["ffe.embedding_dim"],
        spatial_tap_stage=v["ffe.spatial_tap_stage"],
        head_channels=v["ffe.head_channels"],
    )
    pretrain = PretrainSettings(
        epochs=v["ffe.pretrain_epochs"],
        learning_rate=v["ffe.pretrain_lr"],
        batch_size=v["ffe.pretrain_batch_size"],
        seed=v["ffe.pretrain_seed"],
        path=v["ffe.pretrained_path"],
    )
    gen = GeneratorConfig(
        translator_blocks=v["generator.translator_blocks"],
        translator_channels=v["generator.translator_channels"],
        decoder_channels=v["generator.decoder_channels"],
        output_channels=v["generator.output_channels"],
        encoder=v["generator.encoder"],
    )
    disc = DiscriminatorConfig(
        layer_channels=v["discriminator.layer_channels"],
        kernel=v["discriminator.kernel"],
        strides=v["discriminator.strides"],
    )
    loss = LossWeights(lambda_cyc=v["loss.lambda_cyc"], gamma_pc=v["loss.gamma_pc"])
    train = TrainConfig(
        epochs=v["train.epochs"],
        batch_size=v["train.batch_size"],
        learning_rate=v["train.learning_rate"],
        decay_start_fraction=v["train.decay_start_fraction"],
        loss_weights=loss,
        image_pool_size=v["train.image_pool_size"],
        seed=v["train.seed"],
        resolution=v["train.resolution"],
        freeze_ffe_epochs=v["train.freeze_ffe_epochs"],
        checkpoint_every=v["train.checkpoint_every"],
    )
    root = Path(v["data.root"])
    synth = SyntheticSpec(
        n_subjects=v["data.n_subjects"],
        images_per_subject=v["data.images_per_subject"],
        resolution=v["data.resolution"],
        jitter_px=v["data.jitter_px"],
        noise_sigma=v["data.noise_sigma"],
        seed=v["data.seed"],
    )
    out_dir = Path(v["train.out_dir"])
    if v["train.ablation"] not in ABLATION_ARMS:
        raise ConfigError(
            f"train.ablation must be one of {ABLATION_ARMS}, got {v['train.ablation']!r}"
        )
    data = DataSettings(
        root=root,
        synth=synth,
        n_train_subjects=v["data.n_train_subjects"],
        n_test_subjects=v["data.n_test_subjects"],
        pairs_per_subject=v["data.pairs_per_subject"],
        split_manifest=Path(v["data.split_manifest"]) if v["data.split_manifest"]
        else root / "split.json",
        protocol_name=v["data.protocol_name"],
        translate_input=Path(v["data.translate_input"]) if v["data.translate_input"]
        else root / "vis",
        translate_out=Path(v["data.translate_out"]) if v["data.translate_out"]
        else out_dir / "translated",
        write_grids=v["data.write_grids"],
    )
    run = RunPaths(
        out_dir=out_dir,
        ablation=v["train.ablation"],
        resume=Path(v["train.resume"]) if v["train.resume"] else None,
        checkpoint=Path(v["train.checkpoint"]) if v["train.checkpoint"]
        else out_dir / "checkpoint_final.ckpt",
        report=Path(v["train.report"]) if v["train.report"]
        else out_dir / "eval_report.json",
    )
    return AppConfig(ffe, pretrain, gen, disc, loss, train, data, run, v)


def render_default_ini() -> str:
    """A fully commented config file with every documented key at its default."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_kind, default, help_text) in keys.items():
            lines.append(f"# {help_text}")
            lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)


def apply_ablation(cfg: AppConfig) -> AppConfig:
    """Resolve the ablation arm into encoder kind and pixel-consistency weight."""
    arm = cfg.run.ablation
    if arm == "none":
        return cfg
    encoder = "plain" if arm in ("basic", "basic-pc") else "ffe"
    gamma = 0.0 if arm == "basic" else cfg.loss.gamma_pc
    loss = LossWeights(cfg.loss.lambda_cyc, gamma)
    gen = GeneratorConfig(
        translator_blocks=cfg.generator.translator_blocks,
        translator_channels=cfg.generator.translator_channels,
        decoder_channels=cfg.generator.decoder_channels,
        output_channels=cfg.generator.output_channels,
        encoder=encoder,
    )
    train = TrainConfig(
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        learning_rate=cfg.train.learning_rate,
        decay_start_fraction=cfg.train.decay_start_fraction,
        loss_weights=loss,
        image_pool_size=cfg.train.image_pool_size,
        seed=cfg.train.seed,
        resolution=cfg.train.resolution,
        freeze_ffe_epochs=cfg.train.freeze_ffe_epochs,
        checkpoint_every=cfg.train.checkpoint_every,
    )
    return AppConfig(
        cfg.ffe, cfg.ffe_pretrain, gen, cfg.discriminator, loss, train,
        cfg.data, cfg.run, cfg.values,
    )
