"""Alternating adversarial training of the two mappings and their critics.

Each step does one generator update (both mappings and their encoders
jointly, minimizing adversarial + cycle + pixel-consistency terms) followed
by one update of each discriminator on real images and history-pooled fakes.
Checkpoints capture networks, optimizer slots, pool contents and RNG states
so a resumed run reproduces the uninterrupted one bit-for-bit; they are
written at epoch boundaries.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from . import checkpoint as ckpt
from .backbone import FFEConfig
from .data import PairedEpochLoader, ProtocolSplit
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .exceptions import ConfigError, DivergenceError, PairingError
from .generator import Generator, GeneratorConfig
from .losses import (
    LossRecord,
    LossWeights,
    cycle_loss,
    lsgan_loss_discriminator,
    lsgan_loss_generator,
    pixel_consistency_loss,
    total_objective,
)

ADAM_BETAS = (0.5, 0.999)

ABLATION_ARMS = ("none", "basic", "basic-pc", "ffe-pc")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 2
    learning_rate: float = 2e-4
    decay_start_fraction: float = 0.5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    image_pool_size: int = 50
    seed: int = 0
    resolution: int = 64
    freeze_ffe_epochs: int = 0
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.decay_start_fraction <= 1.0:
            raise ConfigError("decay_start_fraction must lie in [0, 1]")
        if self.image_pool_size < 0:
            raise ConfigError("image_pool_size must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")


def learning_rate_factor(epoch: int, total_epochs: int, decay_start_fraction: float) -> float:
    """Constant until the decay point, then linear to 0 at the final epoch.

    ``epoch`` is 1-indexed; with 10 epochs and fraction 0.5 the factor is 1
    through epoch 5 and reaches 0 at epoch 10.
    """
    decay_start = int(total_epochs * decay_start_fraction)
    if decay_start >= total_epochs or epoch <= decay_start:
        return 1.0
    return (total_epochs - epoch) / (total_epochs - decay_start)


class ImagePool:
    """History buffer of generated images for discriminator updates.

    Per query image: while below capacity the fresh fake is stored and
    returned; afterwards, with probability 0.5 a stored fake is returned and
    replaced by the fresh one, else the fresh fake passes through.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ConfigError("pool capacity must be >= 0")
        self.capacity = capacity
        self.images: list[Tensor] = []

    def query(self, fresh: Tensor, rng: np.random.Generator) -> Tensor:
        if self.capacity == 0:
            return fresh
        out = []
        for img in fresh:
            img = img.detach().clone()
            if len(self.images) < self.capacity:
                self.images.append(img)
                out.append(img)
            elif rng.random() < 0.5:
                idx = int(rng.integers(len(self.images)))
                out.append(self.images[idx])
                self.images[idx] = img
            else:
                out.append(img)
        return torch.stack(out)

    def state_array(self, resolution: int) -> np.ndarray:
        if not self.images:
            return np.zeros((0, 3, resolution, resolution), dtype=np.float32)
        return torch.stack(self.images).numpy()

    def load_state_array(self, arr: np.ndarray) -> None:
        self.images = [torch.from_numpy(np.ascontiguousarray(a)) for a in arr]


@dataclass
class TrainState:
    g: Generator
    f: Generator
    d_v: PatchDiscriminator
    d_n: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d_v: torch.optim.Optimizer
    opt_d_n: torch.optim.Optimizer
    pool_nir: ImagePool
    pool_vis: ImagePool
    config: TrainConfig
    batch_rng: np.random.Generator
    pool_rng: np.random.Generator
    step: int = 0
    epoch: int = 0

    @property
    def weights(self) -> LossWeights:
        return self.config.loss_weights

    def set_learning_rate(self, lr: float) -> None:
        for opt in (self.opt_g, self.opt_d_v, self.opt_d_n):
            for group in opt.param_groups:
                group["lr"] = lr

    def set_encoder_frozen(self, frozen: bool) -> None:
        for gen in (self.g, self.f):
            for p in gen.encoder.parameters():
                p.requires_grad_(not frozen)


def build_train_state(
    config: TrainConfig,
    gen_config: GeneratorConfig | None = None,
    ffe_config: FFEConfig | None = None,
    disc_config: DiscriminatorConfig | None = None,
    pretrained_ffe: dict | None = None,
) -> TrainState:
    """Fresh networks, optimizers, pools and RNG streams for one run."""
    torch.manual_seed(config.seed)
    gen_config = gen_config or GeneratorConfig()
    g = Generator(gen_config, ffe_config)
    f = Generator(gen_config, ffe_config)
    if pretrained_ffe is not None:
        g.load_pretrained_encoder(pretrained_ffe)
        f.load_pretrained_encoder(pretrained_ffe)
    d_v = PatchDiscriminator(disc_config)
    d_n = PatchDiscriminator(disc_config)

    opt_g = torch.optim.Adam(
        itertools.chain(g.parameters(), f.parameters()),
        lr=config.learning_rate, betas=ADAM_BETAS,
    )
    opt_d_v = torch.optim.Adam(d_v.parameters(), lr=config.learning_rate, betas=ADAM_BETAS)
    opt_d_n = torch.optim.Adam(d_n.parameters(), lr=config.learning_rate, betas=ADAM_BETAS)

    batch_ss, pool_ss = np.random.SeedSequence(config.seed).spawn(2)
    return TrainState(
        g, f, d_v, d_n, opt_g, opt_d_v, opt_d_n,
        ImagePool(config.image_pool_size), ImagePool(config.image_pool_size),
        config,
        np.random.Generator(np.random.PCG64(batch_ss)),
        np.random.Generator(np.random.PCG64(pool_ss)),
    )


def train_step(batch_paired, state: TrainState) -> LossRecord:
    """One generator update followed by one update of each discriminator."""
    if not isinstance(batch_paired, (tuple, list)) or len(batch_paired) != 2:
        raise PairingError("train_step needs an index-aligned (vis, nir) batch")
    vis, nir = batch_paired
    w = state.weights

    for m in (state.g, state.f, state.d_v, state.d_n):
        m.train()

    # generator half-step: G, F and both encoders jointly
    fake_nir = state.g(vis)
    fake_vis = state.f(nir)
    rec_vis = state.f(fake_nir)
    rec_nir = state.g(fake_vis)
    adv_g = lsgan_loss_generator(state.d_n(fake_nir))
    adv_f = lsgan_loss_generator(state.d_v(fake_vis))
    cyc = cycle_loss(vis, rec_vis, nir, rec_nir)
    pc = pixel_consistency_loss(fake_nir, nir, fake_vis, vis)
    total = total_objective(adv_g, adv_f, cyc, pc, w)
    state.opt_g.zero_grad(set_to_none=True)
    total.backward()
    state.opt_g.step()

    # discriminator half-steps on real images and history-pooled fakes
    pooled_nir = state.pool_nir.query(fake_nir.detach(), state.pool_rng)
    d_n_loss = lsgan_loss_discriminator(state.d_n(nir), state.d_n(pooled_nir))
    state.opt_d_n.zero_grad(set_to_none=True)
    d_n_loss.backward()
    state.opt_d_n.step()

    pooled_vis = state.pool_vis.query(fake_vis.detach(), state.pool_rng)
    d_v_loss = lsgan_loss_discriminator(state.d_v(vis), state.d_v(pooled_vis))
    state.opt_d_v.zero_grad(set_to_none=True)
    d_v_loss.backward()
    state.opt_d_v.step()

    state.step += 1
    record = LossRecord(
        adv_g=float(adv_g.detach()),
        adv_f=float(adv_f.detach()),
        d_v=float(d_v_loss.detach()),
        d_n=float(d_n_loss.detach()),
        cyc=float(cyc.detach()),
        pc=float(pc.detach()),
        total=float(total.detach()),
        step=state.step,
        wall_time=time.time(),
    )
    for term in ("adv_g", "adv_f", "d_v", "d_n", "cyc", "pc", "total"):
        if not np.isfinite(getattr(record, term)):
            raise DivergenceError(term, state.step)
    return record


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _set_rng_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state


def state_to_checkpoint(
    state: TrainState, path: Path, extra_meta: dict | None = None
) -> ckpt.CheckpointManifest:
    """Serialize the full training state into one container file."""
    arrays: dict = {}
    arrays.update(ckpt.module_arrays("model.g", state.g))
    arrays.update(ckpt.module_arrays("model.f", state.f))
    arrays.update(ckpt.module_arrays("model.d_v", state.d_v))
    arrays.update(ckpt.module_arrays("model.d_n", state.d_n))
    opt_meta: dict = {}
    for name, opt in (("g", state.opt_g), ("d_v", state.opt_d_v), ("d_n", state.opt_d_n)):
        arrs, skeleton = ckpt.optimizer_arrays(f"optim.{name}", opt)
        arrays.update(arrs)
        opt_meta[name] = skeleton
    arrays["pool.nir"] = state.pool_nir.state_array(state.config.resolution)
    arrays["pool.vis"] = state.pool_vis.state_array(state.config.resolution)
    arrays["rng.torch"] = torch.get_rng_state().numpy()

    meta = {
        "step": state.step,
        "epoch": state.epoch,
        "train_config": _train_config_doc(state.config),
        "optimizers": opt_meta,
        "rng": {
            "batch": _rng_state(state.batch_rng),
            "pool": _rng_state(state.pool_rng),
        },
        "generator_config": asdict(state.g.config),
        "ffe_config": _ffe_config_doc(state.g),
        "discriminator_config": asdict(state.d_v.config),
    }
    if extra_meta:
        meta.update(extra_meta)
    return ckpt.save_checkpoint(path, arrays, meta)


def _train_config_doc(config: TrainConfig) -> dict:
    doc = asdict(config)
    doc["loss_weights"] = asdict(config.loss_weights)
    return doc


def _ffe_config_doc(gen: Generator):
    from .backbone import FaceFeatureExtractor

    if isinstance(gen.encoder, FaceFeatureExtractor):
        doc = asdict(gen.encoder.config)
        doc["bottleneck_spec"] = [list(row) for row in gen.encoder.config.bottleneck_spec]
        return doc
    return None


def train_config_from_doc(doc: dict) -> TrainConfig:
    doc = dict(doc)
    doc["loss_weights"] = LossWeights(**doc["loss_weights"])
    return TrainConfig(**doc)


def state_from_checkpoint(path: Path) -> TrainState:
    """Rebuild a TrainState that continues exactly where the checkpoint stopped."""
    manifest, arrays = ckpt.load_checkpoint(path)
    meta = manifest.meta
    config = train_config_from_doc(meta["train_config"])
    gen_config = GeneratorConfig(**{
        **meta["generator_config"],
        "decoder_channels": tuple(meta["generator_config"]["decoder_channels"]),
    })
    ffe_config = None
    if meta.get("ffe_config"):
        doc = dict(meta["ffe_config"])
        doc["bottleneck_spec"] = tuple(tuple(row) for row in doc["bottleneck_spec"])
        ffe_config = FFEConfig(**doc)
    disc_config = DiscriminatorConfig(**{
        **meta["discriminator_config"],
        "layer_channels": tuple(meta["discriminator_config"]["layer_channels"]),
        "strides": tuple(meta["discriminator_config"]["strides"]),
    })

    state = build_train_state(config, gen_config, ffe_config, disc_config)
    ckpt.load_module_arrays(state.g, "model.g", arrays)
    ckpt.load_module_arrays(state.f, "model.f", arrays)
    ckpt.load_module_arrays(state.d_v, "model.d_v", arrays)
    ckpt.load_module_arrays(state.d_n, "model.d_n", arrays)
    for name, opt in (("g", state.opt_g), ("d_v", state.opt_d_v), ("d_n", state.opt_d_n)):
        ckpt.restore_optimizer(opt, f"optim.{name}", arrays, meta["optimizers"][name])
    state.pool_nir.load_state_array(arrays["pool.nir"])
    state.pool_vis.load_state_array(arrays["pool.vis"])
    torch.set_rng_state(torch.from_numpy(arrays["rng.torch"]))
    _set_rng_state(state.batch_rng, meta["rng"]["batch"])
    _set_rng_state(state.pool_rng, meta["rng"]["pool"])
    state.step = manifest.step
    state.epoch = manifest.epoch
    return state


def load_generator_for_inference(path: Path) -> tuple[Generator, ckpt.CheckpointManifest]:
    """The VIS -> NIR mapping network from a checkpoint, in eval mode."""
    state = state_from_checkpoint(path)
    manifest, _ = ckpt.load_checkpoint(path)
    state.g.eval()
    return state.g, manifest


def train_loop(
    split: ProtocolSplit,
    config: TrainConfig | None,
    out_dir: Path,
    gen_config: GeneratorConfig | None = None,
    ffe_config: FFEConfig | None = None,
    disc_config: DiscriminatorConfig | None = None,
    pretrained_ffe: dict | None = None,
    resume_from: Path | None = None,
    log_name: str = "loss_log.jsonl",
) -> ckpt.CheckpointManifest:
    """Run the configured number of epochs over the split's training pairs.

    Writes per-step loss records to ``out_dir/loss_log.jsonl``, periodic
    checkpoints at epoch boundaries, and ``checkpoint_final.ckpt``.  On a
    non-finite loss the run aborts and the last epoch checkpoint is kept.
    When resuming, a non-None ``config`` replaces the checkpointed one (e.g.
    to extend epochs for fine-tuning on a second dataset).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume_from is not None:
        state = state_from_checkpoint(resume_from)
        if config is not None:
            state.config = config
    elif config is None:
        raise ConfigError("train_loop needs a config when not resuming")
    else:
        state = build_train_state(
            config, gen_config, ffe_config, disc_config, pretrained_ffe
        )
    config = state.config

    loader = PairedEpochLoader(split.train_samples, config.batch_size, config.resolution)
    if loader.steps_per_epoch == 0:
        raise ConfigError(
            f"batch_size {config.batch_size} exceeds the {len(split.train_samples)} "
            "training pairs"
        )

    log_path = out_dir / log_name
    with open(log_path, "a", encoding="utf-8") as log:
        for epoch in range(state.epoch + 1, config.epochs + 1):
            state.epoch = epoch
            lr = config.learning_rate * learning_rate_factor(
                epoch, config.epochs, config.decay_start_fraction
            )
            state.set_learning_rate(lr)
            state.set_encoder_frozen(epoch <= config.freeze_ffe_epochs)
            try:
                for batch in loader.epoch(state.batch_rng):
                    record = train_step(batch, state)
                    log.write(record.to_json_line() + "\n")
            except DivergenceError:
                log.flush()
                raise
            log.flush()
            if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                path = out_dir / f"checkpoint_epoch{epoch:04d}.ckpt"
                state_to_checkpoint(state, path, {"split_name": split.name})

    return state_to_checkpoint(
        state, out_dir / "checkpoint_final.ckpt", {"split_name": split.name}
    )
