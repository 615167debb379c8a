"""Paired VIS/NIR face data: synthesis, protocol splits, loading.

The on-disk convention is ``root/{vis|nir}/{subject_id}/{pose_tag}_{index}.png``
with pairing by identical relative path under the two domain roots.  VIS
images are 8-bit RGB, NIR images 8-bit grayscale; both load as 3-channel
float tensors in [-1, 1] (grayscale replicated) so the two mapping networks
are shape-symmetric.

The synthetic generator stands in for real paired face databases: each
subject is a fixed random parameterization of an ellipse face (geometry,
feature offsets, base colors), pose varies per image, and the NIR partner is
a deterministic spectral proxy of the VIS render plus vignette, sensor noise
and a small translation so pairs are approximately but not pixel-exactly
aligned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw, UnidentifiedImageError
from torch import Tensor

from .exceptions import (
    ConfigError,
    DataError,
    DecodeError,
    RangeError,
    SplitProtocolError,
)

POSE_TAGS = (
    "neutral-frontal",
    "tilt-up",
    "tilt-down",
    "left-rotation",
    "right-rotation",
    "blank",
    "smile",
)

VIGNETTE_STRENGTH = 0.3
SUPERSAMPLE = 4  # render scale for antialiased ellipse edges


@dataclass(frozen=True)
class PairedSample:
    subject_id: str
    pose_tag: str
    vis_path: Path
    nir_path: Path


@dataclass
class ProtocolSplit:
    train_subjects: tuple
    test_subjects: tuple
    pairs_per_subject: int
    train_samples: list = field(default_factory=list)
    test_samples: list = field(default_factory=list)
    name: str = "custom"

    def __post_init__(self):
        overlap = set(self.train_subjects) & set(self.test_subjects)
        if overlap:
            raise SplitProtocolError(
                f"train and test subjects overlap: {sorted(overlap)}"
            )


@dataclass(frozen=True)
class SyntheticSpec:
    n_subjects: int
    images_per_subject: int
    resolution: int = 64
    jitter_px: int = 3
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1 or self.images_per_subject < 1 or self.resolution < 1:
            raise ConfigError("synthetic spec counts must be >= 1")
        if self.jitter_px < 0:
            raise ConfigError("jitter_px must be >= 0")


def spectral_proxy_transform(rgb: np.ndarray) -> np.ndarray:
    """Per-pixel VIS -> NIR intensity proxy.

    ``rgb`` is an array with channel-last shape (..., 3), values in [0, 1].
    Returns ``clip((0.6 r + 0.3 g + 0.1 b)**0.8, 0, 1)`` with the channel axis
    dropped.  Vignette and noise are applied at image level, not here.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise RangeError(f"expected channel-last RGB input, got shape {rgb.shape}")
    if rgb.min() < 0.0 or rgb.max() > 1.0:
        raise RangeError("RGB values must lie in [0, 1]")
    lin = 0.6 * rgb[..., 0] + 0.3 * rgb[..., 1] + 0.1 * rgb[..., 2]
    return np.clip(lin**0.8, 0.0, 1.0)


def radial_vignette(height: int, width: int) -> np.ndarray:
    """Multiplicative vignette, 1 at the center falling to 0.7 at the corners."""
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    y = np.arange(height)[:, None] - cy
    x = np.arange(width)[None, :] - cx
    d2 = y**2 + x**2
    return 1.0 - VIGNETTE_STRENGTH * d2 / d2.max()


def proxy_nir_image(
    vis_rgb: np.ndarray, noise_sigma: float, rng: np.random.Generator | None
) -> np.ndarray:
    """Image-level proxy: per-pixel transform, vignette, additive noise, clip."""
    nir = spectral_proxy_transform(vis_rgb)
    nir = nir * radial_vignette(*nir.shape)
    if noise_sigma > 0:
        if rng is None:
            raise ConfigError("noise_sigma > 0 requires a random generator")
        nir = nir + rng.normal(0.0, noise_sigma, size=nir.shape)
    return np.clip(nir, 0.0, 1.0)


def _translate(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer translation with edge replication."""
    if dx == 0 and dy == 0:
        return img
    pad = max(abs(dx), abs(dy))
    padded = np.pad(img, pad, mode="edge")
    h, w = img.shape
    return padded[pad + dy : pad + dy + h, pad + dx : pad + dx + w]


def _subject_params(rng: np.random.Generator) -> dict:
    """Fixed per-identity face parameterization."""
    skin_r = rng.uniform(0.55, 0.92)
    skin = (skin_r, skin_r * rng.uniform(0.68, 0.85), skin_r * rng.uniform(0.45, 0.68))
    return {
        "face_rx": rng.uniform(0.28, 0.38),
        "face_ry": rng.uniform(0.36, 0.46),
        "skin": skin,
        "hair": tuple(rng.uniform(0.05, 0.45, size=3)),
        "hair_frac": rng.uniform(0.18, 0.32),
        "bg": tuple(rng.uniform(0.55, 0.95, size=3)),
        "eye_dx": rng.uniform(0.10, 0.17),
        "eye_y": rng.uniform(-0.12, -0.04),
        "eye_r": rng.uniform(0.035, 0.06),
        "pupil": tuple(rng.uniform(0.02, 0.35, size=3)),
        "brow_gap": rng.uniform(0.05, 0.09),
        "nose_len": rng.uniform(0.10, 0.18),
        "nose_w": rng.uniform(0.02, 0.05),
        "mouth_y": rng.uniform(0.16, 0.26),
        "mouth_w": rng.uniform(0.10, 0.20),
        "mouth_h": rng.uniform(0.025, 0.05),
        "lip": tuple(rng.uniform(0.25, 0.75, size=3) * np.array([1.0, 0.45, 0.45])),
    }


def _pose_adjust(pose: str) -> dict:
    """Geometric deformation of the base face for each pose/expression tag."""
    adj = {"dx": 0.0, "dy": 0.0, "squeeze": 1.0, "mouth_curve": 0.0, "eyes_closed": False}
    if pose == "tilt-up":
        adj["dy"] = -0.07
    elif pose == "tilt-down":
        adj["dy"] = 0.07
    elif pose == "left-rotation":
        adj.update(dx=-0.08, squeeze=0.85)
    elif pose == "right-rotation":
        adj.update(dx=0.08, squeeze=0.85)
    elif pose == "blank":
        adj["eyes_closed"] = True
    elif pose == "smile":
        adj["mouth_curve"] = 1.0
    return adj


def render_vis_face(
    params: dict, pose: str, rng: np.random.Generator, resolution: int
) -> np.ndarray:
    """Render one VIS face as a float RGB array in [0, 1]."""
    s = resolution * SUPERSAMPLE
    adj = _pose_adjust(pose)
    jx = adj["dx"] + rng.uniform(-0.012, 0.012)
    jy = adj["dy"] + rng.uniform(-0.012, 0.012)
    light = rng.uniform(0.92, 1.08)

    def color(c):
        return tuple(int(round(np.clip(v * light, 0, 1) * 255)) for v in c)

    def xy(fx, fy):
        return (0.5 + fx) * s, (0.52 + fy) * s

    img = Image.new("RGB", (s, s), color(params["bg"]))
    draw = ImageDraw.Draw(img)

    rx = params["face_rx"] * adj["squeeze"] * s
    ry = params["face_ry"] * s
    cx, cy = xy(jx * 0.4, jy * 0.4)
    draw.ellipse((cx - rx, cy - ry, cx + rx, cy + ry), fill=color(params["skin"]))
    # hair: a cap clipped to the upper face ellipse
    hair_h = params["hair_frac"] * 2 * ry
    draw.ellipse((cx - rx, cy - ry, cx + rx, cy - ry + 2 * hair_h), fill=color(params["hair"]))

    for side in (-1, 1):
        ex, ey = xy(side * params["eye_dx"] + jx, params["eye_y"] + jy)
        er = params["eye_r"] * s
        if adj["eyes_closed"]:
            draw.line((ex - er, ey, ex + er, ey), fill=color(params["pupil"]),
                      width=max(1, s // 80))
        else:
            draw.ellipse((ex - er, ey - er, ex + er, ey + er), fill=(250, 250, 250))
            pr = er * 0.55
            draw.ellipse((ex - pr, ey - pr, ex + pr, ey + pr), fill=color(params["pupil"]))
        by = ey - params["brow_gap"] * s
        draw.line((ex - er, by, ex + er, by), fill=color(params["hair"]),
                  width=max(1, s // 60))

    nx, ny = xy(jx, jy)
    nw, nl = params["nose_w"] * s, params["nose_len"] * s
    draw.polygon([(nx, ny), (nx - nw, ny + nl), (nx + nw, ny + nl)],
                 fill=color(tuple(v * 0.82 for v in params["skin"])))

    mx, my = xy(jx, params["mouth_y"] + jy)
    mw, mh = params["mouth_w"] * s, params["mouth_h"] * s
    if adj["mouth_curve"] > 0:
        draw.chord((mx - mw, my - mh * 2.2, mx + mw, my + mh * 2.2), 15, 165,
                   fill=color(params["lip"]))
    else:
        draw.ellipse((mx - mw, my - mh, mx + mw, my + mh), fill=color(params["lip"]))

    img = img.resize((resolution, resolution), Image.LANCZOS)
    return np.asarray(img, dtype=np.float64) / 255.0


def generate_synthetic_dataset(spec: SyntheticSpec, out_dir: Path) -> list[PairedSample]:
    """Write a paired synthetic dataset; byte-identical for a fixed seed."""
    out_dir = Path(out_dir)
    try:
        (out_dir / "vis").mkdir(parents=True, exist_ok=True)
        (out_dir / "nir").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out_dir}: {exc}") from exc

    root_ss = np.random.SeedSequence(spec.seed)
    subject_seeds = root_ss.spawn(spec.n_subjects)
    samples = []
    for si in range(spec.n_subjects):
        subject_id = f"s{si:03d}"
        param_ss, images_ss = subject_seeds[si].spawn(2)
        params = _subject_params(np.random.Generator(np.random.PCG64(param_ss)))
        image_seeds = images_ss.spawn(spec.images_per_subject)
        vis_dir = out_dir / "vis" / subject_id
        nir_dir = out_dir / "nir" / subject_id
        vis_dir.mkdir(exist_ok=True)
        nir_dir.mkdir(exist_ok=True)
        for ii in range(spec.images_per_subject):
            rng = np.random.Generator(np.random.PCG64(image_seeds[ii]))
            pose = POSE_TAGS[ii % len(POSE_TAGS)]
            # quantize the VIS render first so the NIR partner is the proxy
            # transform of exactly what lands on disk
            vis = render_vis_face(params, pose, rng, spec.resolution)
            vis = np.round(vis * 255) / 255.0
            nir = proxy_nir_image(vis, spec.noise_sigma, rng)
            if spec.jitter_px > 0:
                dx, dy = rng.integers(-spec.jitter_px, spec.jitter_px + 1, size=2)
                nir = _translate(nir, int(dx), int(dy))
            name = f"{pose}_{ii:03d}.png"
            try:
                Image.fromarray((vis * 255).round().astype(np.uint8), "RGB").save(
                    vis_dir / name
                )
                Image.fromarray((nir * 255).round().astype(np.uint8), "L").save(
                    nir_dir / name
                )
            except OSError as exc:
                raise DataError(f"cannot write image under {out_dir}: {exc}") from exc
            samples.append(
                PairedSample(subject_id, pose, vis_dir / name, nir_dir / name)
            )

    provenance = {"type": "synthetic", **{k: getattr(spec, k) for k in (
        "n_subjects", "images_per_subject", "resolution", "jitter_px",
        "noise_sigma", "seed")}}
    (out_dir / "synthetic_spec.json").write_text(
        json.dumps(provenance, indent=2, sort_keys=True) + "\n"
    )
    return samples


def scan_dataset(root: Path) -> list[PairedSample]:
    """Collect paired samples from the on-disk layout."""
    root = Path(root)
    vis_root = root / "vis"
    if not vis_root.is_dir():
        raise DataError(f"no 'vis' directory under {root}")
    samples = []
    for vis_path in sorted(vis_root.glob("*/*.png")):
        rel = vis_path.relative_to(vis_root)
        nir_path = root / "nir" / rel
        if not nir_path.is_file():
            raise DataError(f"missing NIR partner for {vis_path}")
        pose = rel.name.rsplit("_", 1)[0]
        samples.append(PairedSample(rel.parts[0], pose, vis_path, nir_path))
    if not samples:
        raise DataError(f"no samples found under {root}")
    return samples


def make_split(
    samples: list[PairedSample],
    n_train_subjects: int,
    n_test_subjects: int,
    pairs_per_subject: int,
    seed: int,
    name: str = "custom",
) -> ProtocolSplit:
    """Subject-disjoint protocol split with a fixed pair count per subject."""
    by_subject: dict[str, list[PairedSample]] = {}
    for s in samples:
        by_subject.setdefault(s.subject_id, []).append(s)
    subjects = sorted(by_subject)
    needed = n_train_subjects + n_test_subjects
    if len(subjects) < needed:
        raise SplitProtocolError(
            f"need {needed} subjects, dataset has {len(subjects)}"
        )
    short = [s for s in subjects if len(by_subject[s]) < pairs_per_subject]
    if short:
        raise SplitProtocolError(
            f"subjects with fewer than {pairs_per_subject} pairs: {short[:5]}"
        )

    rng = np.random.Generator(np.random.PCG64(seed))
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    train_subjects = tuple(sorted(order[:n_train_subjects]))
    test_subjects = tuple(sorted(order[n_train_subjects:needed]))

    def pick(subject_ids):
        picked = []
        for sid in subject_ids:
            pool = by_subject[sid]
            idx = rng.permutation(len(pool))[:pairs_per_subject]
            picked.extend(pool[i] for i in sorted(idx))
        return picked

    return ProtocolSplit(
        train_subjects,
        test_subjects,
        pairs_per_subject,
        pick(train_subjects),
        pick(test_subjects),
        name,
    )


def save_split(split: ProtocolSplit, path: Path) -> None:
    """Persist a split manifest (subject IDs per partition plus chosen pairs)."""
    doc = {
        "name": split.name,
        "pairs_per_subject": split.pairs_per_subject,
        "train_subjects": list(split.train_subjects),
        "test_subjects": list(split.test_subjects),
        "train_pairs": [_rel_key(s) for s in split.train_samples],
        "test_pairs": [_rel_key(s) for s in split.test_samples],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _rel_key(sample: PairedSample) -> str:
    return f"{sample.subject_id}/{sample.vis_path.name}"


def load_split(path: Path, root: Path) -> ProtocolSplit:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"split manifest not found: {path}")
    doc = json.loads(path.read_text())
    root = Path(root)

    def rebuild(keys):
        out = []
        for key in keys:
            subject_id, fname = key.split("/", 1)
            vis_path = root / "vis" / subject_id / fname
            nir_path = root / "nir" / subject_id / fname
            if not vis_path.is_file() or not nir_path.is_file():
                raise DataError(f"split manifest references missing pair {key}")
            out.append(PairedSample(subject_id, fname.rsplit("_", 1)[0], vis_path, nir_path))
        return out

    return ProtocolSplit(
        tuple(doc["train_subjects"]),
        tuple(doc["test_subjects"]),
        int(doc["pairs_per_subject"]),
        rebuild(doc["train_pairs"]),
        rebuild(doc["test_pairs"]),
        doc.get("name", "custom"),
    )


_IMAGE_CACHE: dict[tuple, np.ndarray] = {}


def load_image(path: Path, resolution: int, domain: str) -> np.ndarray:
    """Decode one image to a (3, H, W) float32 array in [-1, 1]."""
    key = (str(path), resolution, domain)
    cached = _IMAGE_CACHE.get(key)
    if cached is not None:
        return cached
    try:
        with Image.open(path) as img:
            img = img.convert("RGB" if domain == "vis" else "L")
            if img.size != (resolution, resolution):
                img = img.resize((resolution, resolution), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    arr = arr / 255.0 * 2.0 - 1.0
    if arr.ndim == 2:
        arr = np.repeat(arr[None, :, :], 3, axis=0)
    else:
        arr = arr.transpose(2, 0, 1)
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if len(_IMAGE_CACHE) < 8192:
        _IMAGE_CACHE[key] = arr
    return arr


def _stack(samples, resolution: int, domain: str) -> Tensor:
    paths = [s.vis_path if domain == "vis" else s.nir_path for s in samples]
    return torch.from_numpy(
        np.stack([load_image(p, resolution, domain) for p in paths])
    )


def load_batch(
    split: ProtocolSplit,
    domain: str,
    batch_size: int,
    seed: int,
    resolution: int = 64,
    partition: str = "train",
):
    """One deterministic batch from a split partition.

    ``domain`` is "vis", "nir" or "paired"; paired mode returns index-aligned
    (vis, nir) tensors as Eq-style pixel pairing requires.
    """
    samples = split.train_samples if partition == "train" else split.test_samples
    if not samples:
        raise SplitProtocolError(f"{partition} partition is empty")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(samples))[:batch_size]
    chosen = [samples[i] for i in order]
    if domain == "paired":
        return _stack(chosen, resolution, "vis"), _stack(chosen, resolution, "nir")
    if domain not in ("vis", "nir"):
        raise ConfigError(f"unknown domain {domain!r}")
    return _stack(chosen, resolution, domain)


class PairedEpochLoader:
    """Deterministic epoch iterator over index-aligned (VIS, NIR) batches.

    Shuffling consumes the generator passed in, so epoch order is a pure
    function of the generator state; partial trailing batches are dropped.
    """

    def __init__(self, samples, batch_size: int, resolution: int):
        if not samples:
            raise SplitProtocolError("cannot iterate an empty sample list")
        self.samples = list(samples)
        self.batch_size = batch_size
        self.resolution = resolution

    @property
    def steps_per_epoch(self) -> int:
        return len(self.samples) // self.batch_size

    def epoch(self, rng: np.random.Generator):
        order = rng.permutation(len(self.samples))
        n_batches = len(self.samples) // self.batch_size
        for b in range(n_batches):
            idx = order[b * self.batch_size : (b + 1) * self.batch_size]
            chosen = [self.samples[i] for i in idx]
            yield (_stack(chosen, self.resolution, "vis"),
                   _stack(chosen, self.resolution, "nir"))


def make_labeled_set(samples, resolution: int):
    """VIS images with integer identity labels for FFE pretraining."""
    from .backbone import LabeledFaceSet

    subjects = sorted({s.subject_id for s in samples})
    label_of = {sid: i for i, sid in enumerate(subjects)}
    images = _stack(samples, resolution, "vis")
    labels = torch.tensor([label_of[s.subject_id] for s in samples], dtype=torch.int64)
    return LabeledFaceSet(images, labels, tuple(subjects))
