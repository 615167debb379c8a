"""Cross-spectral verification: translate VIS probes to fake NIR, embed, match.

Every probe is compared against every gallery image (cosine similarity of
unit embeddings); a pair is genuine when subject IDs agree.  Reported
metrics are the Rank-1 identification rate and the true-accept rate at fixed
false-accept levels, with thresholds restricted to the observed score set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .backbone import FaceFeatureExtractor, embed_images
from .exceptions import EvalProtocolError
from .generator import Generator

FAR_LEVELS = (0.01, 0.001)


@dataclass
class ScoreMatrix:
    scores: np.ndarray  # (n_probes, n_gallery) cosine similarities
    probe_ids: list
    gallery_ids: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise EvalProtocolError("score matrix must be 2-d")
        if self.scores.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise EvalProtocolError(
                f"score matrix shape {self.scores.shape} does not match "
                f"{len(self.probe_ids)} probes x {len(self.gallery_ids)} gallery entries"
            )
        if self.scores.size and (self.scores.min() < -1.0001 or self.scores.max() > 1.0001):
            raise EvalProtocolError("cosine scores must lie in [-1, 1]")

    def genuine_mask(self) -> np.ndarray:
        p = np.asarray(self.probe_ids, dtype=object)[:, None]
        g = np.asarray(self.gallery_ids, dtype=object)[None, :]
        return p == g


@dataclass
class TarOperatingPoint:
    tar: float
    threshold: float
    achieved_far: float


@dataclass
class EvalReport:
    rank1: float
    tar_at_far: dict  # FAR level -> TAR
    n_genuine: int
    n_impostor: int
    protocol: str = "custom"
    checkpoint_step: int = 0

    def to_json(self) -> str:
        doc = {
            "protocol": self.protocol,
            "rank1": self.rank1,
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
            "checkpoint_step": self.checkpoint_step,
        }
        for level, tar in sorted(self.tar_at_far.items(), reverse=True):
            doc[f"tar_far_{level:g}"] = tar
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json())


def translate_images(generator: Generator, images: Tensor, batch_size: int = 16) -> Tensor:
    generator.eval()
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            out.append(generator(images[start : start + batch_size]))
    return torch.cat(out, dim=0)


def build_score_matrix(
    probes_vis: Tensor,
    probe_ids: list,
    gallery_nir: Tensor,
    gallery_ids: list,
    generator: Generator,
    matcher: FaceFeatureExtractor,
) -> ScoreMatrix:
    """Cosine scores between embedded fake-NIR probes and embedded gallery."""
    if len(probe_ids) == 0 or len(gallery_ids) == 0:
        raise EvalProtocolError("probe and gallery sets must be non-empty")
    if probes_vis.shape[0] != len(probe_ids) or gallery_nir.shape[0] != len(gallery_ids):
        raise EvalProtocolError("image counts do not match identifier lists")
    fake_nir = translate_images(generator, probes_vis)
    probe_emb = embed_images(matcher, fake_nir).double().numpy()
    gallery_emb = embed_images(matcher, gallery_nir).double().numpy()
    scores = np.clip(probe_emb @ gallery_emb.T, -1.0, 1.0)
    return ScoreMatrix(scores, list(probe_ids), list(gallery_ids))


def rank1(matrix: ScoreMatrix) -> float:
    """Fraction of probes whose best-scoring gallery entry shares their subject.

    Ties break toward the lowest gallery index.
    """
    gallery = set(matrix.gallery_ids)
    for pid in matrix.probe_ids:
        if pid not in gallery:
            raise EvalProtocolError(f"probe subject {pid!r} absent from gallery")
    best = matrix.scores.argmax(axis=1)  # first occurrence wins ties
    hits = sum(
        1
        for row, col in enumerate(best)
        if matrix.gallery_ids[col] == matrix.probe_ids[row]
    )
    return hits / len(matrix.probe_ids)


def split_scores(matrix: ScoreMatrix) -> tuple[np.ndarray, np.ndarray]:
    mask = matrix.genuine_mask()
    return matrix.scores[mask], matrix.scores[~mask]


def tar_at_far(matrix: ScoreMatrix, far_levels=FAR_LEVELS) -> dict:
    """TAR at each requested FAR level.

    The threshold is the smallest observed score whose impostor-acceptance
    rate stays <= the level (equivalently, the achievable FAR closest to the
    level from below); acceptance means score >= threshold.  When even the
    largest observed score admits too many impostors, the result reports the
    smallest achievable FAR instead.
    """
    genuine, impostor = split_scores(matrix)
    if impostor.size == 0:
        raise EvalProtocolError("no impostor pairs; TAR@FAR is undefined")
    if genuine.size == 0:
        raise EvalProtocolError("no genuine pairs; TAR@FAR is undefined")
    imp_sorted = np.sort(impostor)
    gen_sorted = np.sort(genuine)
    thresholds = np.unique(matrix.scores)  # ascending

    def far_at(t: float) -> float:
        return (impostor.size - np.searchsorted(imp_sorted, t, side="left")) / impostor.size

    def tar_at(t: float) -> float:
        return (genuine.size - np.searchsorted(gen_sorted, t, side="left")) / genuine.size

    out = {}
    for level in far_levels:
        admissible = [t for t in thresholds if far_at(t) <= level]
        t_star = float(min(admissible)) if admissible else float(thresholds[-1])
        out[level] = TarOperatingPoint(tar_at(t_star), t_star, far_at(t_star))
    return out


def evaluate_matrix(
    matrix: ScoreMatrix,
    protocol: str = "custom",
    checkpoint_step: int = 0,
    far_levels=FAR_LEVELS,
) -> EvalReport:
    genuine, impostor = split_scores(matrix)
    points = tar_at_far(matrix, far_levels)
    return EvalReport(
        rank1=rank1(matrix),
        tar_at_far={level: pt.tar for level, pt in points.items()},
        n_genuine=int(genuine.size),
        n_impostor=int(impostor.size),
        protocol=protocol,
        checkpoint_step=checkpoint_step,
    )


def evaluate_protocol(
    split,
    checkpoint_path: Path,
    matcher: FaceFeatureExtractor,
    resolution: int | None = None,
    far_levels=FAR_LEVELS,
) -> EvalReport:
    """End-to-end report over the test subjects of a split."""
    from .data import _stack
    from .training import load_generator_for_inference

    overlap = set(split.train_subjects) & set(split.test_subjects)
    if overlap:
        raise EvalProtocolError(f"train/test subject overlap: {sorted(overlap)}")
    if not split.test_samples:
        raise EvalProtocolError("test partition is empty")

    generator, manifest = load_generator_for_inference(checkpoint_path)
    res = resolution or manifest.train_config.get("resolution", 64)
    probes = _stack(split.test_samples, res, "vis")
    gallery = _stack(split.test_samples, res, "nir")
    ids = [s.subject_id for s in split.test_samples]
    matrix = build_score_matrix(probes, ids, gallery, ids, generator, matcher)
    return evaluate_matrix(matrix, split.name, manifest.step, far_levels)
