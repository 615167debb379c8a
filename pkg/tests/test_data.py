"""Synthetic data, proxy transform, protocol splits, loading."""

import math

import numpy as np
import pytest
import torch

from visnir.data import (
    POSE_TAGS,
    PairedSample,
    SyntheticSpec,
    generate_synthetic_dataset,
    load_batch,
    load_image,
    load_split,
    make_split,
    proxy_nir_image,
    radial_vignette,
    save_split,
    scan_dataset,
    spectral_proxy_transform,
)
from visnir.exceptions import (
    ConfigError,
    DataError,
    DecodeError,
    RangeError,
    SplitProtocolError,
)


class TestProxyTransform:
    def test_zero_fixed_point(self):
        assert spectral_proxy_transform(np.array([0.0, 0.0, 0.0])) == pytest.approx(0.0)

    def test_white_maps_to_one(self):
        # (0.6 + 0.3 + 0.1)^0.8 = 1
        assert spectral_proxy_transform(np.array([1.0, 1.0, 1.0])) == pytest.approx(1.0)

    def test_hand_computed_value(self):
        # independent scalar computation: exp(0.8 * ln 0.75)
        expected = math.exp(0.8 * math.log(0.6 * 1.0 + 0.3 * 0.5 + 0.1 * 0.0))
        got = spectral_proxy_transform(np.array([1.0, 0.5, 0.0]))
        assert float(got) == pytest.approx(expected, abs=1e-12)
        assert float(got) == pytest.approx(0.7945, abs=1e-4)

    def test_monotone_per_channel(self):
        grid = np.linspace(0.0, 1.0, 9)
        base = np.array([0.4, 0.4, 0.4])
        for channel in range(3):
            values = []
            for v in grid:
                px = base.copy()
                px[channel] = v
                values.append(float(spectral_proxy_transform(px)))
            assert all(b >= a for a, b in zip(values, values[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(RangeError):
            spectral_proxy_transform(np.array([1.2, 0.0, 0.0]))
        with pytest.raises(RangeError):
            spectral_proxy_transform(np.array([-0.1, 0.0, 0.0]))

    def test_vectorized_over_images(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, size=(5, 7, 3))
        out = spectral_proxy_transform(img)
        assert out.shape == (5, 7)
        assert out.min() >= 0 and out.max() <= 1

    def test_vignette_profile(self):
        v = radial_vignette(9, 9)
        assert v[4, 4] == pytest.approx(1.0)
        assert v[0, 0] == pytest.approx(0.7)
        assert v.min() >= 0.7 - 1e-9

    def test_noise_requires_rng(self):
        img = np.full((4, 4, 3), 0.5)
        with pytest.raises(ConfigError):
            proxy_nir_image(img, noise_sigma=0.1, rng=None)


class TestSyntheticGeneration:
    def test_byte_identical_for_fixed_seed(self, tmp_path):
        spec = SyntheticSpec(n_subjects=2, images_per_subject=3, resolution=32, seed=7)
        a = generate_synthetic_dataset(spec, tmp_path / "a")
        b = generate_synthetic_dataset(spec, tmp_path / "b")
        assert len(a) == len(b) == 6
        for sa, sb in zip(a, b):
            assert sa.vis_path.read_bytes() == sb.vis_path.read_bytes()
            assert sa.nir_path.read_bytes() == sb.nir_path.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = generate_synthetic_dataset(
            SyntheticSpec(1, 1, resolution=32, seed=1), tmp_path / "a")
        b = generate_synthetic_dataset(
            SyntheticSpec(1, 1, resolution=32, seed=2), tmp_path / "b")
        assert a[0].vis_path.read_bytes() != b[0].vis_path.read_bytes()

    def test_degenerate_jitter_nir_equals_proxy(self, tmp_path):
        spec = SyntheticSpec(
            n_subjects=1, images_per_subject=2, resolution=32,
            jitter_px=0, noise_sigma=0.0, seed=3,
        )
        samples = generate_synthetic_dataset(spec, tmp_path / "d")
        for s in samples:
            from PIL import Image

            vis = np.asarray(Image.open(s.vis_path), dtype=np.float64) / 255.0
            nir = np.asarray(Image.open(s.nir_path), dtype=np.float64) / 255.0
            expected = np.round(proxy_nir_image(vis, 0.0, None) * 255) / 255.0
            assert np.array_equal(nir, expected)

    def test_provenance_written(self, tmp_path):
        spec = SyntheticSpec(1, 1, resolution=32, seed=0)
        generate_synthetic_dataset(spec, tmp_path / "p")
        doc = (tmp_path / "p" / "synthetic_spec.json").read_text()
        assert '"seed": 0' in doc and '"n_subjects": 1' in doc

    def test_pose_tags_cycle(self, tmp_path):
        spec = SyntheticSpec(1, 8, resolution=32, seed=0)
        samples = generate_synthetic_dataset(spec, tmp_path / "t")
        assert [s.pose_tag for s in samples[:8]] == list(POSE_TAGS) + [POSE_TAGS[0]]

    def test_scan_roundtrip(self, tmp_path):
        spec = SyntheticSpec(2, 4, resolution=32, seed=5)
        written = generate_synthetic_dataset(spec, tmp_path / "s")
        scanned = scan_dataset(tmp_path / "s")
        assert {s.vis_path for s in written} == {s.vis_path for s in scanned}
        assert all(s.subject_id in ("s000", "s001") for s in scanned)

    def test_bad_spec_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(0, 1)
        with pytest.raises(ConfigError):
            SyntheticSpec(1, 1, jitter_px=-1)


def _fake_samples(n_subjects, per_subject):
    out = []
    for s in range(n_subjects):
        sid = f"s{s:03d}"
        for i in range(per_subject):
            pose = POSE_TAGS[i % len(POSE_TAGS)]
            out.append(PairedSample(
                sid, pose,
                vis_path=f"/fake/vis/{sid}/{pose}_{i:03d}.png",
                nir_path=f"/fake/nir/{sid}/{pose}_{i:03d}.png",
            ))
    return out


class TestMakeSplit:
    def test_whu_protocol_shape(self):
        # 80 subjects, 70 train / 10 test, 20 pairs each
        split = make_split(_fake_samples(80, 20), 70, 10, 20, seed=0)
        assert len(split.train_subjects) == 70 and len(split.test_subjects) == 10
        assert len(split.train_samples) == 1400  # 1400 VIS + 1400 NIR paired files
        assert len(split.test_samples) == 200

    def test_oulu_protocol_shape(self):
        split = make_split(_fake_samples(40, 48), 20, 20, 48, seed=0)
        assert len(split.test_samples) == 960  # 960 VIS + 960 NIR probe images

    def test_minimal_split(self):
        split = make_split(_fake_samples(2, 1), 1, 1, 1, seed=0)
        assert len(split.train_subjects) == len(split.test_subjects) == 1
        assert set(split.train_subjects).isdisjoint(split.test_subjects)

    def test_disjointness_many_seeds(self):
        samples = _fake_samples(10, 3)
        for seed in range(10):
            split = make_split(samples, 6, 4, 2, seed=seed)
            assert not set(split.train_subjects) & set(split.test_subjects)

    def test_deterministic(self):
        samples = _fake_samples(10, 3)
        a = make_split(samples, 6, 4, 2, seed=3)
        b = make_split(samples, 6, 4, 2, seed=3)
        assert a.train_subjects == b.train_subjects
        assert [s.vis_path for s in a.train_samples] == [s.vis_path for s in b.train_samples]

    def test_insufficient_subjects(self):
        with pytest.raises(SplitProtocolError):
            make_split(_fake_samples(5, 3), 4, 2, 2, seed=0)

    def test_insufficient_pairs(self):
        with pytest.raises(SplitProtocolError):
            make_split(_fake_samples(4, 2), 2, 2, 3, seed=0)


@pytest.fixture(scope="module")
def disk_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    spec = SyntheticSpec(n_subjects=4, images_per_subject=6, resolution=32, seed=11)
    generate_synthetic_dataset(spec, root)
    return root


class TestSplitManifest:
    def test_roundtrip(self, disk_dataset, tmp_path):
        samples = scan_dataset(disk_dataset)
        split = make_split(samples, 3, 1, 4, seed=2, name="tiny")
        path = tmp_path / "split.json"
        save_split(split, path)
        loaded = load_split(path, disk_dataset)
        assert loaded.train_subjects == split.train_subjects
        assert loaded.test_subjects == split.test_subjects
        assert loaded.name == "tiny"
        assert [s.vis_path for s in loaded.train_samples] == [
            s.vis_path for s in split.train_samples
        ]

    def test_missing_manifest(self, disk_dataset):
        with pytest.raises(DataError):
            load_split(disk_dataset / "nope.json", disk_dataset)


class TestLoading:
    def test_batch_range_and_shape(self, disk_dataset):
        samples = scan_dataset(disk_dataset)
        split = make_split(samples, 3, 1, 4, seed=2)
        vis, nir = load_batch(split, "paired", 4, seed=0, resolution=32)
        assert vis.shape == (4, 3, 32, 32) and nir.shape == (4, 3, 32, 32)
        for t in (vis, nir):
            assert float(t.min()) >= -1.0 and float(t.max()) <= 1.0

    def test_paired_alignment(self, disk_dataset):
        # index k of the NIR batch is the partner of index k of the VIS batch:
        # reload via the sample records and compare tensors
        samples = scan_dataset(disk_dataset)
        split = make_split(samples, 3, 1, 4, seed=2)
        rng_order = np.random.Generator(np.random.PCG64(9))
        order = rng_order.permutation(len(split.train_samples))[:3]
        chosen = [split.train_samples[i] for i in order]
        vis, nir = load_batch(split, "paired", 3, seed=9, resolution=32)
        for k, sample in enumerate(chosen):
            direct = torch.from_numpy(load_image(sample.nir_path, 32, "nir"))
            assert torch.equal(nir[k], direct)
            assert sample.vis_path.parent.name == sample.nir_path.parent.name
            assert sample.vis_path.name == sample.nir_path.name

    def test_fixed_seed_deterministic(self, disk_dataset):
        samples = scan_dataset(disk_dataset)
        split = make_split(samples, 3, 1, 4, seed=2)
        a = load_batch(split, "vis", 4, seed=5, resolution=32)
        b = load_batch(split, "vis", 4, seed=5, resolution=32)
        assert torch.equal(a, b)

    def test_grayscale_replicated(self, disk_dataset):
        samples = scan_dataset(disk_dataset)
        arr = load_image(samples[0].nir_path, 32, "nir")
        assert arr.shape == (3, 32, 32)
        assert np.array_equal(arr[0], arr[1]) and np.array_equal(arr[1], arr[2])

    def test_roundtrip_quantization_bound(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(4)
        p = rng.uniform(0, 1, size=(16, 16, 3))
        path = tmp_path / "q.png"
        Image.fromarray((p * 255).round().astype(np.uint8), "RGB").save(path)
        loaded = load_image(path, 16, "vis")  # (3, H, W) in [-1, 1]
        back = (loaded.transpose(1, 2, 0) + 1.0) / 2.0
        assert np.abs(back - p).max() <= 1.0 / 255.0 + 1e-6

    def test_corrupt_image_names_file(self, tmp_path):
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"not a png at all")
        with pytest.raises(DecodeError, match="broken.png"):
            load_image(bad, 32, "vis")

    def test_empty_partition_rejected(self, disk_dataset):
        samples = scan_dataset(disk_dataset)
        split = make_split(samples, 3, 1, 4, seed=2)
        split.test_samples = []
        with pytest.raises(SplitProtocolError):
            load_batch(split, "vis", 2, seed=0, resolution=32, partition="test")
