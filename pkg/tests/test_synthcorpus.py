import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from stdeep.errors import UnknownMethod
from stdeep.manifest import METHODS, load_manifest
from stdeep.synthcorpus import (
    _DEFAULT_PARAMS,
    BRIGHTNESS_RHO,
    BRIGHTNESS_SIGMA,
    CorpusConfig,
    SynthMethod,
    ar1_brightness,
    apply_method,
    build_corpus,
    generate_real,
    render_video,
)


def lag1_autocorr(x):
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    return float((d[:-1] * d[1:]).mean() / d.var())


def dir_digest(path: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(path)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestGenerateReal:
    def test_deterministic_in_seed(self):
        a = generate_real(0, 16, 64)
        b = generate_real(0, 16, 64)
        assert np.array_equal(a, b)
        c = generate_real(1, 16, 64)
        assert not np.array_equal(a, c)

    def test_frame_count_and_shape(self):
        frames = generate_real(3, 16, 48)
        assert frames.shape == (16, 48, 48, 3)
        assert frames.dtype == np.uint8

    def test_min_frames_enforced(self):
        with pytest.raises(ValueError):
            generate_real(0, 8, 64)

    def test_brightness_series_is_stationary_ar1(self):
        rng = np.random.default_rng(0)
        b = ar1_brightness(rng, 200_000)
        assert lag1_autocorr(b) == pytest.approx(BRIGHTNESS_RHO, abs=0.01)
        assert b.std() == pytest.approx(BRIGHTNESS_SIGMA, rel=0.02)

    def test_frame_mean_lag1_autocorr_near_09(self):
        # 10k frames; the AR(1) offset dominates frame-mean variation
        frames = generate_real(7, 10_000, 32)
        means = frames.astype(np.float64).mean(axis=(1, 2, 3))
        assert lag1_autocorr(means) == pytest.approx(0.9, abs=0.03)


@pytest.fixture(scope="module")
def real():
    return render_video(123, 16, 64)


class TestApplyMethod:
    def test_unknown_method_rejected(self):
        with pytest.raises(UnknownMethod):
            SynthMethod("M9_nonsense")

    def test_zero_magnitude_params_identity(self, real):
        for name in METHODS:
            zero = {k: 0.0 for k in _DEFAULT_PARAMS[name]}
            out = apply_method(
                real.frames, SynthMethod(name, zero), seed=5, brightness=real.brightness
            )
            assert np.array_equal(out, real.frames), name

    def test_m4_seam_pixels_identical_across_frames(self, real):
        fake = apply_method(real.frames, SynthMethod("M4_sharp_seam"), seed=1)
        diff = (fake.astype(np.int16) - real.frames.astype(np.int16)) != 0
        cols = np.where(diff.any(axis=(0, 1, 3)))[0]
        assert len(cols) == 2  # fixed two-column seam
        for c in cols:
            for t in range(len(fake) - 1):
                assert np.array_equal(fake[t, :, c], fake[t + 1, :, c])

    def test_m2_lag1_autocorr_near_zero(self):
        rv = render_video(11, 4000, 32)
        fake = apply_method(
            rv.frames, SynthMethod("M2_temporal_flicker"), seed=2, brightness=rv.brightness
        )
        means = fake.astype(np.float64).mean(axis=(1, 2, 3))
        assert abs(lag1_autocorr(means)) < 0.05

    def test_m2_frame_marginals_match_real_ks(self):
        # disjoint identity pools, 1k+ frames per class, two-sample KS
        real_pool, fake_pool = [], []
        for s in range(63):
            r = render_video(1000 + s, 16, 32)
            real_pool.extend(r.frames.astype(np.float64).mean(axis=(1, 2, 3)))
            r2 = render_video(5000 + s, 16, 32)
            f = apply_method(
                r2.frames, SynthMethod("M2_temporal_flicker"), seed=s, brightness=r2.brightness
            )
            fake_pool.extend(f.astype(np.float64).mean(axis=(1, 2, 3)))
        assert len(real_pool) >= 1000 and len(fake_pool) >= 1000
        ks = stats.ks_2samp(real_pool, fake_pool)
        assert ks.pvalue > 0.01

    def test_m3_frames_are_shifted_copies(self, real):
        fake = apply_method(real.frames, SynthMethod("M3_warp_jitter"), seed=3)
        # each frame matches the original under some integer shift <= warp_px
        mag = int(_DEFAULT_PARAMS["M3_warp_jitter"]["warp_px"])
        h, w = real.frames.shape[1:3]
        for t in (0, 5, 15):
            found = False
            for dx in range(-mag, mag + 1):
                for dy in range(-mag, mag + 1):
                    pad = np.pad(real.frames[t], ((mag, mag), (mag, mag), (0, 0)), mode="edge")
                    cand = pad[mag - dy : mag - dy + h, mag - dx : mag - dx + w]
                    if np.array_equal(cand, fake[t]):
                        found = True
                        break
                if found:
                    break
            assert found, f"frame {t} is not an integer shift of the original"

    def test_m1_alters_center_not_border(self, real):
        fake = apply_method(real.frames, SynthMethod("M1_blend_boundary"), seed=4)
        diff = (fake.astype(np.int16) - real.frames.astype(np.int16)).any(axis=3)
        assert diff[:, 32, 32].all()  # inner region recomposited
        assert not diff[:, :2, :].any()  # far border untouched

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            apply_method(np.zeros((0, 8, 8, 3), np.uint8), SynthMethod("M4_sharp_seam"), 0)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig(
        out_dir=out,
        reals_per_split={"train": 3, "val": 2, "test": 2},
        n_frames=16,
        frame_size=32,
    )
    return build_corpus(cfg, seed=9), out


class TestBuildCorpus:
    def test_counts_per_split(self, small):
        manifest, _ = small
        for split, n_reals in (("train", 3), ("val", 2), ("test", 2)):
            records = manifest.split(split)
            assert sum(1 for r in records if r.label == "real") == n_reals
            assert sum(1 for r in records if r.label == "fake") == n_reals * len(METHODS)

    def test_default_desk_config_counts(self):
        cfg = CorpusConfig(out_dir="unused")
        reals = cfg.reals_per_split
        assert reals == {"train": 72, "val": 14, "test": 14}
        # 4 methods -> 288/56/56 fakes
        assert {k: v * len(cfg.methods) for k, v in reals.items()} == {
            "train": 288, "val": 56, "test": 56,
        }

    def test_each_record_in_exactly_one_split(self, small):
        manifest, _ = small
        ids = [r.id for r in manifest.records]
        assert len(ids) == len(set(ids))

    def test_real_ids_disjoint_across_splits(self, small):
        manifest, _ = small
        per_split = [
            {r.id for r in manifest.split(s) if r.label == "real"}
            for s in ("train", "val", "test")
        ]
        assert not (per_split[0] & per_split[1])
        assert not (per_split[0] & per_split[2])
        assert not (per_split[1] & per_split[2])

    def test_fake_colocated_with_its_real(self, small):
        manifest, _ = small
        by_id = manifest.by_id()
        for r in manifest.records:
            if r.label == "fake":
                real_id = f"{r.split}_real_{r.id.rsplit('_', 1)[1]}"
                assert by_id[real_id].split == r.split

    def test_manifest_schema(self, small):
        manifest, out = small
        lines = (out / "manifest.jsonl").read_text().splitlines()
        rec = json.loads(lines[1])
        assert set(rec) >= {"id", "split", "label", "method", "frame_dir", "n_frames"}
        assert rec["label"] in ("real", "fake")

    def test_frames_and_boxes_on_disk(self, small):
        manifest, out = small
        rec = manifest.records[0]
        vdir = manifest.video_dir(rec)
        assert (vdir / "0.png").exists()
        assert (vdir / f"{rec.n_frames - 1}.png").exists()
        boxes = json.loads((vdir / "boxes.json").read_text())
        assert len(boxes) == rec.n_frames

    def test_byte_identical_reruns(self, tmp_path):
        cfg_kwargs = dict(
            reals_per_split={"train": 2, "val": 1, "test": 1}, n_frames=16, frame_size=32
        )
        build_corpus(CorpusConfig(out_dir=tmp_path / "a", **cfg_kwargs), seed=5)
        build_corpus(CorpusConfig(out_dir=tmp_path / "b", **cfg_kwargs), seed=5)
        assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")
        build_corpus(CorpusConfig(out_dir=tmp_path / "c", **cfg_kwargs), seed=6)
        assert dir_digest(tmp_path / "a") != dir_digest(tmp_path / "c")

    def test_motion_heavy_tagging(self, tmp_path):
        cfg = CorpusConfig(
            out_dir=tmp_path / "mh",
            reals_per_split={"train": 2, "val": 1, "test": 4},
            n_frames=16,
            frame_size=32,
            motion_heavy_fraction=0.5,
        )
        manifest = build_corpus(cfg, seed=1)
        tagged = [r for r in manifest.split("test") if "motion_heavy" in r.tags]
        assert sum(1 for r in tagged if r.label == "real") == 2
        assert not [r for r in manifest.split("train") if r.tags]
        reloaded = load_manifest(cfg.out_dir / "manifest.jsonl")
        assert {r.id for r in reloaded.records if "motion_heavy" in r.tags} == {
            r.id for r in tagged
        }
