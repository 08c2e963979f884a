import json

import pytest

from stdeep.cli import main
from stdeep.encoders import load_checkpoint


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("clicorpus")
    rc = run_cli(
        "synth", "--out", str(out), "--seed", "5", "--reals", "3,2,2",
        "--n-frames", "16", "--size", "32",
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("clitrain")
    rc = run_cli(
        "train", "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out),
        "--preset", "desk_st3d", "--epochs", "2", "--batch-size", "4", "--seed", "0",
    )
    assert rc == 0
    return out / "checkpoint.npz"


class TestSynth:
    def test_writes_manifest_and_frame_dirs(self, corpus):
        assert (corpus / "manifest.jsonl").exists()
        assert (corpus / "run_config.json").exists()
        assert (corpus / "train_real_0000" / "0.png").exists()
        assert (corpus / "test_M2_0001" / "15.png").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            run_cli(
                "synth", "--out", str(tmp_path / sub), "--seed", "5",
                "--reals", "2,1,1", "--n-frames", "16", "--size", "32",
            )
        # run_config.json embeds the out path; compare the corpus payload
        ha = {p.name: p.read_bytes() for p in (tmp_path / "a").rglob("*.png")}
        hb = {p.name: p.read_bytes() for p in (tmp_path / "b").rglob("*.png")}
        assert (tmp_path / "a" / "manifest.jsonl").read_text() == (
            tmp_path / "b" / "manifest.jsonl"
        ).read_text()
        assert ha == hb

    def test_missing_out_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("synth", "--seed", "1")
        assert exc.value.code == 2


class TestTrain:
    def test_checkpoint_and_log_written(self, checkpoint):
        assert checkpoint.exists()
        log = checkpoint.parent / "train_log.jsonl"
        entries = [json.loads(l) for l in log.read_text().splitlines()]
        assert {"epoch", "train_loss", "val_loss", "lr"} == set(entries[0])
        assert (checkpoint.parent / "run_config.json").exists()

    def test_invalid_family_is_usage_error(self, corpus, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli(
                "train", "--manifest", str(corpus / "manifest.jsonl"),
                "--out", str(tmp_path), "--family", "quantum",
            )
        assert exc.value.code == 2

    def test_exclude_methods_recorded(self, corpus, tmp_path):
        out = tmp_path / "excl"
        rc = run_cli(
            "train", "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out),
            "--preset", "desk_st3d", "--epochs", "1", "--batch-size", "4",
            "--exclude-methods", "M2", "--seed", "0",
        )
        assert rc == 0
        _, extra = load_checkpoint(out / "checkpoint.npz")
        assert "M2_temporal_flicker" not in extra["train_methods"]
        assert len(extra["train_methods"]) == 3

    def test_seq_family_requires_backbone(self, corpus, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli(
                "train", "--manifest", str(corpus / "manifest.jsonl"),
                "--out", str(tmp_path), "--family", "seq_lstm",
            )
        assert exc.value.code == 2


class TestEval:
    def test_eval_same_corpus_test_split(self, corpus, checkpoint, tmp_path):
        out = tmp_path / "eval"
        rc = run_cli(
            "eval", "--checkpoint", str(checkpoint),
            "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out),
        )
        assert rc == 0
        payload = json.loads((out / "eval.json").read_text())
        assert payload["cross_dataset"] is False
        assert set(payload["per_method"]) == {
            "M1_blend_boundary", "M2_temporal_flicker", "M3_warp_jitter", "M4_sharp_seam",
        }
        assert (out / "eval.csv").exists()

    def test_eval_foreign_corpus_flagged(self, checkpoint, tmp_path):
        foreign = tmp_path / "foreign"
        run_cli(
            "synth", "--out", str(foreign), "--seed", "77", "--reals", "1,1,2",
            "--n-frames", "16", "--size", "32",
        )
        out = tmp_path / "eval2"
        rc = run_cli(
            "eval", "--checkpoint", str(checkpoint),
            "--manifest", str(foreign / "manifest.jsonl"), "--out", str(out),
        )
        assert rc == 0
        assert json.loads((out / "eval.json").read_text())["cross_dataset"] is True


class TestCampaign:
    def test_grouped_campaign_and_report(self, corpus, tmp_path):
        out = tmp_path / "camp"
        rc = run_cli(
            "campaign", "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out),
            "--groups", "M1,M4;M2,M3", "--preset", "desk_st3d", "--epochs", "1",
            "--batch-size", "4", "--seed", "0",
        )
        assert rc == 0
        payload = json.loads((out / "campaign.json").read_text())
        assert len(payload["runs"]) == 2
        assert set(payload["drop_per_run"]) == {"M1+M4", "M2+M3"}
        assert (out / "campaign.csv").exists()

        rep_out = tmp_path / "rendered"
        rc = run_cli("report", "--input", str(out / "campaign.json"), "--out", str(rep_out))
        assert rc == 0
        assert (rep_out / "campaign.csv").exists()
        assert (rep_out / "campaign_drops.png").exists()
        assert (rep_out / "campaign_matrix.png").exists()

    def test_empty_groups_usage_error(self, corpus, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run_cli(
                "campaign", "--manifest", str(corpus / "manifest.jsonl"),
                "--out", str(tmp_path), "--groups", "",
            )
        assert exc.value.code == 2


class TestProbe:
    def test_battery_json(self, corpus, checkpoint, tmp_path):
        out = tmp_path / "bat"
        rc = run_cli(
            "probe", "battery", "--checkpoint", str(checkpoint),
            "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out), "--seed", "0",
        )
        assert rc == 0
        payload = json.loads((out / "battery.json").read_text())
        assert payload["columns"] == [
            "original", "flip_1", "flip_3", "flip_5", "flip_every_2nd", "shuffle",
        ]
        assert set(payload["losses"]) == {"real", "fake"}

    def test_embed_csv_and_scatter(self, corpus, checkpoint, tmp_path):
        out = tmp_path / "emb"
        rc = run_cli(
            "probe", "embed", "--checkpoint", str(checkpoint),
            "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out),
            "--perplexity", "2", "--iters", "260", "--seed", "0",
        )
        assert rc == 0
        rows = (out / "embedding.csv").read_text().splitlines()
        assert rows[0] == "video_id,label,method,x,y"
        assert len(rows) == 1 + 10  # 2 test reals x (1 + 4 methods)
        assert (out / "embedding.png").exists()

    def test_embed_rerun_identical(self, corpus, checkpoint, tmp_path):
        outs = []
        for sub in ("e1", "e2"):
            out = tmp_path / sub
            run_cli(
                "probe", "embed", "--checkpoint", str(checkpoint),
                "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out),
                "--perplexity", "2", "--iters", "260", "--seed", "4",
            )
            outs.append((out / "embedding.csv").read_text())
        assert outs[0] == outs[1]

    def test_cam_strip(self, corpus, checkpoint, tmp_path):
        out = tmp_path / "cam"
        rc = run_cli(
            "probe", "cam", "--checkpoint", str(checkpoint),
            "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out),
            "--video", "test_real_0000",
        )
        assert rc == 0
        assert (out / "cam_test_real_0000.png").exists()
        meta = json.loads((out / "cam_test_real_0000.json").read_text())
        assert 0.0 <= meta["prediction"] <= 1.0

    def test_unknown_video_fails_cleanly(self, corpus, checkpoint, tmp_path):
        rc = run_cli(
            "probe", "cam", "--checkpoint", str(checkpoint),
            "--manifest", str(corpus / "manifest.jsonl"), "--out", str(tmp_path),
            "--video", "nope",
        )
        assert rc == 1


class TestConfigResolution:
    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed=9\nreals=2,1,1\nn_frames=16\nsize=32\n")
        out = tmp_path / "from_file"
        rc = run_cli("synth", "--config", str(cfg), "--out", str(out))
        assert rc == 0
        resolved = json.loads((out / "run_config.json").read_text())["config"]
        assert resolved["seed"] == 9
        assert resolved["n_frames"] == 16

        out2 = tmp_path / "flag_overrides"
        rc = run_cli("synth", "--config", str(cfg), "--out", str(out2), "--seed", "3")
        assert rc == 0
        resolved2 = json.loads((out2 / "run_config.json").read_text())["config"]
        assert resolved2["seed"] == 3

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STDEEP_SEED", "123")
        out = tmp_path / "env_seed"
        rc = run_cli("synth", "--out", str(out), "--reals", "1,1,1",
                     "--n-frames", "16", "--size", "32")
        assert rc == 0
        resolved = json.loads((out / "run_config.json").read_text())["config"]
        assert resolved["seed"] == 123

    def test_version_in_provenance(self, corpus):
        import stdeep

        payload = json.loads((corpus / "run_config.json").read_text())
        assert payload["version"] == stdeep.__version__
        assert payload["command"] == "synth"


class TestMotionHeavyAndBatteryReport:
    def test_motion_heavy_set_and_battery_render(self, tmp_path, checkpoint):
        corpus = tmp_path / "mh"
        rc = run_cli(
            "synth", "--out", str(corpus), "--seed", "8", "--reals", "1,1,4",
            "--n-frames", "16", "--size", "32", "--motion-heavy-frac", "0.5",
        )
        assert rc == 0
        out = tmp_path / "bat"
        rc = run_cli(
            "probe", "battery", "--checkpoint", str(checkpoint),
            "--manifest", str(corpus / "manifest.jsonl"), "--out", str(out),
            "--set", "motion_heavy", "--seed", "0",
        )
        assert rc == 0
        payload = json.loads((out / "battery.json").read_text())
        # 2 motion-heavy reals + their 8 fakes carry the tag
        assert payload["n_samples"] == {"real": 2, "fake": 8}

        rendered = tmp_path / "batfig"
        rc = run_cli("report", "--input", str(out / "battery.json"), "--out", str(rendered))
        assert rc == 0
        assert (rendered / "battery.csv").exists()
        assert (rendered / "battery.png").exists()

    def test_motion_heavy_missing_fails_cleanly(self, corpus, checkpoint, tmp_path):
        rc = run_cli(
            "probe", "battery", "--checkpoint", str(checkpoint),
            "--manifest", str(corpus / "manifest.jsonl"), "--out", str(tmp_path),
            "--set", "motion_heavy",
        )
        assert rc == 1
