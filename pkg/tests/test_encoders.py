import numpy as np
import pytest
import torch

from stdeep import encoders
from stdeep.encoders import (
    EncoderSpec,
    ResidualBlock3d,
    build_image2d,
    build_model,
    build_seq_bigru,
    build_seq_lstm,
    build_st3d,
    forward,
    load_checkpoint,
    preset,
    save_checkpoint,
)
from stdeep.errors import BadSpec, ShapeMismatch


@pytest.fixture(scope="module")
def img_model():
    return build_image2d(preset("desk_image2d"), seed=0)


@pytest.fixture(scope="module")
def st3d_model():
    return build_st3d(preset("desk_st3d"), seed=0)


class TestSpec:
    def test_unknown_family_rejected(self):
        with pytest.raises(BadSpec):
            EncoderSpec(family="transformer")

    def test_stride_list_length_checked(self):
        with pytest.raises(BadSpec):
            EncoderSpec(family="st3d_residual", n_stages=2, stage_temporal_strides=(1, 1, 1))

    def test_default_strides_all_one(self):
        spec = EncoderSpec(family="st3d_residual", n_stages=4)
        assert spec.stage_temporal_strides == (1, 1, 1, 1)

    def test_scheme_native_resolutions(self):
        assert preset("xception_like").model_resolution == 299
        assert preset("efficient_like").model_resolution == 224
        assert preset("desk_st3d").model_resolution == 32

    def test_unknown_preset(self):
        with pytest.raises(BadSpec):
            preset("desk_vit")


class TestImageEncoder:
    def test_single_frame_contract(self, img_model):
        out = forward(img_model, np.random.default_rng(0).normal(size=(3, 32, 32)).astype(np.float32))
        assert out.logit.ndim == 0
        assert out.feature.shape == (img_model.feature_dim,)

    def test_batch_of_8(self, img_model):
        x = torch.randn(8, 3, 32, 32)
        out = forward(img_model, x)
        assert out.logit.shape == (8,)

    def test_clip_gives_per_frame_outputs(self, img_model):
        clip = torch.randn(3, 16, 32, 32)
        out = forward(img_model, clip)
        assert out.logit.shape == (16,)
        assert out.feature.shape[0] == 16

    def test_desk_preset_under_1m_params(self, img_model):
        n = sum(p.numel() for p in img_model.parameters())
        assert n < 1_000_000

    def test_dropout_placement(self, img_model):
        assert isinstance(img_model.dropout, torch.nn.Dropout)
        assert img_model.dropout.p == pytest.approx(0.3)
        xcept = build_image2d(preset("xception_like", n_blocks=6, resolution=32), seed=0)
        assert xcept.dropout.p == 0.0

    def test_batch_permutation_equivariance(self, img_model):
        img_model.eval()
        x = torch.randn(16, 3, 32, 32)
        perm = torch.randperm(16)
        with torch.no_grad():
            a = forward(img_model, x).logit
            b = forward(img_model, x[perm]).logit
        assert torch.equal(a[perm], b)


class TestSequentialEncoders:
    def test_lstm_one_logit_per_clip(self, img_model):
        model = build_seq_lstm(preset("desk_seq_lstm"), img_model, seed=0)
        out = forward(model, torch.randn(3, 16, 32, 32))
        assert out.logit.ndim == 0

    def test_lstm_backbone_fully_frozen(self, img_model):
        model = build_seq_lstm(preset("desk_seq_lstm"), img_model, seed=0)
        before = {k: v.clone() for k, v in model.backbone.state_dict().items()}
        opt = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=1e-2)
        model.train()
        logit, _ = model(torch.randn(2, 3, 16, 32, 32))
        loss = logit.sum()
        loss.backward()
        for p in model.backbone.parameters():
            assert p.grad is None or torch.all(p.grad == 0)
        opt.step()
        for k, v in model.backbone.state_dict().items():
            assert torch.equal(v, before[k]), f"backbone tensor {k} changed"

    def test_bigru_freezes_first_80_percent_of_blocks(self, img_model):
        model = build_seq_bigru(preset("desk_seq_bigru"), img_model, seed=0)
        n_blocks = len(model.backbone.conv_blocks)
        assert model.n_frozen == int(np.ceil(0.8 * n_blocks))

    def test_bigru_partial_freeze_step(self):
        backbone = build_image2d(preset("desk_image2d"), seed=1)
        model = build_seq_bigru(preset("desk_seq_bigru"), backbone, seed=1)
        blocks = model.backbone.conv_blocks  # builders own a copy of the backbone
        frozen = [p for b in blocks[: model.n_frozen] for p in b.parameters()]
        unfrozen = [p for b in blocks[model.n_frozen :] for p in b.parameters()]
        assert unfrozen, "desk preset should leave at least one block trainable"
        before_frozen = [p.clone() for p in frozen]
        before_unfrozen = [p.clone() for p in unfrozen]
        opt = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=1e-2)
        model.train()
        logit, _ = model(torch.randn(2, 3, 16, 32, 32))
        (logit ** 2).sum().backward()
        opt.step()
        for p, b in zip(frozen, before_frozen):
            assert torch.equal(p, b)
        assert any(not torch.equal(p, b) for p, b in zip(unfrozen, before_unfrozen))

    def test_bigru_order_sensitive(self):
        backbone = build_image2d(preset("desk_image2d"), seed=2)
        model = build_seq_bigru(preset("desk_seq_bigru"), backbone, seed=2)
        model.eval()
        clip = torch.randn(1, 3, 16, 32, 32)
        with torch.no_grad():
            a, _ = model(clip)
            b, _ = model(torch.flip(clip, dims=[2]))
        assert not torch.allclose(a, b)

    def test_lstm_head_has_three_linear_layers(self, img_model):
        model = build_seq_lstm(preset("desk_seq_lstm"), img_model, seed=0)
        assert model.rnn.num_layers == 2
        assert model.rnn.bidirectional is False
        linears = [model.fc1, model.fc2, model.fc3]
        assert all(isinstance(l, torch.nn.Linear) for l in linears)

    def test_bigru_single_layer_bidirectional(self, img_model):
        model = build_seq_bigru(preset("desk_seq_bigru"), img_model, seed=0)
        assert model.rnn.num_layers == 1
        assert model.rnn.bidirectional is True


class TestSt3d:
    def test_temporal_preserved_all_depths(self, st3d_model):
        for t in (4, 8, 16, 32):
            out = forward(st3d_model, torch.randn(3, t, 32, 32))
            assert out.aux["prepool_shape"][1] == t

    def test_original_strides_halve_temporal(self):
        spec = preset(
            "r3d_original_stride", width_multiplier=0.125, resolution=32, blocks_per_stage=1
        )
        model = build_st3d(spec, seed=0)
        out = forward(model, torch.randn(3, 16, 32, 32))
        assert out.aux["prepool_shape"][1] == 2  # 16 / 2 / 2 / 2

    def test_inception_temporal_preserved(self):
        model = build_st3d(preset("desk_st3d_inception"), seed=0)
        for t in (4, 8, 16):
            out = forward(model, torch.randn(3, t, 32, 32))
            assert out.aux["prepool_shape"][1] == t

    def test_one_logit_per_clip(self, st3d_model):
        out = forward(st3d_model, torch.randn(3, 16, 32, 32))
        assert out.logit.ndim == 0
        assert out.feature.shape == (st3d_model.feature_dim,)

    def test_feature_length_is_last_stage_width(self, st3d_model):
        out = forward(st3d_model, torch.randn(3, 16, 32, 32))
        assert out.feature.shape[0] == st3d_model.spec.stage_width(st3d_model.spec.n_stages - 1)

    def test_eval_forward_deterministic(self, st3d_model):
        st3d_model.eval()
        x = torch.randn(3, 16, 32, 32)
        a = forward(st3d_model, x).logit
        b = forward(st3d_model, x).logit
        assert torch.equal(a, b)

    def test_shape_mismatch_raises(self, st3d_model):
        with pytest.raises(ShapeMismatch):
            forward(st3d_model, torch.randn(16, 32, 32))

    def test_gradients_match_finite_differences(self):
        # central finite differences on a double-precision residual block
        torch.manual_seed(0)
        block = ResidualBlock3d(4, 6, stride=(1, 2, 2)).double()
        block.eval()
        x = torch.randn(2, 4, 4, 8, 8, dtype=torch.float64)
        proj = torch.randn(2, 6, 4, 4, 4, dtype=torch.float64)

        def loss_fn():
            return (block(x) * proj).sum()

        loss = loss_fn()
        loss.backward()
        params = [p for p in block.parameters() if p.requires_grad]
        rng = np.random.default_rng(1)
        for _ in range(10):
            p = params[int(rng.integers(len(params)))]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            analytic = float(p.grad[idx])
            h = 1e-6 * max(1.0, abs(float(p.data[idx])))
            with torch.no_grad():
                orig = float(p.data[idx])
                p.data[idx] = orig + h
                up = float(loss_fn())
                p.data[idx] = orig - h
                down = float(loss_fn())
                p.data[idx] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(analytic), abs(fd), 1e-8)
            assert abs(analytic - fd) / denom < 1e-4


class TestCheckpoints:
    def test_bit_exact_roundtrip_st3d(self, st3d_model, tmp_path):
        st3d_model.eval()
        x = torch.randn(2, 3, 16, 32, 32)
        with torch.no_grad():
            before, _ = st3d_model(x)
        path = save_checkpoint(tmp_path / "m.npz", st3d_model, extra={"note": "t"})
        loaded, extra = load_checkpoint(path)
        assert extra == {"note": "t"}
        with torch.no_grad():
            after, _ = loaded(x)
        assert torch.equal(before, after)

    def test_roundtrip_seq_model_rebuilds_backbone(self, img_model, tmp_path):
        model = build_seq_lstm(preset("desk_seq_lstm"), img_model, seed=3)
        model.eval()
        x = torch.randn(1, 3, 16, 32, 32)
        with torch.no_grad():
            before, _ = model(x)
        path = save_checkpoint(tmp_path / "seq.npz", model)
        loaded, _ = load_checkpoint(path)
        with torch.no_grad():
            after, _ = loaded(x)
        assert torch.equal(before, after)

    def test_spec_survives_roundtrip(self, tmp_path):
        spec = preset("desk_st3d", stage_temporal_strides=(1, 2))
        model = build_st3d(spec, seed=0)
        path = save_checkpoint(tmp_path / "s.npz", model)
        loaded, _ = load_checkpoint(path)
        assert loaded.spec == spec


class TestBuildModel:
    def test_seq_without_backbone_rejected(self):
        with pytest.raises(BadSpec):
            build_model(preset("desk_seq_lstm"), seed=0)

    def test_same_seed_same_init(self):
        a = build_model(preset("desk_st3d"), seed=5)
        b = build_model(preset("desk_st3d"), seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)


class TestBackboneIsolation:
    def test_builders_do_not_mutate_shared_backbone(self, img_model):
        backbone = build_image2d(preset("desk_image2d"), seed=9)
        build_seq_lstm(preset("desk_seq_lstm"), backbone, seed=9)
        assert all(p.requires_grad for p in backbone.parameters())
        bigru = build_seq_bigru(preset("desk_seq_bigru"), backbone, seed=9)
        assert all(p.requires_grad for p in backbone.parameters())
        trainable_blocks = [
            b for b in bigru.backbone.conv_blocks
            if any(p.requires_grad for p in b.parameters())
        ]
        assert len(trainable_blocks) == len(bigru.backbone.conv_blocks) - bigru.n_frozen


def test_seq_lstm_batch_permutation_equivariance():
    backbone = build_image2d(preset("desk_image2d"), seed=4)
    model = build_seq_lstm(preset("desk_seq_lstm"), backbone, seed=4)
    model.eval()
    clips = torch.randn(6, 3, 16, 32, 32)
    perm = torch.randperm(6)
    with torch.no_grad():
        a, _ = model(clips)
        b, _ = model(clips[perm])
    assert torch.allclose(a[perm], b, atol=1e-6)
