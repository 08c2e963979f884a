"""The three encoder families as configurable computation graphs.

* frame-wise 2D convolutional classifiers (two presets mirroring the
  half/half-normalized 299px encoder and the imagenet-normalized 224px
  encoder with dropout 0.3),
* sequential encoders: a 2-layer unidirectional LSTM head or a 1-layer
  bidirectional GRU head over a trained 2D backbone with the family's
  freezing policy,
* spatio-temporal residual / inception-style 3D networks whose temporal
  strides are all forced to 1 by default, so no level compresses the
  time dimension.

Desk-scale presets (small widths, few stages, 32px inputs) are first
class; full-scale presets keep the published layer counts.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .clipper import NORM_SCHEMES
from .errors import BadSpec, ShapeMismatch

FAMILIES = ("image2d", "seq_lstm", "seq_bigru", "st3d_residual", "st3d_inception")


@dataclass(frozen=True)
class EncoderSpec:
    """Declarative description of one encoder, including desk-scale knobs."""

    family: str
    width_multiplier: float = 1.0
    clip_len: int = 16
    normalization: str = "imagenet_stats"
    resolution: int | None = None  # None -> scheme native resolution
    n_stages: int = 4
    blocks_per_stage: int = 2
    n_blocks: int = 25  # image2d conv-block count
    stem_temporal_stride: int = 1
    stage_temporal_strides: tuple[int, ...] | None = None  # None -> all 1
    dropout_p: float = 0.3
    rnn_hidden: int = 256
    base_width: int = 64

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BadSpec(f"unknown family {self.family!r}")
        strides = self.stage_temporal_strides
        if strides is None:
            strides = tuple(1 for _ in range(self.n_stages))
        else:
            strides = tuple(int(s) for s in strides)
            if len(strides) != self.n_stages:
                raise BadSpec("stage_temporal_strides length must equal n_stages")
            if any(s < 1 for s in strides):
                raise BadSpec("temporal strides must be >= 1")
        object.__setattr__(self, "stage_temporal_strides", strides)
        if self.normalization not in NORM_SCHEMES:
            raise BadSpec(f"unknown normalization {self.normalization!r}")
        if self.width_multiplier <= 0:
            raise BadSpec("width_multiplier must be positive")

    @property
    def model_resolution(self) -> int:
        if self.resolution is not None:
            return self.resolution
        return NORM_SCHEMES[self.normalization]["resolution"]

    @property
    def is_video(self) -> bool:
        return self.family in ("seq_lstm", "seq_bigru", "st3d_residual", "st3d_inception")

    def stage_width(self, stage: int) -> int:
        return max(4, int(round(self.base_width * self.width_multiplier)) * 2 ** min(stage, 3))


PRESETS = {
    # full-scale presets mirroring the published architectures
    "xception_like": EncoderSpec(
        family="image2d", normalization="half_half", n_blocks=36, dropout_p=0.0
    ),
    "efficient_like": EncoderSpec(
        family="image2d", normalization="imagenet_stats", n_blocks=25, dropout_p=0.3
    ),
    "r3d_like": EncoderSpec(family="st3d_residual"),
    "r3d_original_stride": EncoderSpec(
        family="st3d_residual", stage_temporal_strides=(1, 2, 2, 2)
    ),
    "i3d_like": EncoderSpec(family="st3d_inception", n_stages=4),
    "seq_lstm": EncoderSpec(family="seq_lstm", rnn_hidden=256),
    "seq_bigru": EncoderSpec(family="seq_bigru", rnn_hidden=256),
    # desk-scale presets: small widths, few stages, 32px inputs
    "desk_image2d": EncoderSpec(
        family="image2d", width_multiplier=0.25, resolution=32, n_blocks=5, n_stages=4,
        dropout_p=0.3,
    ),
    "desk_st3d": EncoderSpec(
        family="st3d_residual", width_multiplier=0.25, resolution=32, n_stages=2,
        blocks_per_stage=1, dropout_p=0.0,
    ),
    "desk_st3d_inception": EncoderSpec(
        family="st3d_inception", width_multiplier=0.25, resolution=32, n_stages=2,
        blocks_per_stage=1, dropout_p=0.0,
    ),
    "desk_seq_lstm": EncoderSpec(
        family="seq_lstm", width_multiplier=0.25, resolution=32, rnn_hidden=64
    ),
    "desk_seq_bigru": EncoderSpec(
        family="seq_bigru", width_multiplier=0.25, resolution=32, rnn_hidden=64
    ),
}


def preset(name: str, **overrides) -> EncoderSpec:
    if name not in PRESETS:
        raise BadSpec(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    spec = PRESETS[name]
    return replace(spec, **overrides) if overrides else spec


@dataclass
class EncoderOutput:
    """Logit(s), penultimate feature(s), and per-stage shape info."""

    logit: torch.Tensor
    feature: torch.Tensor
    aux: dict = field(default_factory=dict)


# --- image encoder ---------------------------------------------------------


class ImageEncoder2d(nn.Module):
    """Frame-wise 2D conv classifier with dropout before the output layer."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        if spec.family != "image2d":
            raise BadSpec(f"ImageEncoder2d requires family image2d, got {spec.family}")
        self.spec = spec
        blocks = []
        in_c = 3
        for i in range(spec.n_blocks):
            stage = i * spec.n_stages // spec.n_blocks
            out_c = spec.stage_width(stage)
            first_of_stage = stage > 0 and (i - 1) * spec.n_stages // spec.n_blocks < stage
            stride = 2 if first_of_stage else 1
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(in_c, out_c, 3, stride=stride, padding=1, bias=False),
                    nn.BatchNorm2d(out_c),
                    nn.ReLU(inplace=True),
                )
            )
            in_c = out_c
        self.conv_blocks = nn.ModuleList(blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dropout = nn.Dropout(spec.dropout_p)
        self.head = nn.Linear(in_c, 1)
        self.feature_dim = in_c

    @property
    def cam_layer(self) -> nn.Module:
        return self.conv_blocks[-1]

    def features(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.conv_blocks:
            x = block(x)
        return self.pool(x).flatten(1)

    def forward(self, x: torch.Tensor):
        feat = self.features(x)
        logit = self.head(self.dropout(feat)).squeeze(-1)
        return logit, feat


# --- sequential encoders ---------------------------------------------------


def _frame_features(backbone: ImageEncoder2d, clips: torch.Tensor) -> torch.Tensor:
    """(B, 3, T, H, W) -> (B, T, F) pooled per-frame backbone features."""
    b, c, t, h, w = clips.shape
    frames = clips.permute(0, 2, 1, 3, 4).reshape(b * t, c, h, w)
    feats = backbone.features(frames)
    return feats.reshape(b, t, -1)


class SeqEncoderLSTM(nn.Module):
    """2-layer unidirectional LSTM over frozen backbone features, read at
    the last timestep, with a 3-layer fully connected head."""

    def __init__(self, spec: EncoderSpec, backbone: ImageEncoder2d):
        super().__init__()
        if spec.family != "seq_lstm":
            raise BadSpec(f"SeqEncoderLSTM requires family seq_lstm, got {spec.family}")
        self.spec = spec
        # own a copy: freezing must not leak into other pipelines sharing
        # the same trained backbone
        self.backbone = copy.deepcopy(backbone)
        for p in self.backbone.parameters():
            p.requires_grad = False
        hidden = spec.rnn_hidden
        self.rnn = nn.LSTM(backbone.feature_dim, hidden, num_layers=2, batch_first=True)
        self.dropout1 = nn.Dropout(spec.dropout_p)  # after the LSTM
        self.fc1 = nn.Linear(hidden, hidden // 2)
        self.dropout2 = nn.Dropout(spec.dropout_p)  # before the second linear layer
        self.fc2 = nn.Linear(hidden // 2, hidden // 4)
        self.fc3 = nn.Linear(hidden // 4, 1)
        self.relu = nn.ReLU(inplace=True)
        self.feature_dim = hidden // 4

    def train(self, mode: bool = True):
        super().train(mode)
        self.backbone.eval()  # frozen backbone keeps its batch statistics
        return self

    @property
    def cam_layer(self) -> nn.Module:
        return self.backbone.conv_blocks[-1]

    def forward(self, clips: torch.Tensor):
        seq = _frame_features(self.backbone, clips)
        out, _ = self.rnn(seq)
        x = self.dropout1(out[:, -1, :])
        x = self.relu(self.fc1(x))
        x = self.dropout2(x)
        feat = self.relu(self.fc2(x))
        logit = self.fc3(feat).squeeze(-1)
        return logit, feat


class SeqEncoderBiGRU(nn.Module):
    """1-layer bidirectional GRU over a partially frozen backbone; dropout
    then a single output layer, trained on the final timestep only."""

    def __init__(self, spec: EncoderSpec, backbone: ImageEncoder2d):
        super().__init__()
        if spec.family != "seq_bigru":
            raise BadSpec(f"SeqEncoderBiGRU requires family seq_bigru, got {spec.family}")
        self.spec = spec
        self.backbone = copy.deepcopy(backbone)
        n_blocks = len(self.backbone.conv_blocks)
        self.n_frozen = math.ceil(0.8 * n_blocks)
        for i, block in enumerate(self.backbone.conv_blocks):
            for p in block.parameters():
                p.requires_grad = i >= self.n_frozen
        for p in self.backbone.head.parameters():
            p.requires_grad = True
        hidden = spec.rnn_hidden
        self.rnn = nn.GRU(backbone.feature_dim, hidden, num_layers=1,
                          batch_first=True, bidirectional=True)
        self.dropout = nn.Dropout(spec.dropout_p)
        self.head = nn.Linear(2 * hidden, 1)
        self.feature_dim = 2 * hidden

    def train(self, mode: bool = True):
        super().train(mode)
        for block in self.backbone.conv_blocks[: self.n_frozen]:
            block.eval()
        return self

    @property
    def cam_layer(self) -> nn.Module:
        return self.backbone.conv_blocks[-1]

    def forward(self, clips: torch.Tensor):
        seq = _frame_features(self.backbone, clips)
        out, _ = self.rnn(seq)
        feat = self.dropout(out[:, -1, :])
        logit = self.head(feat).squeeze(-1)
        return logit, feat


# --- spatio-temporal encoders ----------------------------------------------


class ResidualBlock3d(nn.Module):
    """Two 3x3x3 convs with batch norm and an identity / projected skip."""

    def __init__(self, in_c: int, out_c: int, stride=(1, 1, 1)):
        super().__init__()
        self.conv1 = nn.Conv3d(in_c, out_c, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm3d(out_c)
        self.conv2 = nn.Conv3d(out_c, out_c, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(out_c)
        self.relu = nn.ReLU(inplace=True)
        if in_c != out_c or tuple(stride) != (1, 1, 1):
            self.down = nn.Sequential(
                nn.Conv3d(in_c, out_c, 1, stride=stride, bias=False), nn.BatchNorm3d(out_c)
            )
        else:
            self.down = None

    def forward(self, x):
        y = self.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = self.down(x) if self.down is not None else x
        return self.relu(y + skip)


class St3dResidual(nn.Module):
    """Residual 3D conv net: stem then n_stages stages, spatial stride 2 at
    the stem and at stages >= 2, temporal strides taken from the spec
    (all 1 in the downsampling-removed configuration)."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        if spec.family != "st3d_residual":
            raise BadSpec(f"St3dResidual requires family st3d_residual, got {spec.family}")
        self.spec = spec
        w0 = spec.stage_width(0)
        self.stem = nn.Sequential(
            nn.Conv3d(3, w0, (3, 7, 7), stride=(spec.stem_temporal_stride, 2, 2),
                      padding=(1, 3, 3), bias=False),
            nn.BatchNorm3d(w0),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_c = w0
        for s in range(spec.n_stages):
            out_c = spec.stage_width(s)
            t_stride = spec.stage_temporal_strides[s]
            spatial = 2 if s >= 1 else 1
            blocks = [ResidualBlock3d(in_c, out_c, stride=(t_stride, spatial, spatial))]
            for _ in range(spec.blocks_per_stage - 1):
                blocks.append(ResidualBlock3d(out_c, out_c))
            stages.append(nn.Sequential(*blocks))
            in_c = out_c
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.dropout = nn.Dropout(spec.dropout_p)
        self.head = nn.Linear(in_c, 1)
        self.feature_dim = in_c

    @property
    def cam_layer(self) -> nn.Module:
        return self.stages[-1]

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return x

    def forward(self, x: torch.Tensor):
        fmap = self.forward_features(x)
        feat = self.pool(fmap).flatten(1)
        logit = self.head(self.dropout(feat)).squeeze(-1)
        return logit, feat


class InceptionBlock3d(nn.Module):
    """Four parallel 3D branches (1x1x1, 3x3x3, double 3x3x3, pool-proj)."""

    def __init__(self, in_c: int, out_c: int):
        super().__init__()
        c1, c3, c33 = out_c // 4, out_c // 2, out_c // 8
        cp = out_c - c1 - c3 - c33

        def conv(i, o, k, pad=0):
            return nn.Sequential(
                nn.Conv3d(i, o, k, padding=pad, bias=False), nn.BatchNorm3d(o),
                nn.ReLU(inplace=True),
            )

        self.b1 = conv(in_c, c1, 1)
        self.b3 = nn.Sequential(conv(in_c, max(4, c3 // 2), 1), conv(max(4, c3 // 2), c3, 3, 1))
        self.b33 = nn.Sequential(
            conv(in_c, max(4, c33 // 2), 1),
            conv(max(4, c33 // 2), c33, 3, 1),
            conv(c33, c33, 3, 1),
        )
        self.bp = nn.Sequential(nn.MaxPool3d(3, stride=1, padding=1), conv(in_c, cp, 1))

    def forward(self, x):
        return torch.cat([self.b1(x), self.b3(x), self.b33(x), self.bp(x)], dim=1)


class St3dInception(nn.Module):
    """Inception-style 3D net, single RGB stream, spatial pooling between
    stages with per-stage temporal strides from the spec."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        if spec.family != "st3d_inception":
            raise BadSpec(f"St3dInception requires family st3d_inception, got {spec.family}")
        self.spec = spec
        w0 = spec.stage_width(0)
        self.stem = nn.Sequential(
            nn.Conv3d(3, w0, (3, 7, 7), stride=(spec.stem_temporal_stride, 2, 2),
                      padding=(1, 3, 3), bias=False),
            nn.BatchNorm3d(w0),
            nn.ReLU(inplace=True),
        )
        layers = []
        in_c = w0
        for s in range(spec.n_stages):
            t_stride = spec.stage_temporal_strides[s]
            if s >= 1:
                layers.append(nn.MaxPool3d((t_stride, 2, 2), stride=(t_stride, 2, 2)))
            elif t_stride > 1:
                layers.append(nn.MaxPool3d((t_stride, 1, 1), stride=(t_stride, 1, 1)))
            out_c = spec.stage_width(s)
            for _ in range(spec.blocks_per_stage):
                layers.append(InceptionBlock3d(in_c, out_c))
                in_c = out_c
        self.blocks = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.dropout = nn.Dropout(spec.dropout_p)
        self.head = nn.Linear(in_c, 1)
        self.feature_dim = in_c

    @property
    def cam_layer(self) -> nn.Module:
        return self.blocks[-1]

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(self.stem(x))

    def forward(self, x: torch.Tensor):
        fmap = self.forward_features(x)
        feat = self.pool(fmap).flatten(1)
        logit = self.head(self.dropout(feat)).squeeze(-1)
        return logit, feat


# --- builders, unified forward, checkpoints --------------------------------


def build_image2d(spec: EncoderSpec, seed: int = 0) -> ImageEncoder2d:
    torch.manual_seed(seed)
    return ImageEncoder2d(spec)


def build_seq_lstm(spec: EncoderSpec, backbone: ImageEncoder2d, seed: int = 0) -> SeqEncoderLSTM:
    torch.manual_seed(seed)
    return SeqEncoderLSTM(spec, backbone)


def build_seq_bigru(spec: EncoderSpec, backbone: ImageEncoder2d, seed: int = 0) -> SeqEncoderBiGRU:
    torch.manual_seed(seed)
    return SeqEncoderBiGRU(spec, backbone)


def build_st3d(spec: EncoderSpec, seed: int = 0) -> nn.Module:
    torch.manual_seed(seed)
    if spec.family == "st3d_residual":
        return St3dResidual(spec)
    if spec.family == "st3d_inception":
        return St3dInception(spec)
    raise BadSpec(f"build_st3d requires an st3d family, got {spec.family}")


def build_model(spec: EncoderSpec, seed: int = 0, backbone: ImageEncoder2d | None = None) -> nn.Module:
    if spec.family == "image2d":
        return build_image2d(spec, seed)
    if spec.family in ("st3d_residual", "st3d_inception"):
        return build_st3d(spec, seed)
    if backbone is None:
        raise BadSpec(f"family {spec.family} needs a trained image2d backbone")
    if spec.family == "seq_lstm":
        return build_seq_lstm(spec, backbone, seed)
    return build_seq_bigru(spec, backbone, seed)


def forward(model: nn.Module, clip_or_frame) -> EncoderOutput:
    """Family-aware forward returning logit(s) and penultimate feature(s).

    Image encoders applied to a (3, T, H, W) clip return one output per
    frame; video encoders return one output per clip.
    """
    x = clip_or_frame
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x)).float()
    spec = model.spec
    aux: dict = {}
    if spec.family == "image2d":
        if x.ndim == 3:
            logit, feat = model(x.unsqueeze(0))
            return EncoderOutput(logit=logit[0], feature=feat[0], aux=aux)
        if x.ndim == 4 and x.shape[0] == 3:  # one clip -> per-frame outputs
            frames = x.permute(1, 0, 2, 3)
            logit, feat = model(frames)
            return EncoderOutput(logit=logit, feature=feat, aux=aux)
        if x.ndim == 4:
            logit, feat = model(x)
            return EncoderOutput(logit=logit, feature=feat, aux=aux)
        raise ShapeMismatch(f"image2d cannot take shape {tuple(x.shape)}")
    if x.ndim == 4 and x.shape[0] == 3:
        x = x.unsqueeze(0)
        squeeze = True
    elif x.ndim == 5:
        squeeze = False
    else:
        raise ShapeMismatch(f"{spec.family} cannot take shape {tuple(x.shape)}")
    if hasattr(model, "stages"):
        with torch.no_grad():
            shapes = []
            h = model.stem(x)
            shapes.append(("stem", tuple(h.shape[1:])))
            for i, stage in enumerate(model.stages, start=1):
                h = stage(h)
                shapes.append((f"stage{i}", tuple(h.shape[1:])))
        aux["stage_shapes"] = shapes
        aux["prepool_shape"] = shapes[-1][1]
    elif hasattr(model, "forward_features"):
        with torch.no_grad():
            aux["prepool_shape"] = tuple(model.forward_features(x).shape[1:])
    logit, feat = model(x)
    if squeeze:
        return EncoderOutput(logit=logit[0], feature=feat[0], aux=aux)
    return EncoderOutput(logit=logit, feature=feat, aux=aux)


def save_checkpoint(path: str | Path, model: nn.Module, extra: dict | None = None) -> Path:
    """Flat archive of named arrays plus spec JSON; round-trips bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"spec": asdict(model.spec), "extra": extra or {}}
    if hasattr(model, "backbone"):
        meta["backbone_spec"] = asdict(model.backbone.spec)
    arrays = {f"param::{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta_arr = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8).copy()
    np.savez(path, __meta__=meta_arr, **arrays)
    if path.suffix != ".npz":
        path = path.with_name(path.name + ".npz")
    return path


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    """Rebuild the model from its spec and restore all arrays bit-exactly."""
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        arrays = {k[len("param::"):]: data[k] for k in data.files if k.startswith("param::")}
    spec = EncoderSpec(**_spec_kwargs(meta["spec"]))
    backbone = None
    if "backbone_spec" in meta:
        backbone = ImageEncoder2d(EncoderSpec(**_spec_kwargs(meta["backbone_spec"])))
    model = build_model(spec, seed=0, backbone=backbone)
    state = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model, meta.get("extra", {})


def _spec_kwargs(d: dict) -> dict:
    d = dict(d)
    if d.get("stage_temporal_strides") is not None:
        d["stage_temporal_strides"] = tuple(d["stage_temporal_strides"])
    return d
