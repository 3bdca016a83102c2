"""Full network assembly: dual-stream backbone, texture and geometry
enhancement, adaptive fusion, and three prediction heads.

The backbone is a plain convolutional stem pyramid (a stride-2 entry CBR and
four stride-2 stages, each followed by a 1x1 projection to the unified width),
giving four levels at strides 4/8/16/32.  The RGB and depth stems are fully
independent.  Prediction head 1 sees only the RGB path, head 3 only the depth
path, head 2 the fused path; the first output is therefore invariant to the
depth input and the third to the RGB input.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .blocks import (SOBEL_H, SOBEL_V, cbr, make_cbr, make_prediction_head,
                     prediction_head)
from .enhancement import make_enhancement, run_enhancement
from .fusion import make_fusion, run_adfm
from .params import ParamStore, read_checkpoint
from .tensor import ShapeMismatch, Tensor

_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class AblationSwitches:
    them: bool = True
    ghem: bool = True
    adfm: bool = True
    texture: bool = True
    geometry: bool = True
    semantic: bool = True

    def as_flags(self):
        return np.array([self.them, self.ghem, self.adfm,
                         self.texture, self.geometry, self.semantic], dtype=np.uint8)

    @staticmethod
    def from_flags(flags):
        f = [bool(v) for v in flags]
        return AblationSwitches(*f)

    @staticmethod
    def from_off_list(names):
        """Switches with the listed blocks disabled, e.g. ['ghem', 'adfm']."""
        valid = {"them", "ghem", "adfm", "texture", "geometry", "semantic"}
        off = set()
        for n in names:
            n = n.strip().lower()
            if not n:
                continue
            if n not in valid:
                raise ValueError(f"unknown ablation switch {n!r} (choose from {sorted(valid)})")
            off.add(n)
        return AblationSwitches(**{k: k not in off for k in valid})


@dataclass(frozen=True)
class NetworkConfig:
    input_size: tuple = (416, 416)
    channels: int = 32
    backbone_widths: tuple | None = None
    ablation: AblationSwitches = field(default_factory=AblationSwitches)
    dtype: str = "float64"
    avg_mode: str = "local3"

    def __post_init__(self):
        h, w = self.input_size
        if h % 32 or w % 32:
            raise ValueError(f"input size {self.input_size} must be divisible by 32")
        if self.channels % 4:
            raise ValueError(f"channels {self.channels} must be divisible by 4 "
                             "(channel attention ratio)")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.backbone_widths is not None and len(self.backbone_widths) != 4:
            raise ValueError("backbone_widths needs exactly 4 stage widths")

    @property
    def widths(self):
        c = self.channels
        return tuple(self.backbone_widths) if self.backbone_widths else (c, 2 * c, 4 * c, 8 * c)

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]


@dataclass
class ForwardOutput:
    m1: Tensor                # RGB-path prediction
    m2: Tensor                # fused prediction, the designated final output
    m3: Tensor                # depth-path prediction
    pyramids: dict | None = None

    @property
    def heads(self):
        return (self.m1, self.m2, self.m3)


@dataclass
class BackboneStreamParams:
    entry: object
    stages: list              # 4 x (stride-2 CBR, stride-1 CBR)
    projections: list          # 4 x 1x1 CBR to the unified width


def make_backbone_stream(store, name, in_channels, config, rng):
    dtype = config.np_dtype
    widths = config.widths
    w0 = max(widths[0] // 2, 8)
    entry = make_cbr(store, f"{name}.entry", in_channels, w0, 3, rng, dtype, stride=2)
    stages, projections = [], []
    prev = w0
    for i, w in enumerate(widths, start=1):
        down = make_cbr(store, f"{name}.stage{i}.down", prev, w, 3, rng, dtype, stride=2)
        keep = make_cbr(store, f"{name}.stage{i}.conv", w, w, 3, rng, dtype)
        proj = make_cbr(store, f"{name}.stage{i}.proj", w, config.channels, 1, rng, dtype)
        stages.append((down, keep))
        projections.append(proj)
        prev = w
    return BackboneStreamParams(entry, stages, projections)


def run_backbone_stream(x, p: BackboneStreamParams, mode):
    """Returns the 4-level pyramid [B1..B4] at strides 4/8/16/32, all at the
    unified channel width."""
    y = cbr(x, p.entry, mode)
    pyramid = []
    for (down, keep), proj in zip(p.stages, p.projections):
        y = cbr(cbr(y, down, mode), keep, mode)
        pyramid.append(cbr(y, proj, mode))
    return pyramid


class MheNet:
    """The assembled model: parameters plus the forward pass."""

    def __init__(self, config: NetworkConfig, seed=0):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        dtype = config.np_dtype
        c = config.channels
        ab = config.ablation
        self.backbone_rgb = make_backbone_stream(self.store, "backbone_rgb", 3, config, rng)
        self.backbone_depth = make_backbone_stream(self.store, "backbone_depth", 1, config, rng)
        self.them = (make_enhancement(self.store, "them", c, "texture", rng, dtype,
                                      use_block=ab.texture, use_semantic=ab.semantic,
                                      avg_mode=config.avg_mode)
                     if ab.them else None)
        self.ghem = (make_enhancement(self.store, "ghem", c, "geometry", rng, dtype,
                                      use_block=ab.geometry, use_semantic=ab.semantic)
                     if ab.ghem else None)
        self.fusion = make_fusion(self.store, "fusion", c, rng, dtype, use_adfm=ab.adfm)
        self.head_rgb = make_prediction_head(self.store, "heads.m1", c, rng, dtype)
        self.head_fused = make_prediction_head(self.store, "heads.m2", c, rng, dtype)
        self.head_depth = make_prediction_head(self.store, "heads.m3", c, rng, dtype)

    def forward(self, rgb, depth, mode="train", want_intermediates=False):
        rgb = rgb if isinstance(rgb, Tensor) else Tensor(np.asarray(rgb, dtype=self.config.np_dtype))
        depth = depth if isinstance(depth, Tensor) else Tensor(np.asarray(depth, dtype=self.config.np_dtype))
        n, cr, h, w = rgb.shape
        if cr != 3:
            raise ShapeMismatch(f"rgb input must have 3 channels, got {rgb.shape}")
        if depth.shape != (n, 1, h, w):
            raise ShapeMismatch(
                f"depth input {depth.shape} must be (N,1,H,W) matching rgb {rgb.shape}")
        if h % 32 or w % 32:
            raise ShapeMismatch(f"input size {h}x{w} must be divisible by 32")

        pyr_r = run_backbone_stream(rgb, self.backbone_rgb, mode)
        pyr_d = run_backbone_stream(depth, self.backbone_depth, mode)
        r = run_enhancement(pyr_r, self.them, mode) if self.them else pyr_r[:3]
        d = run_enhancement(pyr_d, self.ghem, mode) if self.ghem else pyr_d[:3]
        f = run_adfm(r, d, self.fusion, mode)
        out_hw = (h, w)
        m1 = prediction_head(r[0], self.head_rgb, out_hw, mode)
        m2 = prediction_head(f[0], self.head_fused, out_hw, mode)
        m3 = prediction_head(d[0], self.head_depth, out_hw, mode)
        inter = None
        if want_intermediates:
            inter = {"backbone_rgb": pyr_r, "backbone_depth": pyr_d,
                     "rgb": r, "depth": d, "fused": f}
        return ForwardOutput(m1, m2, m3, inter)

    def census(self):
        return self.store.census()

    # -- checkpointing ----------------------------------------------------------

    def _meta(self):
        cfg = self.config
        return {
            "meta.format": np.array([1], dtype=np.int64),
            "meta.input_size": np.array(cfg.input_size, dtype=np.int64),
            "meta.channels": np.array([cfg.channels], dtype=np.int64),
            "meta.widths": np.array(cfg.widths, dtype=np.int64),
            "meta.ablation": cfg.ablation.as_flags(),
            "meta.dtype": np.array([1 if cfg.dtype == "float64" else 2], dtype=np.int64),
        }

    def save(self, path):
        self.store.save(path, extra=self._meta())

    @staticmethod
    def config_from_checkpoint(arrays):
        size = tuple(int(v) for v in arrays["meta.input_size"])
        return NetworkConfig(
            input_size=size,
            channels=int(arrays["meta.channels"][0]),
            backbone_widths=tuple(int(v) for v in arrays["meta.widths"]),
            ablation=AblationSwitches.from_flags(arrays["meta.ablation"]),
            dtype="float64" if int(arrays["meta.dtype"][0]) == 1 else "float32",
        )

    @classmethod
    def load(cls, path, config: NetworkConfig | None = None):
        """Rebuild a network from a checkpoint.

        A ``config`` may override the input size (the model is fully
        convolutional); its channel width and dtype must agree with the
        checkpoint.
        """
        arrays = read_checkpoint(path)
        stored = cls.config_from_checkpoint(arrays)
        if config is not None:
            for attr in ("channels", "dtype"):
                a, b = getattr(config, attr), getattr(stored, attr)
                if a != b:
                    raise ValueError(
                        f"checkpoint/config mismatch on {attr}: "
                        f"checkpoint has {b!r}, requested {a!r}")
            stored = replace(stored, input_size=config.input_size)
        net = cls(stored, seed=0)
        missing = net.store.load_arrays(arrays)
        if missing:
            raise ValueError(f"checkpoint is missing entries: {missing[:5]}")
        net._verify_sobel()
        return net

    def _verify_sobel(self):
        for name in self.store.names():
            if name.endswith(".p_h") or name.endswith(".p_v"):
                want = SOBEL_H if name.endswith(".p_h") else SOBEL_V
                got = self.store.entry(name).array.reshape(3, 3)
                if not np.array_equal(got, want.astype(got.dtype)):
                    raise ValueError(
                        f"checkpoint self-check failed: {name} does not hold "
                        f"the frozen gradient basis")


def parameter_census(net: MheNet):
    """Per-module learnable parameter counts plus the total."""
    return net.census()
