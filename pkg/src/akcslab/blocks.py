"""Forward-pass building blocks of the attention-based denoiser stage.

Features are H x W x C float64 arrays. All blocks are pure functions of
(input, weights), preserve the feature shape, and are deterministic for a
fixed weight seed. Weights are randomly initialized (std 0.02 by default)
since only forward behavior is exercised here; trained parameters can be
injected through the binary dump/load format.

Blocks:

* scb_forward          - two 3x3 convolutions with a leaky ReLU between.
* channel_attention_forward - multi-head self-attention over channels
  (attention maps are (C/N) x (C/N) per head, not spatial).
* rsca_forward         - adds a scaled high-frequency residual: the input
  minus the GELU of its channel mean.
* ctb_forward          - fuses the convolution and attention branches,
  residual add, then a conv/depthwise/pointwise feed-forward tail.
* meb_forward          - encodes a raw measurement into query/key tokens,
  one token per measurement row.
* maca_forward         - cross-attention between measurement tokens and
  image features: aggregate at low resolution, propagate at full
  resolution.
* toy_denoiser_stage   - lift a 2-D iterate to C channels, run CTB + MACA,
  project back to one channel; pluggable into the reconstruction loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import erf

from .errors import InvalidDimensionError, ShapeError
from .linalg import make_rng
from .operators import Measurement


def leaky_relu(x, slope: float = 0.01) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0.0, x, slope * x)


def gelu(x) -> np.ndarray:
    """Exact (erf-based) GELU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def softmax_rows(m) -> np.ndarray:
    """Numerically stable row softmax; every row sums to 1."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - np.max(m, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def conv2d(x, kernel, bias=None) -> np.ndarray:
    """Zero-padded same-size 2-D cross-correlation.

    x: (H, W, C_in), kernel: (kh, kw, C_in, C_out), bias: (C_out,) or None.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects (H,W,Cin) and (kh,kw,Cin,Cout), got {x.shape}, {kernel.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[2] != cin:
        raise ShapeError(f"input has {x.shape[2]} channels, kernel expects {cin}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    h, w = x.shape[:2]
    out = np.zeros((h, w, cout))
    for dy in range(kh):
        for dx in range(kw):
            out += xp[dy:dy + h, dx:dx + w, :] @ kernel[dy, dx]
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return out


def depthwise_conv2d(x, kernel, bias=None) -> np.ndarray:
    """Per-channel zero-padded 3x3-style convolution; kernel: (kh, kw, C)."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[2] != kernel.shape[2]:
        raise ShapeError(f"depthwise_conv2d shapes mismatch: {x.shape} vs {kernel.shape}")
    kh, kw, _ = kernel.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    h, w = x.shape[:2]
    out = np.zeros_like(x)
    for dy in range(kh):
        for dx in range(kw):
            out += xp[dy:dy + h, dx:dx + w, :] * kernel[dy, dx]
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return out


def avg_pool2d(x, factor: int) -> np.ndarray:
    """Non-overlapping factor x factor mean pooling over the spatial axes."""
    x = np.asarray(x, dtype=np.float64)
    h, w, c = x.shape
    if factor < 1:
        raise InvalidDimensionError(f"pool factor must be >= 1, got {factor}")
    if h % factor or w % factor:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by pool factor {factor}")
    return x.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def _weight_shapes(channels: int, token_dim: int, meas_width: int) -> dict[str, tuple]:
    c, d, w = channels, token_dim, meas_width
    return {
        "lift_kernel": (3, 3, 1, c), "lift_bias": (c,),
        "scb_kernel1": (3, 3, c, c), "scb_bias1": (c,),
        "scb_kernel2": (3, 3, c, c), "scb_bias2": (c,),
        "attn_query": (c, c), "attn_key": (c, c), "attn_value": (c, c), "attn_out": (c, c),
        "rsca_gamma": (),
        "fuse_weight": (2 * c, c), "fuse_bias": (c,),
        "ffn_conv_kernel": (3, 3, c, c), "ffn_conv_bias": (c,),
        "ffn_depth_kernel": (3, 3, c), "ffn_depth_bias": (c,),
        "ffn_point_weight": (c, c), "ffn_point_bias": (c,),
        "meb_kernel1": (3, 3, 1, d), "meb_bias1": (d,),
        "meb_kernel2": (3, 3, d, d), "meb_bias2": (d,),
        "meb_row_proj": (w, d), "meb_query_head": (d, d), "meb_key_head": (d, d),
        "maca_query": (c, d), "maca_key": (c, d), "maca_value": (c, d), "maca_out": (d, c),
        "project_kernel": (3, 3, c, 1), "project_bias": (1,),
    }


@dataclass(frozen=True, eq=False)
class BlockWeights:
    """All projection matrices, conv kernels and scalars for one stage.

    Shapes are validated at construction; ``from_seed`` draws every tensor
    from one named stream so forward passes are reproducible bit for bit.
    """

    channels: int
    heads: int
    token_dim: int
    meas_width: int
    arrays: dict
    seed: int | None = None

    def __post_init__(self):
        if self.channels % self.heads:
            raise InvalidDimensionError(
                f"channels {self.channels} not divisible by heads {self.heads}")
        expected = _weight_shapes(self.channels, self.token_dim, self.meas_width)
        missing = sorted(set(expected) - set(self.arrays))
        if missing:
            raise ShapeError(f"missing weight arrays: {missing}")
        checked = {}
        for name, shape in expected.items():
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"weight {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ShapeError(f"weight {name} contains non-finite entries")
            checked[name] = arr
        object.__setattr__(self, "arrays", checked)

    def __getattr__(self, name: str):
        arrays = object.__getattribute__(self, "arrays")
        if name in arrays:
            return arrays[name]
        raise AttributeError(name)

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @classmethod
    def from_seed(cls, seed: int, channels: int = 16, heads: int = 4,
                  token_dim: int = 16, meas_width: int = 8,
                  scale: float = 0.02) -> "BlockWeights":
        rng = make_rng(seed, 0xB10C)
        shapes = _weight_shapes(channels, token_dim, meas_width)
        arrays = {}
        for name in sorted(shapes):
            shape = shapes[name]
            if name.endswith("bias"):
                arrays[name] = np.zeros(shape)
            elif shape == ():
                arrays[name] = np.float64(scale * rng.standard_normal())
            else:
                arrays[name] = scale * rng.standard_normal(shape)
        return cls(channels, heads, token_dim, meas_width, arrays, seed=seed)

    def replace_arrays(self, **overrides) -> "BlockWeights":
        arrays = dict(self.arrays)
        for name, value in overrides.items():
            if name not in arrays:
                raise ShapeError(f"unknown weight array {name!r}")
            arrays[name] = value
        return BlockWeights(self.channels, self.heads, self.token_dim,
                            self.meas_width, arrays, seed=self.seed)

    def save(self, directory) -> None:
        """Write manifest.json (name -> shape) plus weights.bin (f64 LE,
        concatenated in sorted name order)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "channels": self.channels, "heads": self.heads,
            "token_dim": self.token_dim, "meas_width": self.meas_width,
            "seed": self.seed,
            "arrays": {name: list(np.shape(self.arrays[name])) for name in sorted(self.arrays)},
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        with open(directory / "weights.bin", "wb") as fh:
            for name in sorted(self.arrays):
                fh.write(np.ascontiguousarray(self.arrays[name], dtype="<f8").tobytes())

    @classmethod
    def load(cls, directory) -> "BlockWeights":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        raw = (directory / "weights.bin").read_bytes()
        arrays = {}
        offset = 0
        for name in sorted(manifest["arrays"]):
            shape = tuple(manifest["arrays"][name])
            count = int(np.prod(shape)) if shape else 1
            chunk = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
            arrays[name] = np.float64(chunk[0]) if shape == () else chunk.reshape(shape).copy()
        if offset != len(raw):
            raise ShapeError(f"weights.bin holds {len(raw)} bytes, manifest expects {offset}")
        return cls(manifest["channels"], manifest["heads"], manifest["token_dim"],
                   manifest["meas_width"], arrays, seed=manifest.get("seed"))


def _check_feature(f, w: BlockWeights) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3:
        raise ShapeError(f"feature map must be (H, W, C), got {f.shape}")
    if f.shape[2] != w.channels:
        raise ShapeError(f"feature has {f.shape[2]} channels, weights expect {w.channels}")
    return f


def scb_forward(f_in, w: BlockWeights) -> np.ndarray:
    """Spatial branch: conv3x3 -> leaky ReLU -> conv3x3, same size as input."""
    f = _check_feature(f_in, w)
    h = leaky_relu(conv2d(f, w.scb_kernel1, w.scb_bias1))
    return conv2d(h, w.scb_kernel2, w.scb_bias2)


class ChannelAttentionTrace(NamedTuple):
    output: np.ndarray          # (H, W, C) after the final projection
    heads_output: np.ndarray    # (H*W, C) concatenated head outputs, pre-projection
    values: np.ndarray          # (H*W, C) value tokens
    attention: list             # per head: (C/N, C/N) row-stochastic map


def channel_attention_trace(f_in, w: BlockWeights) -> ChannelAttentionTrace:
    """Channel-wise multi-head self-attention with intermediates exposed.

    Tokens are pixels; queries/keys/values are linear maps of the token
    matrix. Attention is computed between channels (Q_i^T K_i, scaled by
    sqrt(head_dim)), so each map is (C/N) x (C/N) however large the image.
    Head output channel a mixes the value channels with the softmax row a.
    """
    f = _check_feature(f_in, w)
    height, width, c = f.shape
    tokens = f.reshape(height * width, c)
    q = tokens @ w.attn_query
    k = tokens @ w.attn_key
    v = tokens @ w.attn_value
    dh = w.head_dim
    outs, maps = [], []
    for i in range(w.heads):
        sl = slice(i * dh, (i + 1) * dh)
        scores = q[:, sl].T @ k[:, sl] / np.sqrt(dh)
        attn = softmax_rows(scores)
        outs.append(v[:, sl] @ attn.T)
        maps.append(attn)
    heads_output = np.concatenate(outs, axis=1)
    out_tokens = heads_output @ w.attn_out
    return ChannelAttentionTrace(out_tokens.reshape(height, width, c), heads_output, v, maps)


def channel_attention_forward(f_in, w: BlockWeights) -> np.ndarray:
    return channel_attention_trace(f_in, w).output


def rsca_forward(f_att, w: BlockWeights) -> np.ndarray:
    """F + gamma * (F - gelu(channel_mean(F))): amplifies the part of each
    feature that deviates from its per-pixel channel average."""
    f = _check_feature(f_att, w)
    squeezed = f.mean(axis=2, keepdims=True)
    return f + float(w.rsca_gamma) * (f - gelu(squeezed))


def ctb_forward(f_in, w: BlockWeights) -> np.ndarray:
    """Fuse the convolution and channel-attention branches, then an FFN tail.

    Concat(SCB(F), RSCA(attention(F))) is projected back to C channels by a
    1x1 convolution and added to the input; the tail adds
    pointwise(depthwise(gelu(conv3x3(.)))) as a second residual.
    """
    f = _check_feature(f_in, w)
    spatial = scb_forward(f, w)
    chans = rsca_forward(channel_attention_forward(f, w), w)
    fused_in = np.concatenate([spatial, chans], axis=2)
    fused = fused_in @ w.fuse_weight + w.fuse_bias + f
    tail = gelu(conv2d(fused, w.ffn_conv_kernel, w.ffn_conv_bias))
    tail = depthwise_conv2d(tail, w.ffn_depth_kernel, w.ffn_depth_bias)
    tail = tail @ w.ffn_point_weight + w.ffn_point_bias
    return fused + tail


def meb_forward(y, w: BlockWeights) -> tuple[np.ndarray, np.ndarray]:
    """Encode a measurement into (queries, keys), one token per row.

    Two 3x3 conv + leaky ReLU layers lift the measurement to token_dim
    channels; channel-mean pooling leaves one width-long feature per row,
    which a learned projection maps to token_dim. Separate linear heads
    emit the query and key token matrices (rows x token_dim).
    """
    if isinstance(y, Measurement):
        y = y.y
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.size == 0:
        raise ShapeError(f"measurement must be a nonempty 2-D array, got {y.shape}")
    if y.shape[1] != w.meas_width:
        raise ShapeError(f"measurement width {y.shape[1]} does not match weights ({w.meas_width})")
    h = leaky_relu(conv2d(y[:, :, None], w.meb_kernel1, w.meb_bias1))
    h = leaky_relu(conv2d(h, w.meb_kernel2, w.meb_bias2))
    row_features = h.mean(axis=2)            # (rows, width)
    tokens = row_features @ w.meb_row_proj   # (rows, token_dim)
    return tokens @ w.meb_query_head, tokens @ w.meb_key_head


class MacaTrace(NamedTuple):
    output: np.ndarray           # (H, W, C)
    summary: np.ndarray          # (N_Y, token_dim) measurement-guided summary
    forward_attention: np.ndarray   # (N_Y, H*W/D^2)
    backward_attention: np.ndarray  # (H*W, N_Y)
    key_sequence_length: int     # H*W/D^2 after pooling
    stage1_score_ops: int        # multiplies for the stage-1 score matrix


def maca_trace(f_in, y, downsample: int, w: BlockWeights) -> MacaTrace:
    """Measurement-aware cross-attention with intermediates exposed.

    Stage 1 pools the feature map by ``downsample`` and lets measurement
    queries attend over the pooled keys, cutting the key sequence from H*W
    to H*W/D^2. Stage 2 computes full-resolution queries against the
    measurement keys and propagates the stage-1 summary to every pixel.
    The result is projected back to C channels and added to the input.
    """
    f = _check_feature(f_in, w)
    height, width, c = f.shape
    if downsample < 1:
        raise InvalidDimensionError(f"downsample factor must be >= 1, got {downsample}")
    if height % downsample or width % downsample:
        raise ShapeError(f"spatial dims {height}x{width} not divisible by {downsample}")
    q_y, k_y = meb_forward(y, w)

    pooled = avg_pool2d(f, downsample)
    low_tokens = pooled.reshape(-1, c)
    k_low = low_tokens @ w.maca_key
    v_low = low_tokens @ w.maca_value
    scale = np.sqrt(w.token_dim)
    forward_attn = softmax_rows(q_y @ k_low.T / scale)
    summary = forward_attn @ v_low           # (N_Y, token_dim)

    q_high = f.reshape(-1, c) @ w.maca_query
    backward_attn = softmax_rows(q_high @ k_y.T / scale)
    refined = backward_attn @ summary        # (H*W, token_dim)
    out = f + (refined @ w.maca_out).reshape(height, width, c)
    key_len = low_tokens.shape[0]
    return MacaTrace(out, summary, forward_attn, backward_attn,
                     key_len, q_y.shape[0] * key_len * w.token_dim)


def maca_forward(f_in, y, downsample: int, w: BlockWeights) -> np.ndarray:
    return maca_trace(f_in, y, downsample, w).output


def toy_denoiser_stage(u, y, w: BlockWeights, downsample: int = 1) -> np.ndarray:
    """Single denoiser stage usable inside the reconstruction loop.

    Lifts the 2-D iterate to C channels with a 3x3 convolution, applies the
    fused conv/attention block and the measurement cross-attention, then
    projects back to one channel with another 3x3 convolution.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ShapeError(f"iterate must be 2-D, got {u.shape}")
    f = conv2d(u[:, :, None], w.lift_kernel, w.lift_bias)
    f = ctb_forward(f, w)
    f = maca_forward(f, y, downsample, w)
    return conv2d(f, w.project_kernel, w.project_bias)[:, :, 0]
