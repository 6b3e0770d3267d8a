"""Fixed-topology network: residual encoders, two-layer LSTM core and the heads.

Everything is float64 numpy with hand-written reverse passes.  Images enter
as NHWC; the convolutions work channel-first internally.  Forward functions return ``(output, cache)``; the matching ``*_backward``
takes the cache and the upstream gradient and returns input gradients plus a
dict of parameter gradients keyed like the :class:`ParameterSet`.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

GROUPS = ("theta_c1", "theta_c1b", "theta_c2", "theta_hstar", "theta_h", "theta_l", "theta_y")


@dataclass
class NetConfig:
    tile_size: int = 256
    patch: int = 16
    scales: tuple = (1, 2)
    channels: tuple = (8, 16)
    glimpse_features: int = 64  # per branch; the two branches are concatenated
    context_features: int = 128
    hidden: tuple = (256, 128)
    classes: int = 4
    share_branches: bool = True
    context_pool: str = "flatten"  # or "mean"
    init_std: float = 0.01
    # fixed affine input standardisation applied before both encoders
    input_mean: float = 0.8
    input_std: float = 0.15
    init_scheme: str = "fixed"  # "fixed": N(0, init_std^2); "fan_in": variance scaled by 1/fan_in

    def __post_init__(self):
        self.scales = tuple(int(s) for s in self.scales)
        self.channels = tuple(int(c) for c in self.channels)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.context_features != self.hidden[1]:
            raise ValueError("context features must match the top recurrent layer for the Hadamard fusion")
        if self.init_scheme not in ("fixed", "fan_in"):
            raise ValueError(f"unknown init_scheme {self.init_scheme!r}")
        if self.context_pool not in ("flatten", "mean"):
            raise ValueError(f"unknown context_pool {self.context_pool!r}")

    @property
    def context_size(self) -> int:
        return self.tile_size // 16

    @property
    def feature_dim(self) -> int:
        return 2 * self.glimpse_features

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class ParameterSet(dict):
    """Named float64 arrays, keys ``<group>.<name>`` with groups from :data:`GROUPS`."""

    def group(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.items() if k.startswith(prefix)}

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet({k: np.zeros_like(v) for k, v in self.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.values())

    def allclose(self, other: "ParameterSet", **kw) -> bool:
        return self.keys() == other.keys() and all(np.allclose(self[k], other[k], **kw) for k in self)

    def equal(self, other: "ParameterSet") -> bool:
        return self.keys() == other.keys() and all(np.array_equal(self[k], other[k]) for k in self)


# -- primitives -------------------------------------------------------------------


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def conv_forward(x, w, b=None, stride=1):
    """3x3 convolution, zero padding 1. x: (N,C,H,W), w: (Co,C,3,3)."""
    n, c, h, wd = x.shape
    co, ci, k, _ = w.shape
    if ci != c:
        raise ValueError(f"conv expects {ci} input channels, got {c}")
    # channel-major padded copy so the im2col matrix is one (C*9, N*Ho*Wo) block for a single BLAS call
    xp = np.zeros((c, n, h + 2, wd + 2))
    xp[:, :, 1:-1, 1:-1] = x.transpose(1, 0, 2, 3)
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    cols = np.empty((c, k * k, n, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, i * k + j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols = cols.reshape(c * k * k, n * ho * wo)
    w2 = w.reshape(co, -1)
    out = w2 @ cols
    if b is not None:
        out += b[:, None]
    out = out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    return out, (xp.shape, cols, w2, w.shape, stride, ho, wo, b is not None)


def conv_backward(dout, cache, need_dx: bool = True):
    xp_shape, cols, w2, w_shape, stride, ho, wo, has_bias = cache
    c, n = xp_shape[:2]
    co, _, k, _ = w_shape
    d2 = dout.transpose(1, 0, 2, 3).reshape(co, n * ho * wo)
    dw = (d2 @ cols.T).reshape(w_shape)
    db = d2.sum(axis=1) if has_bias else None
    if not need_dx:
        return None, dw, db
    dcols = (w2.T @ d2).reshape(c, k * k, n, ho, wo)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i * k + j]
    return dxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3), dw, db


def residual_block(p, w1, w2):
    """relu(F(p) + p) with F = conv -> relu -> conv (no biases)."""
    z1, c1 = conv_forward(p, w1)
    a1 = np.maximum(z1, 0.0)
    z2, c2 = conv_forward(a1, w2)
    if z2.shape != p.shape:
        raise ValueError(f"residual branch shape {z2.shape} != input shape {p.shape}")
    s = z2 + p
    out = np.maximum(s, 0.0)
    return out, (c1, z1 > 0, c2, s > 0)


def residual_block_backward(dout, cache):
    c1, m1, c2, ms = cache
    ds = dout * ms
    da1, dw2, _ = conv_backward(ds, c2)
    dp, dw1, _ = conv_backward(da1 * m1, c1)
    return dp + ds, dw1, dw2


def encoder_forward(params: ParameterSet, group: str, x, pool: str):
    """Residual CNN on a batch of NHWC images -> (N, features)."""
    n_stages = sum(1 for k in params if k.startswith(group + ".conv") and k.endswith("_w"))
    caches = []
    a = np.ascontiguousarray(x.transpose(0, 3, 1, 2))
    for i in range(n_stages):
        z, cc = conv_forward(a, params[f"{group}.conv{i}_w"], params[f"{group}.conv{i}_b"], stride=1 if i == 0 else 2)
        a = np.maximum(z, 0.0)
        a, rc = residual_block(a, params[f"{group}.res{i}_w1"], params[f"{group}.res{i}_w2"])
        caches.append((cc, z > 0, rc))
    shape = a.shape
    feat = a.mean(axis=(2, 3)) if pool == "mean" else a.reshape(shape[0], -1)
    out = feat @ params[f"{group}.fc_w"] + params[f"{group}.fc_b"]
    return out, (group, caches, shape, feat, pool, params[f"{group}.fc_w"])


def encoder_backward(dout, cache, need_dx: bool = True):
    group, caches, shape, feat, pool, fc_w = cache
    grads = {f"{group}.fc_w": feat.T @ dout, f"{group}.fc_b": dout.sum(axis=0)}
    dfeat = dout @ fc_w.T
    if pool == "mean":
        da = np.broadcast_to(dfeat[:, :, None, None] / (shape[2] * shape[3]), shape)
    else:
        da = dfeat.reshape(shape)
    for i in reversed(range(len(caches))):
        cc, mask, rc = caches[i]
        da, dw1, dw2 = residual_block_backward(da, rc)
        grads[f"{group}.res{i}_w1"] = dw1
        grads[f"{group}.res{i}_w2"] = dw2
        da, dw, db = conv_backward(da * mask, cc, need_dx=need_dx or i > 0)
        grads[f"{group}.conv{i}_w"] = dw
        grads[f"{group}.conv{i}_b"] = db
    return (da.transpose(0, 2, 3, 1) if da is not None else None), grads


def lstm_forward(x, h, c, W, b):
    """One LSTM cell step; gate order (input, forget, output, candidate)."""
    hd = h.shape[-1]
    xh = np.concatenate([x, h], axis=-1)
    z = xh @ W + b
    i, f, o = sigmoid(z[:, :hd]), sigmoid(z[:, hd : 2 * hd]), sigmoid(z[:, 2 * hd : 3 * hd])
    g = np.tanh(z[:, 3 * hd :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, c, i, f, o, g, tc, W)


def lstm_backward(dh, dc, cache):
    xh, c, i, f, o, g, tc, W = cache
    dc = dc + dh * o * (1.0 - tc**2)
    dz = np.concatenate(
        [dc * g * i * (1 - i), dc * c * f * (1 - f), dh * tc * o * (1 - o), dc * i * (1 - g**2)], axis=-1
    )
    dW = xh.T @ dz
    db = dz.sum(axis=0)
    dxh = dz @ W.T
    nx = xh.shape[-1] - c.shape[-1]
    return dxh[:, :nx], dxh[:, nx:], dc * f, dW, db


# -- parameters -------------------------------------------------------------------


def _encoder_shapes(channels, in_ch, n_in_feat, n_out) -> dict:
    shapes = {}
    prev = in_ch
    for i, ch in enumerate(channels):
        shapes[f"conv{i}_w"] = (ch, prev, 3, 3)
        shapes[f"conv{i}_b"] = (ch,)
        shapes[f"res{i}_w1"] = (ch, ch, 3, 3)
        shapes[f"res{i}_w2"] = (ch, ch, 3, 3)
        prev = ch
    shapes["fc_w"] = (n_in_feat, n_out)
    shapes["fc_b"] = (n_out,)
    return shapes


def _downsampled(side: int, stages: int) -> int:
    for _ in range(stages - 1):
        side = (side - 1) // 2 + 1
    return side


def param_shapes(cfg: NetConfig) -> dict:
    ch = cfg.channels
    shapes = {}
    for group in ("theta_c1",) + (() if cfg.share_branches else ("theta_c1b",)):
        for k, v in _encoder_shapes(ch, 3, ch[-1], cfg.glimpse_features).items():
            shapes[f"{group}.{k}"] = v
    side = _downsampled(cfg.context_size, len(ch))
    ctx_in = ch[-1] * side * side if cfg.context_pool == "flatten" else ch[-1]
    for k, v in _encoder_shapes(ch, 3, ctx_in, cfg.context_features).items():
        shapes[f"theta_c2.{k}"] = v
    h1, h2 = cfg.hidden
    shapes["theta_hstar.W"] = (cfg.feature_dim + h1, 4 * h1)
    shapes["theta_hstar.b"] = (4 * h1,)
    shapes["theta_h.W"] = (h1 + h2, 4 * h2)
    shapes["theta_h.b"] = (4 * h2,)
    shapes["theta_l.W"] = (h2, 2)
    shapes["theta_l.b"] = (2,)
    shapes["theta_y.W"] = (h2, cfg.classes)
    shapes["theta_y.b"] = (cfg.classes,)
    return shapes


def is_bias(name: str) -> bool:
    leaf = name.split(".", 1)[1]
    return leaf == "b" or leaf.endswith("_b")


def _fan_in_std(name: str, shape: tuple) -> float:
    fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
    # relu layers get the He gain, recurrent and head matrices unit gain
    gain = 2.0 if name.startswith("theta_c") else 1.0
    return float(np.sqrt(gain / fan_in))


def init_params(cfg: NetConfig, seed: int) -> ParameterSet:
    """Weights ~ N(0, init_std^2) (or fan-in scaled), biases 0."""
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    for name, shape in param_shapes(cfg).items():
        if is_bias(name):
            params[name] = np.zeros(shape)
        else:
            std = cfg.init_std if cfg.init_scheme == "fixed" else _fan_in_std(name, shape)
            params[name] = rng.normal(0.0, std, size=shape)
    return params


# -- model-level ops ------------------------------------------------------------


@dataclass
class HiddenState:
    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray

    @classmethod
    def zeros(cls, cfg: NetConfig, n: int = 1) -> "HiddenState":
        h1, h2 = cfg.hidden
        return cls(np.zeros((n, h1)), np.zeros((n, h1)), np.zeros((n, h2)), np.zeros((n, h2)))


def _batched(a, ndim):
    return (a[None], True) if a.ndim == ndim - 1 else (a, False)


def standardize(x, cfg: NetConfig) -> np.ndarray:
    return (np.asarray(x, dtype=float) - cfg.input_mean) / cfg.input_std


def encode_patches(params: ParameterSet, cfg: NetConfig, fine, coarse):
    """(N,w,w,3) x2 -> (N, 2*glimpse_features) with the cache for the reverse pass."""
    n = fine.shape[0]
    fine, coarse = standardize(fine, cfg), standardize(coarse, cfg)
    if cfg.share_branches:
        out, cache = encoder_forward(params, "theta_c1", np.concatenate([fine, coarse]), "mean")
        v = np.concatenate([out[:n], out[n:]], axis=1)
        return v, ("shared", cache)
    of, cf = encoder_forward(params, "theta_c1", fine, "mean")
    oc, cc = encoder_forward(params, "theta_c1b", coarse, "mean")
    return np.concatenate([of, oc], axis=1), ("split", cf, cc)


def encode_patches_backward(dv, cache):
    k = dv.shape[1] // 2
    if cache[0] == "shared":
        _, grads = encoder_backward(np.concatenate([dv[:, :k], dv[:, k:]]), cache[1], need_dx=False)
        return grads
    _, g1 = encoder_backward(dv[:, :k], cache[1], need_dx=False)
    _, g2 = encoder_backward(dv[:, k:], cache[2], need_dx=False)
    g1.update(g2)
    return g1


def encode_glimpse(glimpse, params: ParameterSet, cfg: NetConfig) -> np.ndarray:
    fine, single = _batched(np.asarray(glimpse.fine), 4)
    coarse, _ = _batched(np.asarray(glimpse.coarse), 4)
    if fine.shape[1:] != (cfg.patch, cfg.patch, 3) or coarse.shape != fine.shape:
        raise ValueError(f"glimpse patches {fine.shape[1:]} do not match patch side {cfg.patch}")
    v, _ = encode_patches(params, cfg, fine, coarse)
    return v[0] if single else v


def encode_context(ctx, params: ParameterSet, cfg: NetConfig) -> np.ndarray:
    pixels = ctx.pixels if hasattr(ctx, "pixels") else ctx
    x, single = _batched(np.asarray(pixels), 4)
    if x.shape[1:] != (cfg.context_size, cfg.context_size, 3):
        raise ValueError(f"context shape {x.shape[1:]} does not match tile size {cfg.tile_size}")
    out, _ = encoder_forward(params, "theta_c2", standardize(x, cfg), cfg.context_pool)
    return out[0] if single else out


def recurrent_step(v, state: HiddenState, params: ParameterSet):
    """Layer 1 consumes the glimpse features, layer 2 consumes layer 1."""
    v, single = _batched(np.asarray(v), 2)
    h1, c1, k1 = lstm_forward(v, state.h1, state.c1, params["theta_hstar.W"], params["theta_hstar.b"])
    h2, c2, k2 = lstm_forward(h1, state.h2, state.c2, params["theta_h.W"], params["theta_h.b"])
    new = HiddenState(h1, c1, h2, c2)
    return new, (h2[0] if single else h2)


def location_head(hidden, v16, params: ParameterSet):
    """Mean of the next location: sigmoid(W (hidden * v16) + b)."""
    fused = np.asarray(hidden) * np.asarray(v16)
    return sigmoid(fused @ params["theta_l.W"] + params["theta_l.b"])


def class_head(hidden, params: ParameterSet):
    return softmax(np.asarray(hidden) @ params["theta_y.W"] + params["theta_y.b"])


# -- whole-sequence replay with reverse pass ------------------------------------


@dataclass
class SequenceOutput:
    probs: np.ndarray  # (N, T, classes)
    mu: np.ndarray  # (N, T, 2)
    v16: np.ndarray  # (N, T, context_features)
    h2: np.ndarray  # (N, T, hidden[1])


def sequence_forward(params: ParameterSet, cfg: NetConfig, fine, coarse, contexts, use_context: bool = True):
    """Replay recorded glimpses and contexts through the whole model.

    fine, coarse: (N, T, w, w, 3); contexts: (N, T, h, w, 3) or None.
    """
    n, t = fine.shape[:2]
    v, pcache = encode_patches(params, cfg, fine.reshape(n * t, *fine.shape[2:]),
                               coarse.reshape(n * t, *coarse.shape[2:]))
    v = v.reshape(n, t, -1)
    if use_context:
        v16, ccache = encoder_forward(params, "theta_c2", standardize(contexts.reshape(n * t, *contexts.shape[2:]), cfg),
                                      cfg.context_pool)
        v16 = v16.reshape(n, t, -1)
    else:
        v16, ccache = np.ones((n, t, cfg.context_features)), None
    state = HiddenState.zeros(cfg, n)
    h2s, lcaches = [], []
    for step in range(t):
        h1, c1, k1 = lstm_forward(v[:, step], state.h1, state.c1, params["theta_hstar.W"], params["theta_hstar.b"])
        h2, c2, k2 = lstm_forward(h1, state.h2, state.c2, params["theta_h.W"], params["theta_h.b"])
        state = HiddenState(h1, c1, h2, c2)
        h2s.append(h2)
        lcaches.append((k1, k2))
    h2 = np.stack(h2s, axis=1)
    probs = softmax(h2 @ params["theta_y.W"] + params["theta_y.b"])
    fused = h2 * v16
    mu = sigmoid(fused @ params["theta_l.W"] + params["theta_l.b"])
    cache = (pcache, ccache, lcaches, h2, v16, fused, mu, n, t, params)
    return SequenceOutput(probs=probs, mu=mu, v16=v16, h2=h2), cache


def sequence_backward(dlogits, dmu, cache, location_to_core: bool = True) -> ParameterSet:
    """Gradients w.r.t. every parameter given d(loss)/d(logits) and d(loss)/d(mu).

    With ``location_to_core`` False the location gradient stops at the fused
    features: it trains the location head and the context encoder only.
    """
    pcache, ccache, lcaches, h2, v16, fused, mu, n, t, params = cache
    grads = params.zeros_like()
    dz = dmu * mu * (1.0 - mu)
    grads["theta_l.W"] = np.einsum("ntk,ntj->kj", fused, dz)
    grads["theta_l.b"] = dz.sum(axis=(0, 1))
    dfused = dz @ params["theta_l.W"].T
    dh2 = dlogits @ params["theta_y.W"].T
    if location_to_core:
        dh2 = dh2 + dfused * v16
    dv16 = dfused * h2
    grads["theta_y.W"] = np.einsum("ntk,ntj->kj", h2, dlogits)
    grads["theta_y.b"] = dlogits.sum(axis=(0, 1))

    dv = np.zeros((n, t, params["theta_hstar.W"].shape[0] - lcaches[0][0][1].shape[-1]))
    dh1_next = np.zeros_like(lcaches[0][0][1])
    dc1_next = np.zeros_like(dh1_next)
    dh2_next = np.zeros_like(h2[:, 0])
    dc2_next = np.zeros_like(dh2_next)
    for step in reversed(range(t)):
        k1, k2 = lcaches[step]
        dx2, dh2_prev, dc2_next, dW, db = lstm_backward(dh2[:, step] + dh2_next, dc2_next, k2)
        grads["theta_h.W"] += dW
        grads["theta_h.b"] += db
        dh2_next = dh2_prev
        dx1, dh1_prev, dc1_next, dW, db = lstm_backward(dx2 + dh1_next, dc1_next, k1)
        grads["theta_hstar.W"] += dW
        grads["theta_hstar.b"] += db
        dh1_next = dh1_prev
        dv[:, step] = dx1

    for k, g in encode_patches_backward(dv.reshape(n * t, -1), pcache).items():
        grads[k] = g
    if ccache is not None:
        _, cg = encoder_backward(dv16.reshape(n * t, -1), ccache, need_dx=False)
        for k, g in cg.items():
            grads[k] = g
    return grads


# -- finite differences -------------------------------------------------------------


def numerical_gradient(f, arrays: dict, eps: float = 1e-5) -> dict:
    """Central differences of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + eps
            fp = f()
            a[idx] = old - eps
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * eps)
        grads[name] = g
    return grads


def relative_error(analytic, numeric) -> float:
    a, b = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


# -- checkpoints --------------------------------------------------------------------

_MAGIC = b"RSCKPT01"


class CheckpointError(ValueError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(path: Path | str, params: ParameterSet, cfg: NetConfig, step: int = 0, seed: int = 0,
                    extra: dict | None = None) -> None:
    """Length-prefixed binary arrays plus a JSON manifest next to them."""
    path = Path(path)
    chunks = [_MAGIC, struct.pack(">I", len(params))]
    for name in sorted(params):
        a = np.ascontiguousarray(params[name], dtype=">f8")
        raw = name.encode()
        chunks.append(struct.pack(">I", len(raw)) + raw)
        chunks.append(struct.pack(">I", a.ndim) + struct.pack(f">{a.ndim}I", *a.shape))
        payload = a.tobytes()
        chunks.append(struct.pack(">Q", len(payload)) + payload)
    _atomic_write(path, b"".join(chunks))
    manifest = {"config_hash": cfg.digest(), "net": cfg.to_dict(), "step": int(step), "seed": int(seed)}
    if extra:
        manifest.update(extra)
    _atomic_write(path.with_suffix(".json"), (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())


def load_checkpoint(path: Path | str) -> tuple[ParameterSet, NetConfig, dict]:
    path = Path(path)
    data = path.read_bytes()
    try:
        manifest = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"missing or bad checkpoint manifest: {exc}") from exc
    if not data.startswith(_MAGIC):
        raise CheckpointError("not a checkpoint file")
    pos = len(_MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    (count,) = take(">I")
    params = ParameterSet()
    for _ in range(count):
        (nlen,) = take(">I")
        name = data[pos : pos + nlen].decode()
        pos += nlen
        (ndim,) = take(">I")
        shape = take(f">{ndim}I") if ndim else ()
        (nbytes,) = take(">Q")
        if pos + nbytes > len(data) or nbytes != 8 * int(np.prod(shape)):
            raise CheckpointError(f"bad payload for {name}")
        params[name] = np.frombuffer(data[pos : pos + nbytes], dtype=">f8").reshape(shape).astype(np.float64)
        pos += nbytes
    if not params.is_finite():
        raise CheckpointError("checkpoint contains NaN or Inf")
    cfg = NetConfig(**manifest["net"])
    if cfg.digest() != manifest["config_hash"]:
        raise CheckpointError("config hash mismatch")
    expected = param_shapes(cfg)
    if {k: tuple(v.shape) for k, v in params.items()} != {k: tuple(v) for k, v in expected.items()}:
        raise CheckpointError("checkpoint arrays do not match the configured shapes")
    return params, cfg, manifest
