"""Tiles, multi-resolution glimpses, the down-sampled context image and raster I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CONTEXT_FACTOR = 16
QMAX = 65535  # 16-bit raster samples

AUGMENT_OPS = ("rot0", "rot90", "rot180", "rot270", "flipH", "flipV", "transpose")
INVERSE_OP = {
    "rot0": "rot0",
    "rot90": "rot270",
    "rot180": "rot180",
    "rot270": "rot90",
    "flipH": "flipH",
    "flipV": "flipV",
    "transpose": "transpose",
}
_SQUARE_ONLY = {"rot90", "rot270", "transpose"}


class RasterError(ValueError):
    pass


@dataclass
class Tile:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    label: int
    stain: np.ndarray  # (H, W) in [0, 1]
    relevance: np.ndarray  # (H, W) bool
    seed: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    def validate(self) -> None:
        h, w = self.shape
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must be HxWx3, got {self.pixels.shape}")
        if h % CONTEXT_FACTOR or w % CONTEXT_FACTOR:
            raise ValueError(f"tile dims {h}x{w} must be multiples of {CONTEXT_FACTOR}")
        if self.stain.shape != (h, w) or self.relevance.shape != (h, w):
            raise ValueError("stain/relevance shape does not match pixels")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise ValueError("pixel values outside [0, 1]")
        if bool(self.relevance.any()) != (self.label > 0):
            raise ValueError("relevance mask must be nonempty iff label > 0")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tile):
            return NotImplemented
        return (
            self.label == other.label
            and self.seed == other.seed
            and np.array_equal(self.pixels, other.pixels)
            and np.array_equal(self.stain, other.stain)
            and np.array_equal(self.relevance, other.relevance)
        )


@dataclass(frozen=True)
class Location:
    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(min(max(self.x, 0.0), 1.0)))
        object.__setattr__(self, "y", float(min(max(self.y, 0.0), 1.0)))


@dataclass
class Glimpse:
    fine: np.ndarray
    coarse: np.ndarray
    center: Location


@dataclass
class ContextImage:
    pixels: np.ndarray
    suppressed: list = field(default_factory=list)


def pixel_center(x: float, extent: int) -> int:
    """Pixel index nearest to the normalized coordinate ``x`` (halves round up)."""
    return int(np.floor(x * (extent - 1) + 0.5))


def window_start(center_px: int, size: int, extent: int) -> int:
    # shift inward so the whole window lies inside the tile
    return int(min(max(center_px - size // 2, 0), extent - size))


def fine_window(center: Location, w: int, shape: tuple[int, int]) -> tuple[int, int]:
    """Top/left pixel of the full-resolution glimpse footprint."""
    h_, w_ = shape
    top = window_start(pixel_center(center.y, h_), w, h_)
    left = window_start(pixel_center(center.x, w_), w, w_)
    return top, left


def pool(a: np.ndarray, k: int) -> np.ndarray:
    """k x k block average over the first two axes."""
    if k == 1:
        return a
    h, w = a.shape[:2]
    return a.reshape(h // k, k, w // k, k, *a.shape[2:]).mean(axis=(1, 3))


def crop_scaled(pixels: np.ndarray, cx: int, cy: int, w: int, scale: int) -> np.ndarray:
    """Crop a (scale*w)^2 window around (cx, cy), clamped inside, pooled back to w x w."""
    size = w * scale
    h_, w_ = pixels.shape[:2]
    top = window_start(cy, size, h_)
    left = window_start(cx, size, w_)
    return pool(pixels[top : top + size, left : left + size], scale)


def _check_patch(w: int, shape: tuple[int, int], max_scale: int = 2) -> None:
    if w <= 0 or w % 2:
        raise ValueError(f"patch side must be a positive even number, got {w}")
    if w * max_scale > min(shape):
        raise ValueError(f"patch side {w} too large for a {shape[0]}x{shape[1]} tile")


def extract_glimpse(tile: Tile, center: Location, w: int, scales: tuple[int, int] = (1, 2)) -> Glimpse:
    """Cut the two-resolution patch pair centred on ``center``.

    ``scales`` gives the crop extent of each patch in units of ``w``; the
    default (1, 2) is a full-resolution crop plus a double-extent crop
    average-pooled by two.
    """
    _check_patch(w, tile.shape, max(scales))
    h_, w_ = tile.shape
    cx, cy = pixel_center(center.x, w_), pixel_center(center.y, h_)
    fine = crop_scaled(tile.pixels, cx, cy, w, scales[0])
    coarse = crop_scaled(tile.pixels, cx, cy, w, scales[1])
    return Glimpse(fine=fine, coarse=coarse, center=center)


def make_context(tile: Tile) -> ContextImage:
    h, w = tile.shape
    if h % CONTEXT_FACTOR or w % CONTEXT_FACTOR:
        raise ValueError(f"tile dims {h}x{w} not divisible by {CONTEXT_FACTOR}")
    return ContextImage(pixels=pool(tile.pixels, CONTEXT_FACTOR), suppressed=[])


def context_window(center: Location, w: int, tile_shape: tuple[int, int]) -> tuple[int, int, int]:
    """Context-resolution (top, left, side) of the fine glimpse footprint."""
    top, left = fine_window(center, w, tile_shape)
    side = max(1, w // CONTEXT_FACTOR)
    ch, cw = tile_shape[0] // CONTEXT_FACTOR, tile_shape[1] // CONTEXT_FACTOR

    def start(pos: int, extent: int) -> int:
        mid = (pos + w / 2) / CONTEXT_FACTOR
        return int(min(max(np.floor(mid - side / 2 + 0.5), 0), extent - side))

    return start(top, ch), start(left, cw), side


def suppress_region(ctx: ContextImage, center: Location, w: int) -> ContextImage:
    """Zero the context pixels under the fine glimpse footprint at ``center``."""
    ch, cw = ctx.pixels.shape[:2]
    top, left, side = context_window(center, w, (ch * CONTEXT_FACTOR, cw * CONTEXT_FACTOR))
    pixels = ctx.pixels.copy()
    pixels[top : top + side, left : left + side] = 0.0
    suppressed = list(ctx.suppressed)
    if center not in suppressed:
        suppressed.append(center)
    return ContextImage(pixels=pixels, suppressed=suppressed)


def _transform(a: np.ndarray, op: str) -> np.ndarray:
    if op == "rot0":
        out = a
    elif op.startswith("rot"):
        out = np.rot90(a, int(op[3:]) // 90, axes=(0, 1))
    elif op == "flipH":
        out = a[:, ::-1]
    elif op == "flipV":
        out = a[::-1]
    elif op == "transpose":
        out = np.swapaxes(a, 0, 1)
    else:
        raise ValueError(f"unknown augmentation {op!r}")
    return np.ascontiguousarray(out)


def augment_array(a: np.ndarray, op: str) -> np.ndarray:
    if op in _SQUARE_ONLY and a.shape[0] != a.shape[1]:
        raise ValueError(f"{op} requires a square input, got {a.shape[:2]}")
    return _transform(a, op)


def augment(tile: Tile, op: str) -> Tile:
    return replace(
        tile,
        pixels=augment_array(tile.pixels, op),
        stain=augment_array(tile.stain, op),
        relevance=augment_array(tile.relevance, op),
    )


# -- raster I/O ---------------------------------------------------------------
#
# The raster is a PAM (P7) file with four big-endian 16-bit samples per pixel:
# R, G, B and the stain channel.  The sidecar JSON holds label, seed and the
# relevance mask as run lengths (alternating False/True, starting with False).


def quantize(a: np.ndarray) -> np.ndarray:
    return np.round(np.clip(a, 0.0, 1.0) * QMAX) / QMAX


def _to_samples(a: np.ndarray, what: str) -> np.ndarray:
    q = np.round(a * QMAX)
    if np.any(q < 0) or np.any(q > QMAX) or not np.array_equal(q / QMAX, a):
        raise RasterError(f"{what} values are not on the 16-bit grid; quantize() first")
    return q.astype(">u2")


def mask_to_runs(mask: np.ndarray) -> list[int]:
    flat = mask.ravel().astype(np.int8)
    edges = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], edges, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return runs


def runs_to_mask(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    if sum(runs) != shape[0] * shape[1]:
        raise RasterError(f"mask runs cover {sum(runs)} pixels, raster has {shape[0] * shape[1]}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(shape)


def sidecar_path(path: Path | str) -> Path:
    return Path(path).with_suffix(".json")


def raster_header(h: int, w: int, depth: int = 4, tupltype: str = "RGB_STAIN") -> bytes:
    return (
        f"P7\nWIDTH {w}\nHEIGHT {h}\nDEPTH {depth}\nMAXVAL {QMAX}\nTUPLTYPE {tupltype}\nENDHDR\n"
    ).encode("ascii")


def write_raster(path: Path | str, tile: Tile) -> None:
    path = Path(path)
    h, w = tile.shape
    samples = np.concatenate(
        [_to_samples(tile.pixels, "pixel"), _to_samples(tile.stain, "stain")[..., None]], axis=2
    )
    # concatenate returns native byte order, so pin big-endian explicitly
    path.write_bytes(raster_header(h, w) + samples.astype(">u2").tobytes())
    meta = {"label": int(tile.label), "seed": int(tile.seed), "height": h, "width": w,
            "relevance_runs": mask_to_runs(tile.relevance)}
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


def parse_header(data: bytes) -> tuple[dict[str, str], int]:
    end = data.find(b"ENDHDR\n")
    if not data.startswith(b"P7\n") or end < 0:
        raise RasterError("malformed header: missing P7 magic or ENDHDR")
    fields = {}
    for line in data[3:end].decode("ascii", errors="replace").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    for key in ("WIDTH", "HEIGHT", "DEPTH", "MAXVAL"):
        if key not in fields or not fields[key].isdigit():
            raise RasterError(f"malformed header: bad or missing {key}")
    if int(fields["MAXVAL"]) != QMAX:
        raise RasterError(f"malformed header: MAXVAL must be {QMAX}")
    return fields, end + len(b"ENDHDR\n")


def read_samples(path: Path | str) -> np.ndarray:
    """Raw (H, W, DEPTH) sample grid scaled to [0, 1]."""
    data = Path(path).read_bytes()
    fields, offset = parse_header(data)
    h, w, depth = int(fields["HEIGHT"]), int(fields["WIDTH"]), int(fields["DEPTH"])
    expected = h * w * depth * 2
    payload = data[offset:]
    if len(payload) != expected:
        raise RasterError(f"payload error: expected {expected} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=">u2").reshape(h, w, depth).astype(np.float64) / QMAX


def read_raster(path: Path | str) -> Tile:
    samples = read_samples(path)
    if samples.shape[2] != 4:
        raise RasterError(f"malformed header: tile rasters carry 4 samples, got {samples.shape[2]}")
    try:
        meta = json.loads(sidecar_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RasterError(f"unreadable sidecar for {path}: {exc}") from exc
    h, w = samples.shape[:2]
    if (meta.get("height"), meta.get("width")) != (h, w):
        raise RasterError("mask/pixel shape mismatch between sidecar and raster")
    relevance = runs_to_mask(meta["relevance_runs"], (h, w))
    return Tile(
        pixels=np.ascontiguousarray(samples[..., :3]),
        label=int(meta["label"]),
        stain=np.ascontiguousarray(samples[..., 3]),
        relevance=relevance,
        seed=int(meta["seed"]),
    )


def write_rgb(path: Path | str, pixels: np.ndarray) -> None:
    """Plain 16-bit binary PPM (P6), used for overlays."""
    h, w = pixels.shape[:2]
    header = f"P6\n{w} {h}\n{QMAX}\n".encode("ascii")
    Path(path).write_bytes(header + _to_samples(pixels, "pixel").tobytes())
