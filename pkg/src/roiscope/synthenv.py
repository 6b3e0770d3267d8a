"""Deterministic synthetic IHC-like tiles and slides.

Each tile holds one to a few tumour nests: clusters of cells with hematoxylin
nuclei.  For scores 1-3 the cell membranes carry a DAB-like stain whose total
area fraction and intensity are drawn from per-class intervals, so the label is
recoverable from the stain channel alone while the signal stays spatially
localized.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .imaging import Tile, quantize, read_raster, write_raster

DAB_RGB = np.array([0.55, 0.33, 0.15])
HEMATOXYLIN_RGB = np.array([0.42, 0.36, 0.68])
TISSUE_RGB = np.array([0.92, 0.82, 0.88])
GLASS_RGB = np.array([0.96, 0.96, 0.96])


class GeneratorError(RuntimeError):
    pass


@dataclass
class EnvConfig:
    tile_size: int = 256
    classes: int = 4
    stain_fraction_ranges: tuple = ((0.0, 0.0), (0.02, 0.10), (0.10, 0.25), (0.10, 0.35))
    stain_intensity_ranges: tuple = ((0.0, 0.0), (0.2, 0.4), (0.4, 0.7), (0.7, 1.0))
    blob_count_range: tuple = (1, 3)
    cell_radius_range: tuple = (4.0, 7.0)
    membrane_width_range: tuple = (1.5, 3.0)
    noise_std: float = 0.03
    nuclei_per_tile: int = 120
    # draws stay this fraction of an interval's width away from its ends
    draw_margin: float = 0.05
    intensity_jitter: float = 0.02
    cell_density: float = 0.35
    minority_fraction: float = 0.2
    slide_tissue_range: tuple = (0.6, 1.0)
    seed: int = 0

    def __post_init__(self):
        self.stain_fraction_ranges = tuple(tuple(map(float, r)) for r in self.stain_fraction_ranges)
        self.stain_intensity_ranges = tuple(tuple(map(float, r)) for r in self.stain_intensity_ranges)
        self.blob_count_range = tuple(int(v) for v in self.blob_count_range)
        self.cell_radius_range = tuple(map(float, self.cell_radius_range))
        self.membrane_width_range = tuple(map(float, self.membrane_width_range))
        self.slide_tissue_range = tuple(map(float, self.slide_tissue_range))
        self.validate()

    def validate(self) -> None:
        if self.tile_size % 16:
            raise ValueError("tile_size must be a multiple of 16")
        if len(self.stain_fraction_ranges) != self.classes or len(self.stain_intensity_ranges) != self.classes:
            raise ValueError("need one fraction and one intensity interval per class")
        for lo, hi in self.stain_fraction_ranges + self.stain_intensity_ranges:
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"interval ({lo}, {hi}) not inside [0, 1]")
        if self.stain_fraction_ranges[0] != (0.0, 0.0):
            raise ValueError("class 0 carries no stain")
        boxes = [self._inner(c) for c in range(1, self.classes)]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                (f0, f1, i0, i1), (g0, g1, j0, j1) = boxes[i], boxes[j]
                if f0 < g1 and g0 < f1 and i0 < j1 and j0 < i1:
                    raise ValueError(f"classes {i + 1} and {j + 1} overlap in (fraction, intensity)")
        if not 0.0 <= self.minority_fraction < 0.5:
            raise ValueError("minority_fraction must lie in [0, 0.5)")

    def _inner(self, cls: int) -> tuple[float, float, float, float]:
        f0, f1 = self.stain_fraction_ranges[cls]
        i0, i1 = self.stain_intensity_ranges[cls]
        m = self.draw_margin
        return f0 + m * (f1 - f0), f1 - m * (f1 - f0), i0 + m * (i1 - i0), i1 - m * (i1 - i0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        return cls(**d)


@dataclass
class SyntheticSlide:
    tiles: list  # rows x cols nested list of Tile
    slide_label: int
    tissue_fraction: np.ndarray  # (rows, cols)
    seed: int = 0

    @property
    def rows(self) -> int:
        return len(self.tiles)

    @property
    def cols(self) -> int:
        return len(self.tiles[0])

    def tile_labels(self) -> np.ndarray:
        return np.array([[t.label for t in row] for row in self.tiles])


def tile_rng(cfg: EnvConfig, cls: int, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, cls, seed]))


def _disk_offsets(radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _offset_grid(int(np.ceil(radius)) + 1)


@lru_cache(maxsize=None)
def _offset_grid(r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    d = np.hypot(yy, xx)
    for a in (yy, xx, d):
        a.flags.writeable = False
    return yy, xx, d


def _paint_cells(rng, cfg: EnvConfig, target: int, tissue_cols: int, n: int, width_scale: float = 1.0):
    """Grow membrane rings around nest centres until exactly ``target`` pixels are stained.

    Returns the membrane mask and the list of cell (cy, cx, radius) triples.
    """
    mask = np.zeros((n, n), dtype=bool)
    cells = []
    if target <= 0:
        return mask, cells
    k = int(rng.integers(cfg.blob_count_range[0], cfg.blob_count_range[1] + 1))
    pad = min(16, tissue_cols // 4)
    centers = np.column_stack([rng.uniform(pad, n - pad, k), rng.uniform(pad, tissue_cols - pad, k)])
    radius = max(12.0, float(np.sqrt(target / (k * np.pi * cfg.cell_density))))
    count = 0
    last = None
    for it in range(20000):
        if it and it % 60 == 0:
            radius *= 1.08
        cy0, cx0 = centers[it % k]
        rho = radius * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        cy, cx = cy0 + rho * np.sin(phi), cx0 + rho * np.cos(phi)
        r = rng.uniform(*cfg.cell_radius_range)
        th = min(width_scale * rng.uniform(*cfg.membrane_width_range), r)
        cy, cx = min(max(cy, 0.0), n - 1.0), min(max(cx, 0.0), tissue_cols - 1.0)
        yy, xx, d = _disk_offsets(r)
        ys, xs = yy + int(round(cy)), xx + int(round(cx))
        ring = (d <= r) & (d > r - th) & (ys >= 0) & (ys < n) & (xs >= 0) & (xs < tissue_cols)
        ys, xs = ys[ring], xs[ring]
        new = ~mask[ys, xs]
        ys, xs = ys[new], xs[new]
        if ys.size == 0:
            continue
        mask[ys, xs] = True
        cells.append((cy, cx, r))
        count += ys.size
        last = (cy, cx, ys, xs)
        if count >= target:
            break
    else:
        raise GeneratorError(f"could not stain {target} pixels")
    excess = count - target
    if excess:
        cy, cx, ys, xs = last
        # drop a contiguous arc of the last membrane
        order = np.argsort(np.arctan2(ys - cy, xs - cx), kind="stable")
        drop = order[:excess]
        mask[ys[drop], xs[drop]] = False
    return mask, cells


def _stamp_disks(img: np.ndarray, centers, radii, color: np.ndarray, limit_cols: int) -> None:
    n = img.shape[0]
    for (cy, cx), r in zip(centers, radii):
        yy, xx, d = _disk_offsets(r)
        ys, xs = yy + int(round(cy)), xx + int(round(cx))
        keep = (d <= r) & (ys >= 0) & (ys < n) & (xs >= 0) & (xs < limit_cols)
        img[ys[keep], xs[keep]] = 0.5 * img[ys[keep], xs[keep]] + 0.5 * color


def _draw_stain(rng, cfg: EnvConfig, cls: int, tissue_cols: int):
    n = cfg.tile_size
    # class 0 still has tumour nests, just without membrane stain
    f0, f1, i0, i1 = cfg._inner(cls if cls > 0 else 1)
    frac = rng.uniform(f0, f1)
    level = rng.uniform(i0, i1)
    target = int(round(frac * n * n))
    # stronger staining comes with thicker, more complete membranes
    membrane, cells = _paint_cells(rng, cfg, target, tissue_cols, n, width_scale=1.0 + level)
    stain = np.zeros((n, n))
    if cls > 0:
        jitter = rng.uniform(-cfg.intensity_jitter, cfg.intensity_jitter, size=int(membrane.sum()))
        stain[membrane] = np.clip(level + jitter, i0, i1)
    return quantize(stain), cells


def gen_stain(cfg: EnvConfig, cls: int, seed: int, tissue_fraction: float = 1.0) -> np.ndarray:
    """The stain channel ``gen_tile`` would produce, without rendering the RGB image."""
    _check_tile_args(cfg, cls, tissue_fraction)
    return _draw_stain(tile_rng(cfg, cls, seed), cfg, cls, int(round(tissue_fraction * cfg.tile_size)))[0]


def _check_tile_args(cfg: EnvConfig, cls: int, tissue_fraction: float) -> None:
    if not 0 <= cls < cfg.classes:
        raise ValueError(f"class {cls} outside 0..{cfg.classes - 1}")
    if not 0.25 <= tissue_fraction <= 1.0:
        raise ValueError("tissue_fraction must lie in [0.25, 1]")


def gen_tile(cfg: EnvConfig, cls: int, seed: int, tissue_fraction: float = 1.0) -> Tile:
    """Render one labelled tile; a pure function of ``(cfg, cls, seed, tissue_fraction)``."""
    _check_tile_args(cfg, cls, tissue_fraction)
    rng = tile_rng(cfg, cls, seed)
    n = cfg.tile_size
    tissue_cols = int(round(tissue_fraction * n))
    stain, cells = _draw_stain(rng, cfg, cls, tissue_cols)

    img = np.empty((n, n, 3))
    img[:, :tissue_cols] = TISSUE_RGB
    img[:, tissue_cols:] = GLASS_RGB
    img += rng.normal(0.0, cfg.noise_std, size=img.shape)
    nuclei = [(cy, cx) for cy, cx, _ in cells]
    radii = [max(1.5, 0.45 * r) for _, _, r in cells]
    stray = int(cfg.nuclei_per_tile * tissue_fraction)
    nuclei += list(zip(rng.uniform(0, n, stray), rng.uniform(0, tissue_cols, stray)))
    radii += list(rng.uniform(1.5, 2.5, stray))
    _stamp_disks(img, nuclei, radii, HEMATOXYLIN_RGB, tissue_cols)
    img *= 1.0 - stain[..., None] * (1.0 - DAB_RGB)
    pixels = quantize(img)

    tile = Tile(pixels=pixels, label=int(cls), stain=stain, relevance=stain > 0, seed=int(seed))
    return tile


class LabelOracleError(RuntimeError):
    pass


def measure_stain(tile: Tile) -> tuple[float, float]:
    """(stained area fraction, mean intensity over stained pixels)."""
    mask = tile.stain > 0
    frac = float(mask.mean())
    level = float(tile.stain[mask].mean()) if mask.any() else 0.0
    return frac, level


def label_oracle(tile: Tile, cfg: EnvConfig | None = None) -> int:
    """Recover the score from the stain measurements alone."""
    cfg = cfg or EnvConfig()
    frac, level = measure_stain(tile)
    if frac == 0.0:
        return 0
    hits = [
        c
        for c in range(1, cfg.classes)
        if cfg.stain_fraction_ranges[c][0] <= frac <= cfg.stain_fraction_ranges[c][1]
        and cfg.stain_intensity_ranges[c][0] <= level <= cfg.stain_intensity_ranges[c][1]
    ]
    if len(hits) != 1:
        raise LabelOracleError(f"measurement (fraction={frac:.4f}, intensity={level:.4f}) matches classes {hits}")
    return hits[0]


def derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def gen_slide(cfg: EnvConfig, cls: int, rows: int, cols: int, seed: int,
              minority_fraction: float | None = None) -> SyntheticSlide:
    if rows < 1 or cols < 1:
        raise ValueError("slide needs at least one row and one column")
    mf = cfg.minority_fraction if minority_fraction is None else minority_fraction
    if not 0.0 <= mf < 0.5:
        raise ValueError("minority fraction must lie in [0, 0.5)")
    if not 0 <= cls < cfg.classes:
        raise ValueError(f"class {cls} outside 0..{cfg.classes - 1}")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7919, cls, seed]))
    n = rows * cols
    labels = np.full(n, cls)
    n_minor = int(round(n * mf))
    neighbours = [c for c in (cls - 1, cls + 1) if 0 <= c < cfg.classes]
    minor_idx = rng.permutation(n)[:n_minor]
    labels[minor_idx] = rng.choice(neighbours, size=n_minor)
    tissue = rng.uniform(*cfg.slide_tissue_range, size=n)
    tissue = np.round(tissue * cfg.tile_size) / cfg.tile_size
    tiles = []
    for r in range(rows):
        row = []
        for c in range(cols):
            i = r * cols + c
            row.append(gen_tile(cfg, int(labels[i]), derive_seed(cfg.seed, seed, r, c), float(tissue[i])))
        tiles.append(row)
    return SyntheticSlide(tiles=tiles, slide_label=int(cls), tissue_fraction=tissue.reshape(rows, cols), seed=seed)


# -- on-disk datasets -----------------------------------------------------------


@dataclass
class DatasetEntry:
    path: str
    label: int
    seed: int
    split: str = "train"


@dataclass
class Dataset:
    root: Path
    env: EnvConfig
    entries: list = field(default_factory=list)

    def load(self, entry: DatasetEntry) -> Tile:
        return read_raster(self.root / entry.path)


def write_dataset(root: Path | str, cfg: EnvConfig, n_per_class: int, n_val_per_class: int = 0,
                  classes: tuple | None = None) -> Path:
    """Write ``<root>/<class>/<seed>.img`` tiles plus ``manifest.json``."""
    root = Path(root)
    entries = []
    for cls in classes if classes is not None else range(cfg.classes):
        (root / str(cls)).mkdir(parents=True, exist_ok=True)
        for seed in range(n_per_class + n_val_per_class):
            tile = gen_tile(cfg, cls, seed)
            rel = f"{cls}/{seed}.img"
            write_raster(root / rel, tile)
            split = "train" if seed < n_per_class else "val"
            entries.append({"path": rel, "label": cls, "seed": seed, "split": split})
    manifest = {"env": cfg.to_dict(), "tiles": entries,
                "has_split": n_val_per_class > 0}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_dataset(root: Path | str) -> Dataset:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
        env = EnvConfig.from_dict(manifest["env"])
        entries = [DatasetEntry(**e) for e in manifest["tiles"]]
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"invalid dataset manifest under {root}: {exc}") from exc
    if not manifest.get("has_split", False):
        for e in entries:
            e.split = "unsplit"
    return Dataset(root=root, env=env, entries=entries)


def write_slide(root: Path | str, slide: SyntheticSlide, cfg: EnvConfig) -> Path:
    root = Path(root)
    (root / "tiles").mkdir(parents=True, exist_ok=True)
    records = []
    for r, row in enumerate(slide.tiles):
        for c, tile in enumerate(row):
            rel = f"tiles/r{r}_c{c}.img"
            write_raster(root / rel, tile)
            records.append({"path": rel, "row": r, "col": c, "label": tile.label, "seed": tile.seed,
                            "tissue_fraction": float(slide.tissue_fraction[r, c])})
    meta = {"env": cfg.to_dict(), "rows": slide.rows, "cols": slide.cols,
            "slide_label": slide.slide_label, "seed": slide.seed, "tiles": records}
    path = root / "slide.json"
    path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def read_slide(root: Path | str) -> tuple[SyntheticSlide, dict]:
    root = Path(root)
    meta = json.loads((root / "slide.json").read_text())
    rows, cols = meta["rows"], meta["cols"]
    grid = [[None] * cols for _ in range(rows)]
    tissue = np.zeros((rows, cols))
    for rec in meta["tiles"]:
        grid[rec["row"]][rec["col"]] = read_raster(root / rec["path"])
        tissue[rec["row"], rec["col"]] = rec["tissue_fraction"]
    return SyntheticSlide(tiles=grid, slide_label=meta["slide_label"], tissue_fraction=tissue,
                          seed=meta.get("seed", 0)), meta
