"""Synthetic texture bank and mosaic composition.

Five parametric grayscale texture families with per-class brightness
equalization (mean 0.5), mosaics of 2-5 regions with strip or Voronoi
layouts, dataset generation with disjoint train/test seed streams, and
ingestion of directory-per-class real datasets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

FAMILIES = ("grating", "checkerboard", "bandnoise", "blobs", "stripes")
LAYOUTS = ("vstrips", "hstrips", "voronoi")


@dataclass(frozen=True)
class TextureSpec:
    family: str
    class_id: int
    seed: int
    frequency: float = 0.08      # cycles per pixel
    orientation: float = 0.0     # radians
    contrast: float = 0.9        # peak-to-peak amplitude, <= 0.9
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown texture family '{self.family}'")
        if not 0.0 <= self.contrast <= 0.9:
            raise ConfigError("contrast must lie in [0, 0.9]")


@dataclass(frozen=True)
class MosaicSpec:
    extents: tuple[int, int]
    region_count: int
    layout: str
    classes: tuple[int, ...]
    seed: int
    allow_nonpaper: bool = False

    def __post_init__(self):
        if self.region_count < 2 or (self.region_count > 5
                                     and not self.allow_nonpaper):
            raise ConfigError(
                f"region_count must be in 2..5, got {self.region_count}")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown layout '{self.layout}'")
        if len(self.classes) != self.region_count:
            raise ConfigError("one class per region required")
        if len(set(self.classes)) != self.region_count:
            raise DataError("mosaic regions must come from distinct classes")


def _rotated_coords(extents, orientation, rng):
    h, w = extents
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    phase_y, phase_x = rng.uniform(0, max(h, w), size=2)
    u = (xs + phase_x) * np.cos(orientation) + (ys + phase_y) * np.sin(orientation)
    v = -(xs + phase_x) * np.sin(orientation) + (ys + phase_y) * np.cos(orientation)
    return u, v


def gen_texture(spec: TextureSpec, extents: tuple[int, int]) -> np.ndarray:
    """Deterministic grayscale texture in [0, 1] with mean exactly 0.5."""
    h, w = extents
    if h < 32 or w < 32:
        raise ConfigError(f"texture extents must be >= 32, got {extents}")
    rng = np.random.default_rng(spec.seed)
    u, v = _rotated_coords(extents, spec.orientation, rng)
    a = spec.contrast / 2.0

    if spec.family == "grating":
        pattern = a * np.sin(2 * np.pi * spec.frequency * u)
    elif spec.family == "checkerboard":
        cell = max(2.0, 0.5 / max(spec.frequency, 1e-6))
        pattern = a * (np.sign(np.sin(np.pi * u / cell)
                               * np.sin(np.pi * v / cell)))
        pattern = pattern * (1.0 if a else 0.0)
    elif spec.family == "bandnoise":
        noise = rng.standard_normal((h, w))
        fy = np.fft.fftfreq(h)[:, None]
        fx = np.fft.fftfreq(w)[None, :]
        rad = np.sqrt(fy * fy + fx * fx)
        lo, hi = 0.5 * spec.frequency, 2.0 * spec.frequency
        band = (rad >= lo) & (rad <= hi)
        spec2 = np.fft.fft2(noise) * band
        raw = np.real(np.fft.ifft2(spec2))
        scale = 2.5 * raw.std() or 1.0
        pattern = a * np.clip(raw / scale, -1.0, 1.0)
    elif spec.family == "blobs":
        pattern = np.zeros((h, w))
        radius = max(2.0, 0.25 / max(spec.frequency, 1e-6))
        count = max(1, int(h * w * spec.frequency * 0.12))
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        for i in range(count):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            sign = 1.0 if i % 2 == 0 else -1.0
            pattern += sign * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2)
                                     / (2 * radius ** 2))
        peak = np.max(np.abs(pattern)) or 1.0
        pattern = a * pattern / peak
    else:  # stripes: one-dimensional noise stretched along the orientation
        line = rng.standard_normal(2 * max(h, w))
        kernel = np.exp(-0.5 * (np.arange(-10, 11)
                                / max(1.0, 0.25 / max(spec.frequency, 1e-6))) ** 2)
        line = np.convolve(line, kernel / kernel.sum(), mode="same")
        idx = np.clip(u.astype(np.intp) % line.size, 0, line.size - 1)
        raw = line[idx]
        peak = np.max(np.abs(raw)) or 1.0
        pattern = a * raw / peak

    if spec.noise_sigma > 0 and spec.contrast > 0:
        pattern = pattern + rng.normal(0.0, spec.noise_sigma, size=(h, w))
    img = 0.5 + pattern
    img = np.clip(img, 0.02, 0.98)
    img = img - img.mean() + 0.5  # per-class brightness equalization
    return np.clip(img, 0.0, 1.0)


def _partition(spec: MosaicSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.extents
    k = spec.region_count
    regions = np.zeros((h, w), dtype=np.intp)
    if spec.layout == "vstrips":
        edges = np.linspace(0, w, k + 1).astype(int)
        for i in range(k):
            regions[:, edges[i]:edges[i + 1]] = i
    elif spec.layout == "hstrips":
        edges = np.linspace(0, h, k + 1).astype(int)
        for i in range(k):
            regions[edges[i]:edges[i + 1], :] = i
    else:  # voronoi: nearest of k seed points, convex hence connected cells
        pts = np.stack([rng.uniform(0, h, size=k), rng.uniform(0, w, size=k)],
                       axis=1)
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        d = ((ys[None] - pts[:, 0, None, None]) ** 2
             + (xs[None] - pts[:, 1, None, None]) ** 2)
        regions = d.argmin(axis=0)
    return regions


def compose_mosaic(spec: MosaicSpec,
                   bank: dict[int, TextureSpec]) -> tuple[np.ndarray, np.ndarray]:
    """Fill each region of the partition from its class texture; the ground
    truth records the class of every pixel."""
    for c in spec.classes:
        if c not in bank:
            raise DataError(f"class {c} missing from texture bank")
    rng = np.random.default_rng(spec.seed)
    regions = _partition(spec, rng)
    h, w = spec.extents
    image = np.zeros((h, w))
    gt = np.zeros((h, w), dtype=np.uint8)
    seeds = rng.integers(0, 2**63 - 1, size=spec.region_count)
    for i, cls in enumerate(spec.classes):
        base = bank[cls]
        tex = gen_texture(TextureSpec(base.family, base.class_id, int(seeds[i]),
                                      base.frequency, base.orientation,
                                      base.contrast, base.noise_sigma),
                          spec.extents)
        mask = regions == i
        image[mask] = tex[mask]
        gt[mask] = cls
    return image, gt


def default_bank(classes: int, seed: int) -> dict[int, TextureSpec]:
    """Deterministic per-class texture assignments cycling the five families.

    Classes sharing a family get a distinct orientation/frequency so that any
    two classes differ in second-order statistics.
    """
    rng = np.random.default_rng(seed)
    order = ("grating", "grating", "checkerboard", "bandnoise", "blobs",
             "stripes", "grating", "checkerboard", "bandnoise", "blobs")
    bank = {}
    for c in range(classes):
        family = order[c % len(order)]
        rot = (c // len(order)) * np.pi / 5
        if family == "grating":
            ori = (0.0, np.pi / 2, np.pi / 4)[(c % len(order)) % 3] + rot
            freq = 0.10
        elif family == "checkerboard":
            ori, freq = 0.0 + rot, 0.04          # ~12 px cells
        elif family == "bandnoise":
            ori, freq = 0.0, 0.30                # fine isotropic speckle
        elif family == "blobs":
            ori, freq = 0.0, 0.03                # large sparse dots
        else:
            ori, freq = np.pi / 3 + rot, 0.05
        bank[c] = TextureSpec(family, c, int(rng.integers(0, 2**31)),
                              frequency=freq, orientation=float(ori))
    return bank


@dataclass
class DatasetConfig:
    classes: int = 5
    train_per_class: int = 8
    test_mosaics: int = 20
    extents: tuple[int, int] = (96, 96)
    region_min: int = 2
    region_max: int = 3
    layouts: tuple[str, ...] = ("vstrips", "hstrips", "voronoi")
    seed: int = 0
    allow_nonpaper: bool = False

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if not self.allow_nonpaper and not (2 <= self.region_min
                                            <= self.region_max <= 5):
            raise ConfigError(
                "regions per mosaic must lie in 2..5 (pass allow_nonpaper "
                "to override)")
        if self.region_min > self.classes:
            raise ConfigError("region_min exceeds class count")


@dataclass
class DatasetManifest:
    config: DatasetConfig
    bank: dict[int, TextureSpec]
    train: list[dict] = field(default_factory=list)   # path, class, seed, sha
    test: list[dict] = field(default_factory=list)    # path, gt_path, ...


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_dataset(config: DatasetConfig, out_dir) -> DatasetManifest:
    """Emit single-texture train images (uniform labels implied by class),
    test mosaics with ground truth, and a reproducibility manifest.

    Train and test texture instances draw from disjoint spawned seed streams.
    """
    from .labelio import write_image, write_labels  # cycle-free local import

    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    bank = default_bank(config.classes, config.seed)
    root_ss = np.random.SeedSequence(config.seed)
    train_ss, test_ss = root_ss.spawn(2)
    manifest = DatasetManifest(config, bank)

    train_seeds = train_ss.generate_state(config.classes
                                          * config.train_per_class, np.uint64)
    i = 0
    for c in range(config.classes):
        base = bank[c]
        for j in range(config.train_per_class):
            seed = int(train_seeds[i]); i += 1
            tex = gen_texture(
                TextureSpec(base.family, c, seed, base.frequency,
                            base.orientation, base.contrast,
                            base.noise_sigma), config.extents)
            rel = f"train/class{c}_{j:03d}.pgm"
            write_image(out / rel, tex)
            manifest.train.append({"path": rel, "class": c, "seed": seed,
                                   "sha256": _sha256(out / rel)})

    rng = np.random.default_rng(test_ss.generate_state(1)[0])
    test_seeds = test_ss.generate_state(config.test_mosaics + 1,
                                        np.uint64)[1:]
    hi = min(config.region_max, config.classes)
    lo = min(config.region_min, hi)
    for m in range(config.test_mosaics):
        k = int(rng.integers(lo, hi + 1))
        classes = tuple(int(v) for v in
                        rng.choice(config.classes, size=k, replace=False))
        layout = str(rng.choice(config.layouts))
        mspec = MosaicSpec(config.extents, k, layout, classes,
                           int(test_seeds[m]), config.allow_nonpaper)
        image, gt = compose_mosaic(mspec, bank)
        rel = f"test/mosaic_{m:03d}.pgm"
        gt_rel = f"test/mosaic_{m:03d}_gt.pgm"
        write_image(out / rel, image)
        write_labels(out / gt_rel, gt)
        manifest.test.append({"path": rel, "gt_path": gt_rel, "seed":
                              int(test_seeds[m]), "regions": k,
                              "layout": layout,
                              "classes": ",".join(map(str, classes)),
                              "sha256": _sha256(out / rel),
                              "gt_sha256": _sha256(out / gt_rel)})
    write_manifest(manifest, out / "manifest.txt")
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> None:
    cfg = manifest.config
    lines = ["manifest_version=1", "kind=dataset",
             f"seed={cfg.seed}", f"classes={cfg.classes}",
             f"train_per_class={cfg.train_per_class}",
             f"test_mosaics={cfg.test_mosaics}",
             f"extents={cfg.extents[0]}x{cfg.extents[1]}",
             f"regions={cfg.region_min}..{cfg.region_max}",
             f"layouts={','.join(cfg.layouts)}",
             f"allow_nonpaper={int(cfg.allow_nonpaper)}"]
    for c, t in sorted(manifest.bank.items()):
        lines.append(f"texture class={c} family={t.family} seed={t.seed} "
                     f"frequency={t.frequency!r} orientation={t.orientation!r} "
                     f"contrast={t.contrast!r} noise_sigma={t.noise_sigma!r}")
    for e in manifest.train:
        lines.append(f"train path={e['path']} class={e['class']} "
                     f"seed={e['seed']} sha256={e['sha256']}")
    for e in manifest.test:
        lines.append(f"test path={e['path']} gt={e['gt_path']} "
                     f"seed={e['seed']} regions={e['regions']} "
                     f"layout={e['layout']} classes={e['classes']} "
                     f"sha256={e['sha256']} gt_sha256={e['gt_sha256']}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest_config(path) -> DatasetConfig:
    """Recover the generation config from a manifest (for regeneration)."""
    kv = {}
    for line in Path(path).read_text().splitlines():
        if " " not in line and "=" in line:
            k, v = line.split("=", 1)
            kv[k] = v
    if kv.get("kind") != "dataset":
        raise DataError(f"{path}: not a dataset manifest")
    h, w = kv["extents"].split("x")
    lo, hi = kv["regions"].split("..")
    return DatasetConfig(classes=int(kv["classes"]),
                         train_per_class=int(kv["train_per_class"]),
                         test_mosaics=int(kv["test_mosaics"]),
                         extents=(int(h), int(w)),
                         region_min=int(lo), region_max=int(hi),
                         layouts=tuple(kv["layouts"].split(",")),
                         seed=int(kv["seed"]),
                         allow_nonpaper=bool(int(kv["allow_nonpaper"])))


def ingest_real_dataset(root, out_dir, center_crop: int | None = 288,
                        test_fraction: float = 0.0) -> tuple[DatasetManifest | None, list[str]]:
    """Convert a directory-per-class image tree to the internal format.

    Returns (manifest, skipped) where skipped lists unreadable files; the run
    continues past them. An empty root yields an empty manifest with a
    warning entry in skipped.
    """
    from .labelio import read_image, write_image

    root = Path(root)
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir()) \
        if root.exists() else []
    skipped: list[str] = []
    if not class_dirs:
        skipped.append(f"warning: no class directories under {root}")
        Path(out / "manifest.txt").write_text(
            "manifest_version=1\nkind=dataset-empty\n")
        return None, skipped

    cfg = DatasetConfig(classes=max(2, len(class_dirs)), train_per_class=0,
                        test_mosaics=0, allow_nonpaper=True)
    manifest = DatasetManifest(cfg, {})
    for c, d in enumerate(class_dirs):
        for f in sorted(d.iterdir()):
            try:
                img = read_image(f)
            except Exception as exc:  # unreadable file: record and continue
                skipped.append(f"{f}: {exc}")
                continue
            if center_crop:
                h, w = img.shape
                if h < center_crop or w < center_crop:
                    skipped.append(f"{f}: smaller than crop {center_crop}")
                    continue
                y = (h - center_crop) // 2
                x = (w - center_crop) // 2
                img = img[y:y + center_crop, x:x + center_crop]
            rel = f"train/class{c}_{len(manifest.train):04d}.pgm"
            write_image(out / rel, img)
            manifest.train.append({"path": rel, "class": c, "seed": -1,
                                   "sha256": _sha256(out / rel)})
    lines = ["manifest_version=1", "kind=dataset-ingested",
             f"classes={len(class_dirs)}",
             f"class_names={','.join(d.name for d in class_dirs)}"]
    for e in manifest.train:
        lines.append(f"train path={e['path']} class={e['class']} "
                     f"sha256={e['sha256']}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return manifest, skipped
