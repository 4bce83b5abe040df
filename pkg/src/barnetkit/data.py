"""Synthetic instrument scenes with exact ground-truth masks.

Each scene drops one to three elongated convex shapes ("instruments",
one archetype and base color per class) on a textured background,
then optionally stresses the image with a saturating specular
highlight and/or a darkening shadow polygon.  The mask is fixed
before lighting, so illumination never changes a label.  Object size
is drawn from a configurable range, exercising scale robustness.

Everything is a pure function of (config, sample index): regenerating
a dataset reproduces it byte for byte.
"""

import colorsys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .tensor import Tensor

__all__ = [
    "BRIGHTNESS_CEILING",
    "SceneConfig",
    "SegSample",
    "AugmentParams",
    "generate",
    "augment",
    "apply_augment",
    "save_sample",
    "load_sample",
    "write_mask",
    "make_dataset",
    "load_dataset",
    "class_color",
]

# unlit scenes never exceed this value in any channel, so a saturated
# highlight is unambiguous evidence of the specular effect
BRIGHTNESS_CEILING = 0.85


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    scale_range: tuple = (0.05, 0.5)
    specular_prob: float = 0.7
    specular_intensity: float = 0.9
    shadow_prob: float = 0.5
    shadow_darkness: float = 0.5
    noise: float = 0.03
    color_overlap: float = 0.0
    confusable: float = 0.0
    tint: float = 0.0
    scale_contrast: float = 0.0
    fg_contrast: float = 1.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"scale_range must sit inside (0,1], got {self.scale_range}")
        for name in ("specular_prob", "shadow_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0,1], got {p}")
        if not 0.0 <= self.tint <= 1.0:
            raise ConfigError(f"tint must lie in [0,1], got {self.tint}")
        if not 0.0 <= self.confusable <= 1.0:
            raise ConfigError(
                f"confusable must lie in [0,1], got {self.confusable}")
        if not 0.0 <= self.scale_contrast < 1.0:
            raise ConfigError(
                f"scale_contrast must lie in [0,1), got {self.scale_contrast}")
        if not 0.0 < self.fg_contrast <= 1.0:
            raise ConfigError(
                f"fg_contrast must lie in (0,1], got {self.fg_contrast}")
        if self.num_classes < 2:
            raise ConfigError(f"need >= 2 classes, got {self.num_classes}")
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"scene too small: {self.height}x{self.width}")


@dataclass
class SegSample:
    image: Tensor
    mask: np.ndarray
    meta: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# rasterization

_SHAPES = [
    ("wedge", [(-1.2, -0.24), (1.2, 0.0), (-1.2, 0.24)]),
    ("bar", [(-1.3, -0.2), (1.3, -0.2), (1.3, 0.2), (-1.3, 0.2)]),
    ("ellipse", (1.2, 0.4)),
    ("rhombus", [(-1.2, 0.0), (0.0, -0.42), (1.2, 0.0), (0.0, 0.42)]),
    ("trapezoid", [(-1.1, -0.38), (1.1, -0.2), (1.1, 0.2), (-1.1, 0.38)]),
    ("pentagon", [(-1.2, 0.0), (-0.4, -0.48), (0.9, -0.32),
                  (0.9, 0.32), (-0.4, 0.48)]),
    ("sliver", [(-1.4, -0.11), (1.4, -0.11), (1.4, 0.11), (-1.4, 0.11)]),
    ("hexagon", [(-1.2, 0.0), (-0.6, -0.42), (0.6, -0.42),
                 (1.2, 0.0), (0.6, 0.42), (-0.6, 0.42)]),
    ("lens", (1.0, 0.55)),
]


def _pixel_grid(h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    return xs + 0.5, ys + 0.5


def polygon_mask(vertices, h, w):
    """Half-plane inclusion test for a convex polygon (CCW or CW)."""
    xs, ys = _pixel_grid(h, w)
    pts = np.asarray(vertices, dtype=float)
    # orient consistently via the signed area
    area = 0.0
    for i in range(len(pts)):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % len(pts)]
        area += x0 * y1 - x1 * y0
    if area < 0:
        pts = pts[::-1]
    inside = np.ones((h, w), dtype=bool)
    for i in range(len(pts)):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % len(pts)]
        inside &= (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0) >= 0.0
    return inside


def ellipse_mask(cx, cy, rx, ry, angle, h, w):
    xs, ys = _pixel_grid(h, w)
    dx, dy = xs - cx, ys - cy
    c, s = np.cos(angle), np.sin(angle)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _shape_region(kind, spec, scale_px, cx, cy, angle, h, w):
    half = scale_px / 2.0
    if isinstance(spec, tuple):
        rx, ry = spec
        norm = half / rx
        return ellipse_mask(cx, cy, rx * norm, ry * norm, angle, h, w)
    pts = np.asarray(spec, dtype=float)
    pts = pts * (half / np.abs(pts).max())
    c, s = np.cos(angle), np.sin(angle)
    rot = pts @ np.array([[c, -s], [s, c]]).T
    return polygon_mask(rot + [cx, cy], h, w)


def _base_color(class_id):
    hue = (0.07 + 0.41 * class_id) % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, 0.6, 0.62))


def class_color(class_id, num_classes, overlap=0.0, confusable=0.0):
    """Deterministic base color per class, optionally pulled together.

    overlap in [0,1] blends every class color toward their common
    mean, removing color as a discriminative cue and forcing the
    model onto shape and context.  confusable in [0,1] blends only
    classes 1 and 2 toward each other, leaving a small residual color
    difference between that pair while other classes stay distinct.
    """
    base = _base_color(class_id)
    if confusable > 0.0 and class_id in (1, 2) and num_classes > 2:
        mid = (_base_color(1) + _base_color(2)) / 2.0
        base = (1.0 - confusable) * base + confusable * mid
    if overlap > 0.0:
        mean = np.zeros(3)
        for cid in range(1, num_classes):
            mean += _base_color(cid)
        mean /= max(num_classes - 1, 1)
        base = (1.0 - overlap) * base + overlap * mean
    return np.clip(base, 0.05, BRIGHTNESS_CEILING)


# --------------------------------------------------------------------------
# scene synthesis

def generate(cfg, index):
    """Render scene number `index` of the dataset described by cfg."""
    rng = np.random.default_rng([cfg.seed, index])
    h, w = cfg.height, cfg.width

    base = np.array([0.30, 0.36, 0.33]) + rng.uniform(-0.04, 0.04, size=3)
    img = np.broadcast_to(base[:, None, None], (3, h, w)).copy()
    ramp = np.linspace(-0.06, 0.06, h)[None, :, None]
    if rng.random() < 0.5:
        ramp = np.linspace(-0.06, 0.06, w)[None, None, :]
    img += ramp
    img = np.clip(img, 0.0, BRIGHTNESS_CEILING)

    scale_lo, scale_hi = cfg.scale_range
    if cfg.scale_contrast > 0.0:
        # each scene commits to one end of the scale range, so its objects
        # are uniformly small or uniformly large; pooled over a dataset the
        # full range is still covered, but size becomes a per-image trait
        span = (1.0 - cfg.scale_contrast) * (scale_hi - scale_lo)
        if rng.random() < 0.5:
            scale_hi = scale_lo + span
        else:
            scale_lo = scale_hi - span

    mask = np.zeros((h, w), dtype=np.uint8)
    objects = []
    for _ in range(int(rng.integers(1, 4))):
        placed = False
        for _attempt in range(8):
            cls = int(rng.integers(1, cfg.num_classes))
            frac = float(rng.uniform(scale_lo, scale_hi))
            scale_px = frac * min(h, w)
            cx = float(rng.uniform(0.15, 0.85) * w)
            cy = float(rng.uniform(0.15, 0.85) * h)
            angle = float(rng.uniform(0.0, 2.0 * np.pi))
            kind, spec = _SHAPES[(cls - 1) % len(_SHAPES)]
            region = _shape_region(kind, spec, scale_px, cx, cy, angle, h, w)
            if region.sum() >= 4:
                placed = True
                break
        if not placed:
            warnings.warn(f"skipped a degenerate object in sample {index}")
            continue
        color = class_color(cls, cfg.num_classes, cfg.color_overlap,
                            cfg.confusable)
        if cfg.fg_contrast < 1.0:
            # camouflage: pull the instrument toward the backdrop color so
            # per-pixel evidence weakens while object-level structure stays
            color = base + cfg.fg_contrast * (color - base)
        color = color + rng.uniform(-0.05, 0.05, size=3)
        tint = color[:, None] + 0.02 * rng.standard_normal((3, int(region.sum())))
        img[:, region] = np.clip(tint, 0.0, BRIGHTNESS_CEILING)
        mask[region] = cls
        objects.append({"class": cls, "scale": frac, "cx": cx, "cy": cy,
                        "angle": angle, "shape": kind})

    # the labels are final here; noise and lighting only perturb the image
    if cfg.noise > 0.0:
        # sensor noise lands on instruments and backdrop alike, so no
        # single pixel is trustworthy on its own
        img += cfg.noise * rng.standard_normal((3, h, w))
        img = np.clip(img, 0.0, BRIGHTNESS_CEILING)

    if cfg.tint > 0.0:
        # a global illumination cast shared by every surface; apparent
        # colors shift per image while scene statistics reveal the shift
        cast = 1.0 + cfg.tint * rng.uniform(-1.0, 1.0, size=3)
        img = np.clip(img * cast[:, None, None], 0.0, BRIGHTNESS_CEILING)

    speculars = []
    if objects and rng.random() < cfg.specular_prob:
        target = objects[int(rng.integers(len(objects)))]
        size = target["scale"] * min(h, w)
        rx = float(rng.uniform(0.25, 0.6) * size / 2 + 1.5)
        ry = float(rng.uniform(0.5, 1.0) * rx)
        ang = float(rng.uniform(0.0, np.pi))
        cx = target["cx"] + float(rng.uniform(-0.3, 0.3) * size)
        cy = target["cy"] + float(rng.uniform(-0.3, 0.3) * size)
        xs, ys = _pixel_grid(h, w)
        c, s = np.cos(ang), np.sin(ang)
        u = (c * (xs - cx) + s * (ys - cy)) / rx
        v = (-s * (xs - cx) + c * (ys - cy)) / ry
        glow = cfg.specular_intensity * np.exp(-(u * u + v * v))
        img = img + glow[None] * (1.0 - img)
        speculars.append({"cx": cx, "cy": cy, "rx": rx, "ry": ry, "angle": ang})

    shadows = []
    if rng.random() < cfg.shadow_prob:
        sw = rng.uniform(0.3, 0.7) * min(h, w)
        cx = float(rng.uniform(0.2, 0.8) * w)
        cy = float(rng.uniform(0.2, 0.8) * h)
        ang = float(rng.uniform(0.0, 2.0 * np.pi))
        quad = np.array([(-1.0, -0.7), (1.0, -1.0), (0.9, 0.8), (-0.8, 1.0)])
        c, s = np.cos(ang), np.sin(ang)
        quad = quad * sw / 2 @ np.array([[c, -s], [s, c]]).T + [cx, cy]
        region = polygon_mask(quad, h, w)
        img[:, region] *= 1.0 - cfg.shadow_darkness
        shadows.append({"points": quad.tolist()})

    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    meta = {"seed": index, "objects": objects,
            "speculars": speculars, "shadows": shadows}
    return SegSample(image=Tensor(img), mask=mask, meta=meta)


# --------------------------------------------------------------------------
# augmentation

@dataclass
class AugmentParams:
    rot90: int = 0
    angle: float = 0.0
    shift: tuple = (0, 0)
    flip_h: bool = False
    flip_v: bool = False


def augment(sample, rng):
    """Random right-angle + small rotation, shift, and flips."""
    h, w = sample.mask.shape
    params = AugmentParams(
        rot90=int(rng.integers(4)),
        angle=float(rng.uniform(-15.0, 15.0)),
        shift=(int(rng.integers(-(h // 10), h // 10 + 1)),
               int(rng.integers(-(w // 10), w // 10 + 1))),
        flip_h=bool(rng.random() < 0.5),
        flip_v=bool(rng.random() < 0.5),
    )
    return apply_augment(sample, params)


def apply_augment(sample, params):
    """Apply one fixed transform to image and mask identically.

    Neutral parameters return the sample's arrays unchanged.  The
    small-angle rotation and shift resample with nearest neighbor;
    pixels pulled from outside the canvas become background (class 0,
    painted with the scene's median background color).
    """
    img = sample.image.data
    mask = sample.mask
    k = params.rot90 % 4
    if k:
        img = np.rot90(img, k, axes=(1, 2))
        mask = np.rot90(mask, k)
    if params.flip_h:
        img = img[:, :, ::-1]
        mask = mask[:, ::-1]
    if params.flip_v:
        img = img[:, ::-1, :]
        mask = mask[::-1, :]

    dy, dx = params.shift
    if params.angle != 0.0 or dy or dx:
        h, w = mask.shape
        theta = np.deg2rad(params.angle)
        c, s = np.cos(theta), np.sin(theta)
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        ys, xs = np.mgrid[0:h, 0:w]
        # invert: undo the shift, then rotate backwards around center
        ux = xs - dx - cx
        uy = ys - dy - cy
        sx = np.rint(c * ux + s * uy + cx).astype(int)
        sy = np.rint(-s * ux + c * uy + cy).astype(int)
        valid = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
        sxc = np.clip(sx, 0, w - 1)
        syc = np.clip(sy, 0, h - 1)
        background = mask == 0
        if background.any():
            fill = np.median(img[:, background], axis=1)
        else:
            fill = np.full(3, 0.3, dtype=img.dtype)
        new_img = np.broadcast_to(
            fill.astype(img.dtype)[:, None, None], img.shape).copy()
        new_mask = np.zeros_like(mask)
        new_img[:, valid] = img[:, syc[valid], sxc[valid]]
        new_mask[valid] = mask[syc[valid], sxc[valid]]
        img, mask = new_img, new_mask

    img = np.ascontiguousarray(img)
    mask = np.ascontiguousarray(mask)
    return SegSample(image=Tensor(img), mask=mask, meta=dict(sample.meta))


# --------------------------------------------------------------------------
# binary image I/O

def _write_netpbm(path, magic, payload, w, h):
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(payload)


def _read_netpbm(path, magic):
    raw = Path(path).read_bytes()
    if raw[:2] != magic:
        raise ParseError(f"{path}: expected magic {magic.decode()} at byte 0, "
                         f"got {raw[:2]!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated header at byte {start}")
        token = raw[start:pos]
        if not token.isdigit():
            raise ParseError(
                f"{path}: expected integer at byte {start}, got {token!r}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: unsupported max value {maxval}")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    if len(raw) - pos < need:
        raise ParseError(f"{path}: expected {need} payload bytes at byte "
                         f"{pos}, found {len(raw) - pos}")
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos)
    return data, w, h


def save_sample(sample, stem):
    """Write stem.ppm / stem.pgm / stem.txt for one sample."""
    stem = Path(stem)
    img = sample.image.data
    h, w = sample.mask.shape
    quant = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    _write_netpbm(stem.with_suffix(".ppm"), b"P6",
                  np.moveaxis(quant, 0, -1).tobytes(), w, h)
    _write_netpbm(stem.with_suffix(".pgm"), b"P5", sample.mask.tobytes(), w, h)

    meta = sample.meta
    # repr() keeps every float exactly round-trippable
    lines = [f"seed = {meta.get('seed', 0)}"]
    objs = ";".join(
        "%d:%r:%r:%r:%r:%s" % (o["class"], o["scale"], o["cx"],
                               o["cy"], o["angle"], o["shape"])
        for o in meta.get("objects", []))
    lines.append(f"objects = {objs}")
    spots = ";".join(
        "%r:%r:%r:%r:%r" % (s["cx"], s["cy"], s["rx"], s["ry"], s["angle"])
        for s in meta.get("speculars", []))
    lines.append(f"speculars = {spots}")
    shades = ";".join(
        " ".join("%r,%r" % (x, y) for x, y in s["points"])
        for s in meta.get("shadows", []))
    lines.append(f"shadows = {shades}")
    stem.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def write_mask(path, mask):
    """Write a class-id mask as a standalone PGM file."""
    if mask.dtype != np.uint8 or mask.ndim != 2:
        raise DataError(f"write_mask: expected uint8 HxW, got "
                        f"{mask.dtype} {mask.shape}")
    h, w = mask.shape
    _write_netpbm(Path(path), b"P5", mask.tobytes(), w, h)


def _parse_meta(text, path):
    meta = {"objects": [], "speculars": [], "shadows": []}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "seed":
            meta["seed"] = int(value)
        elif key == "objects":
            for item in filter(None, value.split(";")):
                cls, scale, cx, cy, angle, shape = item.split(":")
                meta["objects"].append(
                    {"class": int(cls), "scale": float(scale),
                     "cx": float(cx), "cy": float(cy),
                     "angle": float(angle), "shape": shape})
        elif key == "speculars":
            for item in filter(None, value.split(";")):
                cx, cy, rx, ry, angle = map(float, item.split(":"))
                meta["speculars"].append({"cx": cx, "cy": cy, "rx": rx,
                                          "ry": ry, "angle": angle})
        elif key == "shadows":
            for item in filter(None, value.split(";")):
                pts = [tuple(map(float, p.split(","))) for p in item.split()]
                meta["shadows"].append({"points": pts})
        else:
            raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
    return meta


def load_sample(stem):
    stem = Path(stem)
    pix, w, h = _read_netpbm(stem.with_suffix(".ppm"), b"P6")
    img = np.moveaxis(pix.reshape(h, w, 3), -1, 0).astype(np.float32) / 255.0
    labels, mw, mh = _read_netpbm(stem.with_suffix(".pgm"), b"P5")
    if (mw, mh) != (w, h):
        raise ParseError(f"{stem}: mask size {mw}x{mh} != image {w}x{h}")
    mask = labels.reshape(h, w).copy()
    meta_path = stem.with_suffix(".txt")
    meta = _parse_meta(meta_path.read_text(), meta_path) \
        if meta_path.exists() else {}
    return SegSample(image=Tensor(np.ascontiguousarray(img)), mask=mask,
                     meta=meta)


# --------------------------------------------------------------------------
# dataset assembly

def make_dataset(cfg, n_train, n_test, root, overwrite=False):
    """Generate and save both splits; returns the manifest path.

    Train samples use indices [0, n_train); test samples continue at
    n_train, keeping every per-sample seed distinct.
    """
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not overwrite:
        raise DataError(f"{root} is not empty; pass overwrite to replace it")
    lines = []
    for split, count, base in (("train", n_train, 0),
                               ("test", n_test, n_train)):
        split_dir = root / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            index = base + i
            sample = generate(cfg, index)
            rel = f"{split}/{index:05d}"
            save_sample(sample, root / rel)
            lines.append(f"{split}\t{rel}\t{index}")
    manifest = root / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_dataset(root, split):
    """Load every sample of one split, in manifest order."""
    root = Path(root)
    manifest = root / "manifest.txt"
    if not manifest.exists():
        raise DataError(f"no manifest at {manifest}")
    samples = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{manifest}:{lineno}: expected 3 tab-separated "
                             f"fields, got {len(parts)}")
        which, rel, _seed = parts
        if which == split:
            samples.append(load_sample(root / rel))
    return samples
