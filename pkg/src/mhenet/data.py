"""Dataset handling: 8-bit image I/O, the directory layout, geometric
augmentation, and a synthetic-camouflage generator for desk-scale training.

Layout convention: a dataset root holds ``Imgs/`` (RGB), ``Depths/``
(grayscale), and ``GT/`` (binary masks) with shared basenames, plus a
``manifest.txt`` listing one tab-separated (rgb, depth, gt) triple per line,
paths relative to the root.

The synthetic generator hides a low-contrast textured blob in a textured
background: the RGB contrast between object and background stays at or below
0.1 in mean intensity while the depth offset stays at or above 0.3, so depth
carries the discriminative cue.  Contracts are asserted on the quantized
8-bit data that actually lands on disk.
"""

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import backend

RGB_CONTRAST_MAX = 0.1
DEPTH_CONTRAST_MIN = 0.3
FG_FRACTION_RANGE = (0.05, 0.4)


# -- image I/O -------------------------------------------------------------------

def read_image(path):
    """8-bit PNG/PGM/PPM -> uint8 array, (H,W) grayscale or (H,W,3) color."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if arr.size == 0:
        raise ValueError(f"{path}: empty image")
    return arr


def read_gray(path):
    arr = read_image(path)
    if arr.ndim == 3:
        arr = np.asarray(Image.fromarray(arr).convert("L"), dtype=np.uint8)
    return arr.astype(np.float64)


def write_image(path, arr):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError(f"write_image expects uint8, got {arr.dtype}")
    Image.fromarray(arr).save(path)


# -- resizing helpers (plain numpy, non-differentiable path) -----------------------

def resize_bilinear(arr, out_h, out_w):
    """(H,W) or (C,H,W) float array -> bilinear resample."""
    x = arr[None, None] if arr.ndim == 2 else arr[None]
    y = backend.bilinear_forward(np.ascontiguousarray(x, dtype=np.float64), out_h, out_w)
    return y[0, 0] if arr.ndim == 2 else y[0]


def resize_nearest(arr, out_h, out_w):
    h, w = arr.shape
    rows = np.minimum((np.arange(out_h) + 0.5) * (h / out_h), h - 1).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * (w / out_w), w - 1).astype(np.int64)
    return arr[rows[:, None], cols[None, :]]


# -- samples and manifests ----------------------------------------------------------

@dataclass
class Sample:
    rgb: np.ndarray           # (3,H,W) in [0,1]
    depth: np.ndarray         # (1,H,W) in [0,1]
    gt: np.ndarray            # (1,H,W) strictly binary
    id: str

    def validate(self):
        if not (self.rgb.shape[1:] == self.depth.shape[1:] == self.gt.shape[1:]):
            raise ValueError(f"sample {self.id}: map sizes differ")
        if not np.all((self.gt == 0.0) | (self.gt == 1.0)):
            raise ValueError(f"sample {self.id}: ground truth is not binary")
        return self


@dataclass
class ManifestEntry:
    rgb: str
    depth: str
    gt: str
    id: str


@dataclass
class DatasetManifest:
    root: str
    split: str
    entries: list

    def __len__(self):
        return len(self.entries)


def scan_dataset(root, split="train"):
    """Build a manifest from the Imgs/Depths/GT layout; every basename must
    appear in all three directories."""
    imgs = sorted(os.listdir(os.path.join(root, "Imgs")))
    entries = []
    for name in imgs:
        stem = os.path.splitext(name)[0]
        triple = (os.path.join("Imgs", name),
                  os.path.join("Depths", name),
                  os.path.join("GT", name))
        for rel in triple:
            if not os.path.exists(os.path.join(root, rel)):
                raise FileNotFoundError(f"dataset {root}: missing {rel}")
        entries.append(ManifestEntry(*triple, id=stem))
    return DatasetManifest(root, split, entries)


def write_manifest(manifest, path=None):
    path = path or os.path.join(manifest.root, "manifest.txt")
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(f"{e.rgb}\t{e.depth}\t{e.gt}\n")
    return path


def read_manifest(root, path=None, split="train"):
    path = path or os.path.join(root, "manifest.txt")
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rgb, depth, gt = line.split("\t")
            entries.append(ManifestEntry(rgb, depth, gt,
                                         os.path.splitext(os.path.basename(rgb))[0]))
    return DatasetManifest(root, split, entries)


def load_sample(root, entry, target_size=None):
    """Decode one manifest entry; optionally resize to (H,W).

    RGB and depth resize bilinearly; the mask resizes nearest-neighbor and is
    re-binarized at 0.5, so it stays strictly binary.
    """
    rgb8 = read_image(os.path.join(root, entry.rgb))
    if rgb8.ndim == 2:
        rgb8 = np.repeat(rgb8[:, :, None], 3, axis=2)
    depth8 = read_gray(os.path.join(root, entry.depth))
    gt8 = read_gray(os.path.join(root, entry.gt))
    rgb = rgb8.astype(np.float64).transpose(2, 0, 1) / 255.0
    depth = depth8 / 255.0
    gt = (gt8 / 255.0 > 0.5).astype(np.float64)
    if target_size is not None:
        th, tw = target_size
        rgb = resize_bilinear(rgb, th, tw)
        depth = resize_bilinear(depth, th, tw)
        gt = (resize_nearest(gt, th, tw) > 0.5).astype(np.float64)
    rgb = np.clip(rgb, 0.0, 1.0)
    depth = np.clip(depth, 0.0, 1.0)
    return Sample(rgb, depth[None], gt[None], entry.id).validate()


# -- augmentation ---------------------------------------------------------------------

ROTATION_MAX_DEG = 15.0
CROP_SCALE_RANGE = (0.75, 1.0)


def _affine_sample(arr, inv_mat, center, nearest):
    """Sample ``arr`` (H,W) at inverse-mapped coordinates, edge-clamped."""
    h, w = arr.shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dr, dc = rr - center[0], cc - center[1]
    sr = inv_mat[0, 0] * dr + inv_mat[0, 1] * dc + center[0]
    sc = inv_mat[1, 0] * dr + inv_mat[1, 1] * dc + center[1]
    if nearest:
        ri = np.clip(np.round(sr).astype(np.int64), 0, h - 1)
        ci = np.clip(np.round(sc).astype(np.int64), 0, w - 1)
        return arr[ri, ci]
    r0 = np.clip(np.floor(sr).astype(np.int64), 0, h - 2)
    c0 = np.clip(np.floor(sc).astype(np.int64), 0, w - 2)
    fr = np.clip(sr - r0, 0.0, 1.0)
    fc = np.clip(sc - c0, 0.0, 1.0)
    top = arr[r0, c0] * (1 - fc) + arr[r0, c0 + 1] * fc
    bot = arr[r0 + 1, c0] * (1 - fc) + arr[r0 + 1, c0 + 1] * fc
    return top * (1 - fr) + bot * fr


def _rotate_maps(maps, angle_deg, nearest_flags):
    th = np.deg2rad(angle_deg)
    inv = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
    h, w = maps[0].shape[-2:]
    center = ((h - 1) / 2.0, (w - 1) / 2.0)
    out = []
    for m, nearest in zip(maps, nearest_flags):
        out.append(np.stack([_affine_sample(ch, inv, center, nearest) for ch in m]))
    return out


def augment(sample, rng):
    """Random horizontal flip, rotation within +-15 degrees, and a random
    crop rescaled back to full size; the same geometry hits all three maps
    and the mask stays binary (nearest resampling plus re-binarization)."""
    rgb, depth, gt = sample.rgb, sample.depth, sample.gt
    if rng.random() < 0.5:
        rgb, depth, gt = rgb[:, :, ::-1], depth[:, :, ::-1], gt[:, :, ::-1]
    angle = rng.uniform(-ROTATION_MAX_DEG, ROTATION_MAX_DEG)
    rgb, depth, gt = _rotate_maps([rgb, depth, gt], angle, [False, False, True])
    h, w = gt.shape[-2:]
    scale = rng.uniform(*CROP_SCALE_RANGE)
    ch, cw = max(int(round(scale * h)), 8), max(int(round(scale * w)), 8)
    top = rng.integers(0, h - ch + 1)
    left = rng.integers(0, w - cw + 1)
    rgb = resize_bilinear(np.ascontiguousarray(rgb[:, top:top + ch, left:left + cw]), h, w)
    depth = resize_bilinear(np.ascontiguousarray(depth[:, top:top + ch, left:left + cw]), h, w)
    gt = resize_nearest(np.ascontiguousarray(gt[0, top:top + ch, left:left + cw]), h, w)[None]
    rgb = np.clip(rgb, 0.0, 1.0)
    depth = np.clip(depth, 0.0, 1.0)
    gt = (gt > 0.5).astype(np.float64)
    return Sample(rgb, depth, gt, sample.id).validate()


def collate(samples, dtype=np.float64):
    rgb = np.stack([s.rgb for s in samples]).astype(dtype)
    depth = np.stack([s.depth for s in samples]).astype(dtype)
    gt = np.stack([s.gt for s in samples]).astype(dtype)
    return rgb, depth, gt


# -- synthetic camouflage ---------------------------------------------------------------

def _band_noise(rng, size, scales=(4, 8, 16)):
    """Band-limited texture: upsampled white noise octaves, normalized to a
    mid-gray band."""
    acc = np.zeros((size, size))
    for s in scales:
        coarse = rng.standard_normal((max(size // s, 2), max(size // s, 2)))
        acc += resize_bilinear(coarse, size, size) / len(scales)
    acc = (acc - acc.mean()) / (acc.std() + 1e-9)
    return np.clip(0.5 + 0.12 * acc, 0.02, 0.98)


def _blob_mask(rng, size):
    """Wobbly ellipse mask with foreground fraction inside the contract."""
    lo, hi = FG_FRACTION_RANGE
    for _ in range(64):
        cy = size * (0.5 + rng.uniform(-0.12, 0.12))
        cx = size * (0.5 + rng.uniform(-0.12, 0.12))
        r0 = size * rng.uniform(0.18, 0.30)
        amp = rng.uniform(0.0, 0.15, size=3)
        phase = rng.uniform(0.0, 2 * np.pi, size=3)
        stretch = rng.uniform(0.8, 1.25)
        rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        dy, dx = (rr - cy) * stretch, (cc - cx) / stretch
        theta = np.arctan2(dy, dx)
        radius = r0 * (1.0 + sum(a * np.cos((k + 2) * theta + p)
                                 for k, (a, p) in enumerate(zip(amp, phase))))
        mask = (np.hypot(dy, dx) <= radius)
        frac = mask.mean()
        if lo + 0.01 <= frac <= hi - 0.01:
            return mask
    raise RuntimeError("could not draw a blob inside the area contract")


def make_synthetic_sample(rng, size, sample_id):
    """One camouflage scene as quantized uint8 maps (rgb, depth, gt)."""
    texture = _band_noise(rng, size)
    mask = _blob_mask(rng, size)
    shift = rng.choice([-1.0, 1.0]) * rng.uniform(0.04, 0.07)
    roll = rng.integers(size // 8, size // 2, size=2)
    fg_texture = np.roll(texture, tuple(roll), axis=(0, 1))
    # recenter the object texture on the background mean so the only
    # intensity cue is the controlled (sub-contract) shift
    bg_mean = texture[~mask].mean()
    fg = (fg_texture[mask] - fg_texture[mask].mean()) * 0.9 + bg_mean + shift
    base = texture.copy()
    base[mask] = np.clip(fg, 0.01, 0.99)
    rgb = np.stack([np.clip(base + tint, 0.0, 1.0)
                    for tint in rng.uniform(-0.03, 0.03, size=3)])

    plane = rng.uniform(0.65, 0.8)
    gy, gx = rng.uniform(-0.08, 0.08, size=2)
    rr, cc = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    depth = plane + gy * rr + gx * cc + 0.015 * rng.standard_normal((size, size))
    depth = depth - rng.uniform(0.35, 0.42) * mask
    depth = np.clip(depth, 0.0, 1.0)

    rgb8 = np.round(rgb * 255.0).astype(np.uint8)
    depth8 = np.round(depth * 255.0).astype(np.uint8)
    gt8 = (mask * 255).astype(np.uint8)

    # contracts measured on what lands on disk
    lum = rgb8.astype(np.float64).mean(axis=0) / 255.0
    d = depth8.astype(np.float64) / 255.0
    rgb_contrast = abs(lum[mask].mean() - lum[~mask].mean())
    depth_contrast = abs(d[mask].mean() - d[~mask].mean())
    frac = mask.mean()
    if rgb_contrast > RGB_CONTRAST_MAX:
        raise AssertionError(f"{sample_id}: rgb contrast {rgb_contrast:.3f} > {RGB_CONTRAST_MAX}")
    if depth_contrast < DEPTH_CONTRAST_MIN:
        raise AssertionError(f"{sample_id}: depth contrast {depth_contrast:.3f} < {DEPTH_CONTRAST_MIN}")
    if not (FG_FRACTION_RANGE[0] <= frac <= FG_FRACTION_RANGE[1]):
        raise AssertionError(f"{sample_id}: foreground fraction {frac:.3f} out of range")
    return rgb8.transpose(1, 2, 0), depth8, gt8


def synth_generate(count, size, seed, root, split="train"):
    """Write ``count`` synthetic samples under ``root`` and return the manifest."""
    if size % 32:
        raise ValueError(f"size {size} must be divisible by 32")
    for sub in ("Imgs", "Depths", "GT"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    rng = np.random.default_rng(seed)
    for idx in range(count):
        sid = f"synth_{idx:04d}"
        rgb8, depth8, gt8 = make_synthetic_sample(rng, size, sid)
        write_image(os.path.join(root, "Imgs", sid + ".png"), rgb8)
        write_image(os.path.join(root, "Depths", sid + ".png"), depth8)
        write_image(os.path.join(root, "GT", sid + ".png"), gt8)
    manifest = scan_dataset(root, split)
    write_manifest(manifest)
    return manifest
