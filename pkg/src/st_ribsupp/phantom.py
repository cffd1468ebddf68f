"""Synthetic radiograph generator with exact ground truth.

A phantom is a smooth soft-tissue background (constant or seeded
low-frequency value noise) with optional vessel and nodule distractors,
plus additive rib shadows.  Each rib is a circular-arc strip; its shadow
is a function of the exact Euclidean distance to the rib's traced
contour, so intensities are identical along every contour-parallel curve
by construction -- precisely the property the suppression pipeline
assumes -- and the decomposition raw = soft + bone is bit-exact.

The distance used here is a deliberately independent brute force over
contour segments, so it can serve as an oracle for the coordinate
transforms without sharing their code.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .imagery import Image, RibMask, RibMaskSet


class PhantomGeometryError(ValueError):
    """The requested rib layout cannot fit without overlap."""


@dataclass(frozen=True)
class PhantomSpec:
    """Everything needed to rebuild a phantom bit for bit.

    ``background_amplitude`` 0 gives a constant background; otherwise a
    seeded value-noise field smoothed so that content below
    ``background_wavelength`` is suppressed rides on the mean.  Rib
    shadows peak at ``rib_amplitude`` on the strip centerline and vanish
    on the contour.
    """

    width: int = 512
    height: int = 512
    n_ribs: int = 20
    rib_amplitude: float = 6553.5
    rib_width: float = 24.0
    background_mean: float = 20000.0
    background_amplitude: float = 0.0
    background_wavelength: float = 64.0
    vessel_count: int = 0
    vessel_contrast: float = 900.0
    vessel_width: float = 2.0
    nodule_count: int = 0
    nodule_contrast: float = 1500.0
    nodule_diameter: float = 24.0
    max_value: float = 65535.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise ValueError("phantom must be at least 64x64")
        if self.n_ribs < 0:
            raise ValueError("n_ribs must be >= 0")
        if self.rib_width < 6:
            raise ValueError("rib_width must be >= 6 px")
        if self.rib_amplitude < 0:
            raise ValueError("rib_amplitude must be >= 0")

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass(frozen=True, eq=False)
class PhantomCase:
    """raw = gt_soft + gt_bone exactly; gt_bone is zero outside the masks
    and on every mask contour."""

    raw: Image
    gt_soft: Image
    gt_bone: Image
    masks: RibMaskSet
    spec: PhantomSpec


def bone_profile(u):
    """Smooth bump: 0 at the contour (u=0), 1 from the centerline (u>=1)."""
    return 0.5 * (1.0 - np.cos(np.pi * np.minimum(np.asarray(u, float), 1.0)))


def distance_to_contour(points, contour):
    """Exact minimum distance from points to any contour segment.

    Brute force over all segments, independent of the coordinate-transform
    code, so it can cross-check forward_st and compute_depth.
    """
    p = np.asarray(points, dtype=float)
    scalar = p.ndim == 1
    p = np.atleast_2d(p)
    v = np.asarray(contour.vertices, dtype=float)
    w = np.roll(v, -1, axis=0)
    best = np.full(p.shape[0], np.inf)
    for a, b in zip(v, w):
        ab = b - a
        len2 = float(ab @ ab)
        if len2 == 0.0:
            d = np.hypot(p[:, 0] - a[0], p[:, 1] - a[1])
        else:
            u = np.clip(((p - a) @ ab) / len2, 0.0, 1.0)
            foot = a + u[:, None] * ab
            d = np.hypot(p[:, 0] - foot[:, 0], p[:, 1] - foot[:, 1])
        np.minimum(best, d, out=best)
    return float(best[0]) if scalar else best


def _max_ribs(spec, pad=3.0):
    usable = spec.height - 2.0 * 16.0
    per_band = spec.rib_width + 2.0 * pad + 2.0
    rows = int(usable // per_band)
    return max(0, 2 * rows)


def _rib_strip(spec, rng, side_box, band):
    """One circular-arc strip bitmap confined to its layout band.

    The arc radius is drawn above the smallest radius whose strip still
    fits the band, so confinement is guaranteed, not checked after the
    fact.
    """
    xa, xb = side_box
    ya, yb = band
    pad = 3.0
    half = spec.rib_width / 2.0
    chord = (xb - xa) - 2.0 * pad
    band_h = (yb - ya) - 2.0 * pad
    drop = band_h - 2.0 * half  # allowed sag of the inner edge
    if drop <= 1.0 or chord <= spec.rib_width:
        raise PhantomGeometryError("band too small for a rib strip")
    q = chord / 2.0
    u_min = (q * q + drop * drop) / (2.0 * drop)  # sag(u_min) == drop exactly
    radius = (u_min + half) * rng.uniform(1.0, 2.2)
    xc = (xa + xb) / 2.0 + rng.uniform(-3.0, 3.0)
    cy = ya + pad + radius + half  # apex of the outer edge at the band top
    ii, jj = np.meshgrid(
        np.arange(math.floor(xa), math.ceil(xb)),
        np.arange(math.floor(ya), math.ceil(yb)),
    )
    px = ii + 0.5
    py = jj + 0.5
    r = np.hypot(px - xc, py - cy)
    band_mask = (
        (np.abs(r - radius) <= half)
        & (px >= xa + pad)
        & (px <= xb - pad)
        & (py < cy)
    )
    bitmap = np.zeros((spec.height, spec.width), dtype=bool)
    bitmap[jj[band_mask], ii[band_mask]] = True
    return bitmap


def _value_noise(shape, wavelength, amplitude, rng):
    noise = rng.standard_normal(shape)
    smooth = ndimage.gaussian_filter(noise, sigma=wavelength / 2.0, mode="reflect")
    smooth -= smooth.mean()
    peak = np.abs(smooth).max()
    if peak < 1e-12:
        return np.zeros(shape)
    return smooth * (amplitude / peak)


def _bezier(p0, p1, p2, n=256):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2


def _add_vessel(soft, rng, spec):
    h, w = soft.shape
    p0 = np.array([rng.uniform(0, w), rng.uniform(0, h)])
    p2 = np.array([rng.uniform(0, w), rng.uniform(0, h)])
    mid = (p0 + p2) / 2.0
    p1 = mid + rng.uniform(-0.3, 0.3) * (p2 - p0)[::-1] * [1, -1]
    pts = _bezier(p0, p1, p2)
    sigma = spec.vessel_width / 2.0
    reach = int(math.ceil(3 * sigma)) + 1
    # mark pixels near the curve, then add the exact tube profile there
    near = np.zeros((h, w), dtype=bool)
    ix = np.clip(pts[:, 0].astype(int), 0, w - 1)
    iy = np.clip(pts[:, 1].astype(int), 0, h - 1)
    near[iy, ix] = True
    near = ndimage.binary_dilation(near, iterations=reach)
    ys, xs = np.nonzero(near)
    centers = np.stack([xs + 0.5, ys + 0.5], axis=1)
    seg_a = pts[:-1]
    seg_b = pts[1:]
    best = np.full(centers.shape[0], np.inf)
    step = max(1, 2_000_000 // seg_a.shape[0])
    for lo in range(0, centers.shape[0], step):
        c = centers[lo : lo + step]
        ab = seg_b - seg_a
        len2 = np.maximum((ab * ab).sum(1), 1e-12)
        u = np.clip(
            ((c[:, None, :] - seg_a) * ab).sum(-1) / len2, 0.0, 1.0
        )
        foot = seg_a + u[..., None] * ab
        d = np.sqrt(((c[:, None, :] - foot) ** 2).sum(-1)).min(1)
        best[lo : lo + c.shape[0]] = d
    soft[ys, xs] += spec.vessel_contrast * np.exp(-0.5 * (best / sigma) ** 2)


def _add_nodule(soft, rng, spec):
    h, w = soft.shape
    cx = rng.uniform(0.1 * w, 0.9 * w)
    cy = rng.uniform(0.1 * h, 0.9 * h)
    sigma = spec.nodule_diameter / 4.0
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2
    soft += spec.nodule_contrast * np.exp(-0.5 * r2 / sigma**2)


def generate_phantom(spec):
    """Build one phantom case, deterministic in spec.seed."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    margin = 16.0
    gap = 24.0
    rows = (spec.n_ribs + 1) // 2
    if spec.n_ribs > 0:
        band_h = (h - 2 * margin) / rows
        if band_h < spec.rib_width + 8.0:
            raise PhantomGeometryError(
                f"cannot fit {spec.n_ribs} ribs of width {spec.rib_width:g} in "
                f"{w}x{h}; at most {_max_ribs(spec)} fit"
            )
    side_boxes = (
        (margin, w / 2.0 - gap / 2.0),
        (w / 2.0 + gap / 2.0, w - margin),
    )

    masks = []
    for i in range(spec.n_ribs):
        row, side = divmod(i, 2)
        ya = margin + row * (h - 2 * margin) / rows
        band = (ya, ya + (h - 2 * margin) / rows)
        try:
            bitmap = _rib_strip(spec, rng, side_boxes[side], band)
        except PhantomGeometryError:
            raise PhantomGeometryError(
                f"cannot fit {spec.n_ribs} ribs of width {spec.rib_width:g} in "
                f"{w}x{h}; at most {_max_ribs(spec)} fit"
            ) from None
        masks.append(RibMask.from_bitmap(i + 1, bitmap))
    mask_set = RibMaskSet(masks)

    soft = np.full((h, w), float(spec.background_mean))
    if spec.background_amplitude > 0:
        soft += _value_noise(
            (h, w), spec.background_wavelength, spec.background_amplitude, rng
        )
    for _ in range(spec.vessel_count):
        _add_vessel(soft, rng, spec)
    for _ in range(spec.nodule_count):
        _add_nodule(soft, rng, spec)

    bone = np.zeros((h, w))
    half = spec.rib_width / 2.0
    for mask in mask_set:
        ys, xs = np.nonzero(mask.bitmap)
        centers = np.stack([xs + 0.5, ys + 0.5], axis=1)
        d = distance_to_contour(centers, mask.contour)
        bone[ys, xs] = spec.rib_amplitude * bone_profile(d / half)

    raw = soft + bone
    mx = float(spec.max_value)
    return PhantomCase(
        raw=Image(data=raw, max_value=mx),
        gt_soft=Image(data=soft, max_value=mx),
        gt_bone=Image(data=bone, max_value=mx),
        masks=mask_set,
        spec=spec,
    )
