"""The rib-suppression pipeline.

Per rib: sample the image into the (s, t) frame, differentiate along s,
smooth along t with a cyclic Gaussian (anything not constant along the
contour is soft tissue), reintegrate along s to rebuild the bone shadow,
patch the centerline seam, clamp negatives, splat back to image space and
subtract.  The whole ribcage runs sequentially on the running soft-tissue
estimate so overlapping shadows are never subtracted twice, and a KNN
border blend hides the subtraction seam around each contour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imagery import RibMask, RibMaskSet
from .st_space import backproject, sample_field


class SuppressionError(RuntimeError):
    """A pipeline stage failed; the message names the offending rib."""


@dataclass(frozen=True)
class SuppressionParams:
    """Per-rib hyperparameters.

    kappa_t   Gaussian sigma along t, in pixels of arc length
    tau       centerline ratio threshold
    k_center  neighbor count for the centerline average
    s_b       border band depth in pixels
    k_border  neighbor count for the border blend

    ``invert_center_gate`` flips the centerline gate direction; it exists
    for experimentation only and is not part of the tuned space.
    """

    kappa_t: float = 15.0
    tau: float = 0.5
    k_center: int = 5
    s_b: float = 3.0
    k_border: int = 5
    invert_center_gate: bool = False

    def __post_init__(self):
        if self.kappa_t <= 0:
            raise ValueError("kappa_t must be > 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.k_center < 1:
            raise ValueError("k_center must be >= 1")
        if self.s_b < 0:
            raise ValueError("s_b must be >= 0")
        if self.k_border < 1:
            raise ValueError("k_border must be >= 1")

    def key(self):
        return (self.kappa_t, self.tau, self.k_center, self.s_b, self.k_border)


DEFAULT_PARAMS = SuppressionParams()


@dataclass(frozen=True, eq=False)
class BonePatch:
    """Reconstructed bone shadow of one rib, cropped to its support.

    ``x0, y0`` locate the patch in the full raster; ``weights`` is the
    splat weight raster (zero weight means no contribution there).
    """

    label: int
    x0: int
    y0: int
    values: np.ndarray
    weights: np.ndarray

    def add_into(self, raster):
        h, w = self.values.shape
        raster[self.y0 : self.y0 + h, self.x0 : self.x0 + w] += self.values

    @property
    def min_value(self):
        return float(self.values.min()) if self.values.size else 0.0


@dataclass(frozen=True, eq=False)
class SuppressionResult:
    """Output of a whole-ribcage run.

    ``soft`` is the final soft-tissue image (border-blended and clamped to
    [0, max_value]); ``soft_pre_blend`` is the raw subtraction result that
    satisfies input == soft_pre_blend + sum(bones) exactly;
    ``per_rib_fields`` optionally keeps the (sampled, bone) field pair per
    rib for debugging.
    """

    soft: Image
    soft_pre_blend: Image
    bones: tuple[BonePatch, ...]
    per_rib_fields: dict | None = field(default=None, repr=False)

    def bone_raster(self, shape):
        out = np.zeros(shape)
        for patch in self.bones:
            patch.add_into(out)
        return out


def _masked(st_field):
    """(values, valid mask) with invalid cells zero-filled."""
    mask = st_field.valid_mask
    vals = np.where(mask, st_field.values, 0.0)
    return vals, mask


def derivative_s(st_field):
    """First difference along s: out(s) = f(s) - f(s-1), out(0) = 0.

    The zero at s=0 matches the zero reintegration baseline: the bone
    shadow vanishes at the contour.
    """
    vals, mask = _masked(st_field)
    out = np.full_like(vals, np.nan)
    out[:, 0] = 0.0
    out[:, 1:] = vals[:, 1:] - vals[:, :-1]
    out[~mask] = np.nan
    return st_field.with_values(out)


def smooth_t(st_field, kappa_t):
    """Cyclic Gaussian smoothing along t, column depth respected.

    At each s level only the columns deep enough to hold a whole-level
    cell there participate; the kernel is renormalized over the
    participants, which also makes the DC gain exactly 1.  Cap cells (the
    per-column medial-point sample) are not level-aligned across columns,
    so they pass through unsmoothed instead of contaminating the level
    they happen to share an array slot with.

    The kernel is truncated at +-4 sigma and pre-folded modulo the
    period, so the sum per output cell runs over at most one period in a
    fixed tap order -- results are bit-identical under circular shifts
    and any parallel schedule.
    """
    if kappa_t <= 0:
        raise ValueError("kappa_t must be > 0")
    vals, mask = _masked(st_field)
    t_count = st_field.t_count
    level_mask = (
        np.arange(st_field.s_count)[None, :] < st_field.level_counts[:, None]
    )
    lvl_vals = np.where(level_mask, vals, 0.0)
    radius = int(math.ceil(4.0 * kappa_t / st_field.dt))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets * st_field.dt / kappa_t) ** 2)
    kernel /= kernel.sum()
    folded = np.zeros(t_count)
    np.add.at(folded, np.mod(offsets, t_count), kernel)
    num = np.zeros_like(vals)
    den = np.zeros_like(vals)
    fmask = level_mask.astype(float)
    for shift in np.flatnonzero(folded > 0):
        w = folded[shift]
        num += w * np.roll(lvl_vals, shift, axis=0)
        den += w * np.roll(fmask, shift, axis=0)
    out = np.full_like(vals, np.nan)
    good = level_mask & (den > 0)
    out[good] = num[good] / den[good]
    caps = mask & ~level_mask
    out[caps] = vals[caps]
    return st_field.with_values(out)


def reintegrate(st_field):
    """Cumulative sum along s with zero baseline.

    Each difference g(s) is the exact integral of the depth gradient over
    its own unit step [s-1, s], so summing the steps recovers
    f - f(0, .) exactly when g came from derivative_s.  out(0) = 0; the
    g(0) entry carries no step of its own.
    """
    vals, mask = _masked(st_field)
    steps = vals.copy()
    steps[:, 0] = 0.0
    out = np.cumsum(steps, axis=1)
    out[~mask] = np.nan
    return st_field.with_values(out)


def centerline_smooth(st_field, tau, k_center, invert_gate=False):
    """Patch the centerline seam with a gated trailing average.

    Reading only the original values, each cell keeps its value when the
    ratio to its shallower neighbor exceeds tau and otherwise becomes the
    mean of the k_center cells ending at it (window clamped to the valid
    range).  s=0 always passes through; a near-zero denominator routes to
    the averaging branch rather than inventing a huge ratio.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if k_center < 1:
        raise ValueError("k_center must be >= 1")
    vals, mask = _masked(st_field)
    t_count, s_count = vals.shape
    prev = vals[:, :-1]
    cur = vals[:, 1:]
    denom_ok = np.abs(prev) > 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        keep = denom_ok & (cur / np.where(denom_ok, prev, 1.0) > tau)
    if invert_gate:
        keep = ~keep
    # trailing mean of the k cells ending at s, from the original values
    csum = np.concatenate(
        [np.zeros((t_count, 1)), np.cumsum(vals, axis=1)], axis=1
    )
    idx = np.arange(1, s_count)
    start = np.maximum(0, idx - k_center + 1)
    window = (csum[:, idx + 1] - csum[:, start]) / (idx - start + 1)
    out = vals.copy()
    out[:, 1:] = np.where(keep, cur, window)
    out[~mask] = np.nan
    return st_field.with_values(out)


def clamp_nonneg(st_field):
    """Clamp valid cells at zero; negative bone intensity has no meaning."""
    out = np.maximum(st_field.values, 0.0)
    return st_field.with_values(out)


def _bone_field(img, mask, params, dt=1.0, ds=1.0):
    sampled = sample_field(img, mask.contour, dt=dt, ds=ds)
    bone = clamp_nonneg(
        centerline_smooth(
            reintegrate(smooth_t(derivative_s(sampled), params.kappa_t)),
            params.tau,
            params.k_center,
            invert_gate=params.invert_center_gate,
        )
    )
    return sampled, bone


def _crop_patch(label, values, weights):
    covered = weights > 0
    if not covered.any():
        return BonePatch(label=label, x0=0, y0=0,
                         values=np.zeros((0, 0)), weights=np.zeros((0, 0)))
    ys, xs = np.nonzero(covered)
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    return BonePatch(
        label=label,
        x0=x0,
        y0=y0,
        values=values[y0:y1, x0:x1].copy(),
        weights=weights[y0:y1, x0:x1].copy(),
    )


def suppress_rib(img, mask, params=DEFAULT_PARAMS, dt=1.0, ds=1.0,
                 keep_field=False):
    """Suppress one rib.

    Returns (soft, patch) where soft = img - bone pixelwise (bone is zero
    wherever the splat deposited no weight) and the patch is nonnegative
    everywhere.  With keep_field=True a third element carries the
    (sampled, bone) field pair.
    """
    if mask.bitmap.shape != img.shape:
        raise ValueError(
            f"mask shape {mask.bitmap.shape} does not match image shape {img.shape}"
        )
    sampled, bone = _bone_field(img, mask, params, dt=dt, ds=ds)
    bone_raster, weights = backproject(bone, img.shape)
    soft = img.with_data(img.data - bone_raster)
    patch = _crop_patch(mask.label, bone_raster, weights)
    if keep_field:
        return soft, patch, (sampled, bone)
    return soft, patch


# offsets of the k nearest lattice pixels, ties broken in scanline order
def _knn_offsets(k):
    r = int(math.isqrt(k)) + 2
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    dy, dx = dy.ravel(), dx.ravel()
    order = np.lexsort((dx, dy, dx * dx + dy * dy))
    return dy[order[:k]], dx[order[:k]]


def blend_border(soft, mask, s_b, k_border):
    """KNN blend of the shallow band around one rib contour.

    Every pixel whose depth coordinate is at most s_b gets the mean of its
    k_border nearest pixels (Euclidean, itself included, ties in scanline
    order), all read from the pre-blend image; everything else is
    untouched.  The band is purely geometric: pixel centers inside the
    contour within s_b of it.
    """
    if s_b < 0:
        raise ValueError("s_b must be >= 0")
    if k_border < 1:
        raise ValueError("k_border must be >= 1")
    if s_b == 0 or k_border == 1:
        return soft
    bm = mask.bitmap
    # cheap prefilter on the bitmap distance transform, exact test after
    inner = ndimage.distance_transform_edt(bm)
    cand = bm & (inner <= s_b + 1.5)
    ys, xs = np.nonzero(cand)
    if ys.size == 0:
        return soft
    centers = np.stack([xs + 0.5, ys + 0.5], axis=1)
    dist, _, _ = mask.contour.nearest(centers)
    band = dist <= s_b + 1e-9
    ys, xs = ys[band], xs[band]
    if ys.size == 0:
        return soft
    h, w = soft.shape
    src = soft.data
    total = np.zeros(ys.size)
    count = np.zeros(ys.size)
    for dy, dx in zip(*_knn_offsets(k_border)):
        j = ys + dy
        i = xs + dx
        ok = (j >= 0) & (j < h) & (i >= 0) & (i < w)
        total[ok] += src[j[ok], i[ok]]
        count[ok] += 1
    out = src.copy()
    out[ys, xs] = total / count
    return soft.with_data(out)


def _params_for(params, label):
    if isinstance(params, SuppressionParams):
        return params
    if isinstance(params, dict):
        try:
            return params[label]
        except KeyError:
            raise SuppressionError(f"rib {label}: no parameters supplied") from None
    raise TypeError("params must be SuppressionParams or a dict keyed by label")


def suppress_all(img, masks, params=DEFAULT_PARAMS, dt=1.0, ds=1.0,
                 keep_fields=False):
    """Suppress every rib of a mask set.

    Ribs run sequentially in set order, each on the current soft estimate;
    the border blend then runs once per rib in the same order; the final
    image is clamped to [0, max_value].  ``params`` is a single
    SuppressionParams for all ribs or a dict keyed by rib label.
    """
    if isinstance(masks, RibMask):
        masks = RibMaskSet([masks])
    if len(masks) and masks.shape != img.shape:
        raise ValueError(
            f"mask shape {masks.shape} does not match image shape {img.shape}"
        )
    current = img
    patches = []
    fields = {} if keep_fields else None
    for mask in masks:
        p = _params_for(params, mask.label)
        try:
            if keep_fields:
                current, patch, pair = suppress_rib(
                    current, mask, p, dt=dt, ds=ds, keep_field=True
                )
                fields[mask.label] = pair
            else:
                current, patch = suppress_rib(current, mask, p, dt=dt, ds=ds)
        except SuppressionError:
            raise
        except Exception as exc:
            raise SuppressionError(f"rib {mask.label}: {exc}") from exc
        patches.append(patch)
    pre_blend = current
    for mask in masks:
        p = _params_for(params, mask.label)
        try:
            current = blend_border(current, mask, p.s_b, p.k_border)
        except Exception as exc:
            raise SuppressionError(f"rib {mask.label}: {exc}") from exc
    final = img.with_data(np.clip(current.data, 0.0, img.max_value))
    return SuppressionResult(
        soft=final,
        soft_pre_blend=pre_blend,
        bones=tuple(patches),
        per_rib_fields=fields,
    )
