"""Image and rib-mask data model, PNG file I/O, and contour extraction.

Images are single-channel rasters held as 64-bit floats regardless of file
depth, so that the smoothing/reintegration stages never accumulate
quantization error.  Rib masks are binary bitmaps, one 4-connected
component each, whose boundary is traced on the pixel-corner lattice into
a closed counterclockwise polygon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .st_space import Contour

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class MaskError(ValueError):
    """Invalid rib mask input (disconnected, degenerate, bad labels...)."""


class ContourError(ValueError):
    """Boundary tracing failed or the component is degenerate."""


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """2-D grayscale raster with float64 intensities.

    ``max_value`` is the largest representable intensity of the source file
    (255 or 65535).  Values must be finite; intermediates of the pipeline
    may leave [0, max_value], files never do.
    """

    data: np.ndarray
    max_value: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image data must be finite")
        if self.max_value <= 0:
            raise ValueError("max_value must be positive")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data):
        """New image with the same max_value."""
        return Image(data=data, max_value=self.max_value)


def load_image(path):
    """Load an 8- or 16-bit single-channel PNG.

    Values are returned exactly as stored (no rescaling); max_value is
    2^bitdepth - 1.  Pixel (0, 0) is the top-left corner.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"image file not found: {p}")
    with PILImage.open(p) as im:
        mode = im.mode
        if mode in ("RGB", "RGBA", "LA", "CMYK", "YCbCr"):
            raise ValueError(
                f"multi-channel input not supported (mode {mode}): {p}"
            )
        if mode == "L":
            return Image(data=np.asarray(im, dtype=float), max_value=255.0)
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            return Image(data=np.asarray(im, dtype=float), max_value=65535.0)
        raise ValueError(f"unsupported bit depth or mode {mode!r}: {p}")


def save_image(img, path, bitdepth=16):
    """Write a single-channel PNG at the given bit depth.

    Values are clamped to [0, 2^bitdepth - 1] and rounded half-to-even.
    The file is written in place; callers wanting atomicity write to a
    temporary name and rename.
    """
    if bitdepth == 8:
        lim, dtype = 255.0, np.uint8
    elif bitdepth == 16:
        lim, dtype = 65535.0, np.uint16
    else:
        raise ValueError(f"bitdepth must be 8 or 16, got {bitdepth}")
    q = np.rint(np.clip(img.data, 0.0, lim)).astype(dtype)
    PILImage.fromarray(q).save(Path(path), format="PNG")


@dataclass(frozen=True, eq=False)
class RibMask:
    """One rib: integer label, binary bitmap, and its traced contour."""

    label: int
    bitmap: np.ndarray
    contour: Contour

    def __post_init__(self):
        bm = np.asarray(self.bitmap, dtype=bool)
        if bm.ndim != 2:
            raise ValueError("mask bitmap must be 2-D")
        object.__setattr__(self, "bitmap", _freeze(bm))

    @classmethod
    def from_bitmap(cls, label, bitmap):
        return cls(label=int(label), bitmap=bitmap, contour=trace_contour(bitmap))

    @property
    def pixel_count(self):
        return int(self.bitmap.sum())


class RibMaskSet:
    """Ordered collection of rib masks for one radiograph.

    Order is the processing order (superior to inferior, left before right
    at the same level); loaders realize it as ascending label order.
    """

    def __init__(self, masks):
        masks = tuple(masks)
        labels = [m.label for m in masks]
        if len(set(labels)) != len(labels):
            raise MaskError(f"duplicate rib labels: {sorted(labels)}")
        shapes = {m.bitmap.shape for m in masks}
        if len(shapes) > 1:
            raise MaskError(f"mask bitmaps disagree in shape: {sorted(shapes)}")
        self.masks = masks

    def __iter__(self):
        return iter(self.masks)

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, i):
        return self.masks[i]

    @property
    def labels(self):
        return [m.label for m in self.masks]

    @property
    def shape(self):
        return self.masks[0].bitmap.shape if self.masks else None

    def union_bitmap(self):
        out = np.zeros(self.shape, dtype=bool)
        for m in self.masks:
            out |= m.bitmap
        return out

    def label_raster(self):
        """Indexed raster with pixel value = rib label, 0 = background."""
        dtype = np.uint16 if max(self.labels, default=0) > 255 else np.uint8
        out = np.zeros(self.shape, dtype=dtype)
        for m in self.masks:
            out[m.bitmap] = m.label
        return out


# Crack-following boundary walk.  At corner (cx, cy) the four surrounding
# pixels are indexed by their top-left corner; moving in direction d keeps
# the foreground pixel on the inward (left-perpendicular) side.
_MOVE_REQ = {
    (1, 0): ((0, 0), (0, -1)),
    (0, 1): ((-1, 0), (0, 0)),
    (-1, 0): ((-1, -1), (-1, 0)),
    (0, -1): ((0, -1), (-1, -1)),
}


def _left(d):
    return (-d[1], d[0])


def _right(d):
    return (d[1], -d[0])


def trace_contour(bitmap):
    """Trace the outer boundary of a 4-connected component.

    Returns a closed counterclockwise polygon on the pixel-corner lattice
    with collinear vertices merged; its shoelace area equals the pixel
    count of a hole-free component.
    """
    bm = np.asarray(bitmap, dtype=bool)
    if bm.ndim != 2:
        raise ContourError("bitmap must be 2-D")
    n_px = int(bm.sum())
    if n_px < 8:
        raise ContourError(f"degenerate component: only {n_px} pixels (need >= 8)")
    rows = np.flatnonzero(bm.any(axis=1))
    cols = np.flatnonzero(bm.any(axis=0))
    if rows[-1] - rows[0] < 1 or cols[-1] - cols[0] < 1:
        raise ContourError("degenerate component: width or height < 2 px")
    _, n_comp = ndimage.label(bm, structure=_FOUR_CONN)
    if n_comp != 1:
        raise ContourError(f"expected one 4-connected component, found {n_comp}")

    h, w = bm.shape
    pad = np.zeros((h + 2, w + 2), dtype=bool)
    pad[1:-1, 1:-1] = bm

    def fg(i, j):
        return pad[j + 1, i + 1]

    def can_move(c, d):
        (fi, fj), (bi, bj) = _MOVE_REQ[d]
        return fg(c[0] + fi, c[1] + fj) and not fg(c[0] + bi, c[1] + bj)

    ys, xs = np.nonzero(bm)
    k = np.lexsort((xs, ys))[0]  # topmost, then leftmost pixel
    start = (int(xs[k]), int(ys[k]))
    start_dir = (1, 0)
    assert can_move(start, start_dir)

    verts = []
    pos, d = start, start_dir
    limit = 4 * (h + 2) * (w + 2)
    for _ in range(limit):
        nxt = (pos[0] + d[0], pos[1] + d[1])
        # prefer the left turn: at a diagonal pinch this hugs the current
        # pixel and keeps the polygon simple
        for nd in (_left(d), d, _right(d)):
            if can_move(nxt, nd):
                break
        else:
            raise ContourError(f"boundary walk stuck at corner {nxt}")
        if nd != d:
            verts.append(nxt)
        pos, d = nxt, nd
        if pos == start and d == start_dir:
            break
    else:
        raise ContourError("boundary walk did not close")
    return Contour(np.asarray(verts, dtype=float))


def _validate_component(label, bitmap):
    n_px = int(bitmap.sum())
    if n_px < 8:
        raise MaskError(f"label {label}: degenerate mask with {n_px} pixels")
    _, n_comp = ndimage.label(bitmap, structure=_FOUR_CONN)
    if n_comp != 1:
        raise MaskError(
            f"label {label}: disconnected foreground ({n_comp} components)"
        )


def load_mask_set(path):
    """Load per-rib masks from an indexed raster or a JSON manifest.

    Raster: single-channel PNG where pixel value = rib label, 0 =
    background.  Manifest: ``{"ribs": [{"label": int, "file": path}, ...]}``
    with per-rib binary rasters, paths relative to the manifest.  Masks
    come back ordered by label.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"mask file not found: {p}")
    if p.suffix.lower() == ".json":
        manifest = json.loads(p.read_text())
        ribs = manifest.get("ribs")
        if not isinstance(ribs, list) or not ribs:
            raise MaskError(f"manifest {p} has no 'ribs' list")
        masks = []
        for entry in ribs:
            label = int(entry["label"])
            fpath = Path(entry["file"])
            if not fpath.is_absolute():
                fpath = p.parent / fpath
            with PILImage.open(fpath) as im:
                bitmap = np.asarray(im) != 0
            if bitmap.ndim != 2:
                raise MaskError(f"label {label}: mask raster must be single-channel")
            _validate_component(label, bitmap)
            masks.append(RibMask.from_bitmap(label, bitmap))
        masks.sort(key=lambda m: m.label)
        return RibMaskSet(masks)
    with PILImage.open(p) as im:
        if im.mode in ("RGB", "RGBA", "LA", "CMYK", "YCbCr"):
            raise MaskError(f"mask raster must be single-channel, got {im.mode}: {p}")
        arr = np.asarray(im)
    labels = np.unique(arr)
    labels = labels[labels != 0]
    if labels.size == 0:
        raise MaskError(f"mask raster contains no nonzero labels: {p}")
    masks = []
    for label in labels:
        bitmap = arr == label
        _validate_component(int(label), bitmap)
        masks.append(RibMask.from_bitmap(int(label), bitmap))
    return RibMaskSet(masks)


def save_mask_set(mask_set, path):
    """Write the indexed label raster as a single-channel PNG."""
    raster = mask_set.label_raster()
    bitdepth = 16 if raster.dtype == np.uint16 else 8
    save_image(Image(data=raster.astype(float), max_value=float(2**bitdepth - 1)),
               path, bitdepth=bitdepth)
