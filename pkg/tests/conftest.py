import numpy as np
import pytest
from scipy import ndimage

from st_ribsupp.imagery import Image
from st_ribsupp.st_space import Contour


def random_blob(rng, h=48, w=48, n_disks=6, rmin=3, rmax=8):
    """Hole-free 4-connected random blob from a union of disks."""
    bm = np.zeros((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    cx = rng.uniform(rmax, w - rmax)
    cy = rng.uniform(rmax, h - rmax)
    for _ in range(n_disks):
        r = rng.uniform(rmin, rmax)
        bm |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        step = rng.uniform(0.5 * r, 1.5 * r)
        ang = rng.uniform(0, 2 * np.pi)
        cx = np.clip(cx + step * np.cos(ang), rmax, w - rmax)
        cy = np.clip(cy + step * np.sin(ang), rmax, h - rmax)
    struct = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labels, n = ndimage.label(bm, structure=struct)
    if n > 1:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, range(1, n + 1))
        bm = labels == (1 + int(np.argmax(sizes)))
    return ndimage.binary_fill_holes(bm)


@pytest.fixture
def square10():
    """The 10x10 counterclockwise square used throughout the examples."""
    return Contour([(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)])


@pytest.fixture
def ramp_image():
    """Image whose continuous interpolant is exactly I(x, y) = y."""
    h, w = 16, 16
    data = np.tile(np.arange(h, dtype=float)[:, None] + 0.5, (1, w))
    return Image(data=data, max_value=255.0)


def circle_contour(n=64, radius=20.0, center=(25.0, 25.0)):
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    pts = np.stack(
        [center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], axis=1
    )
    return Contour(pts)
