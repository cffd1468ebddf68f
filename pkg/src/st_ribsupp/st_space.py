"""Contour-normal (s, t) coordinate system for closed polygonal contours.

Every rib is described by a closed counterclockwise polygon.  The transform
maps an interior point to (s, t) where t is the arc-length position of its
nearest contour point and s is the distance to it; the inverse walks from
the contour point along the inward normal.  A rectangular (s, t) grid of
image samples, together with a per-column usable depth (the distance at
which the opposite side of the shape takes over), is the working
representation for all smoothing stages.

Conventions: x grows rightward, y grows downward, pixel (i, j) covers the
unit square [i, i+1] x [j, j+1] with its center at (i+0.5, j+0.5), so
contour vertices live on the integer corner lattice.  Counterclockwise
means positive shoelace area; the inward unit normal of an edge is the
left perpendicular (-dy, dx) of its direction.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

# Chunk size (in point-x-edge products) for the vectorized nearest-edge
# scans, to bound temporary memory.
_CHUNK = 2_000_000

_STF_MAGIC = b"STF1"


class STDomainError(ValueError):
    """Raised when a point is outside the domain of the forward transform."""


def signed_area(vertices):
    """Shoelace area of a polygon; positive for counterclockwise order."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


class Contour:
    """Closed counterclockwise piecewise-linear polygon with arc-length tables.

    Attributes
    ----------
    vertices : (N, 2) float array, implicit closure (last connects to first)
    edge_vecs, edge_lengths : per-edge vector and length
    cum_length : (N+1,) prefix sums of edge lengths; cum_length[-1] == total_length
    edge_normals : inward unit normal per edge
    vertex_normals : unit angular-bisector normal per vertex
    """

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must be an (N, 2) array")
        if v.shape[0] >= 4 and np.array_equal(v[0], v[-1]):
            v = v[:-1]  # drop explicit closure point
        # drop zero-length edges (consecutive duplicates)
        keep = np.hypot(*(np.roll(v, -1, axis=0) - v).T) > 1e-12
        v = v[keep]
        if v.shape[0] < 3:
            raise ValueError("contour needs at least 3 distinct vertices")
        area = signed_area(v)
        if area <= 0:
            raise ValueError(
                "contour must be counterclockwise (positive shoelace area), "
                f"got area {area:g}"
            )
        e = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(e[:, 0], e[:, 1])
        self.vertices = _freeze(v)
        self.edge_vecs = _freeze(e)
        self.edge_lengths = _freeze(lengths)
        self.cum_length = _freeze(np.concatenate(([0.0], np.cumsum(lengths))))
        self.total_length = float(self.cum_length[-1])
        normals = np.stack([-e[:, 1], e[:, 0]], axis=1) / lengths[:, None]
        self.edge_normals = _freeze(normals)
        # vertex i joins edge i-1 and edge i; bisector of their normals
        nsum = np.roll(normals, 1, axis=0) + normals
        norm = np.hypot(nsum[:, 0], nsum[:, 1])
        degenerate = norm < 1e-12
        nsum[degenerate] = normals[degenerate]
        norm[degenerate] = 1.0
        self.vertex_normals = _freeze(nsum / norm[:, None])
        self.area = area

    def __len__(self):
        return self.vertices.shape[0]

    def __repr__(self):
        return (
            f"Contour({len(self)} vertices, length {self.total_length:.2f}, "
            f"area {self.area:.2f})"
        )

    @property
    def bounds(self):
        """(xmin, ymin, xmax, ymax) of the vertex set."""
        v = self.vertices
        return (
            float(v[:, 0].min()),
            float(v[:, 1].min()),
            float(v[:, 0].max()),
            float(v[:, 1].max()),
        )

    def _locate(self, t):
        """Map arc positions to (edge index, offset along the edge)."""
        t = np.mod(np.asarray(t, dtype=float), self.total_length)
        idx = np.searchsorted(self.cum_length, t, side="right") - 1
        idx = np.clip(idx, 0, len(self) - 1)
        return idx, t - self.cum_length[idx]

    def point_at(self, t):
        """gamma(t): the contour point at arc position t (t wraps modulo length)."""
        idx, u = self._locate(t)
        frac = (u / self.edge_lengths[idx])[..., None]
        return self.vertices[idx] + frac * self.edge_vecs[idx]

    def normal_at(self, t, vertex_tol=1e-9):
        """Inward unit normal at arc position t.

        On an edge interior this is the edge normal; within ``vertex_tol``
        of a vertex it is the angular-bisector normal, which keeps the
        direction well defined where the polygon has a corner.
        """
        idx, u = self._locate(t)
        n = self.edge_normals[idx].copy()
        at_start = u <= vertex_tol
        at_end = u >= self.edge_lengths[idx] - vertex_tol
        n[at_start] = self.vertex_normals[idx[at_start]]
        nxt = (idx[at_end] + 1) % len(self)
        n[at_end] = self.vertex_normals[nxt]
        return n

    def contains(self, points):
        """Crossing-number interior test for an (M, 2) array of points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        inside = np.zeros(p.shape[0], dtype=bool)
        step = max(1, _CHUNK // max(1, len(self)))
        for lo in range(0, p.shape[0], step):
            q = p[lo : lo + step]
            y = q[:, 1][:, None]
            x = q[:, 0][:, None]
            spans = (v[:, 1] > y) != (w[:, 1] > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = v[:, 0] + (y - v[:, 1]) * (w[:, 0] - v[:, 0]) / (
                    w[:, 1] - v[:, 1]
                )
            hits = spans & (x < xint)
            inside[lo : lo + q.shape[0]] = np.sum(hits, axis=1) % 2 == 1
        return inside

    def nearest(self, points):
        """Nearest contour point for each query point.

        Returns (dist, t, edge): distance to the polygon, the arc position
        of the nearest point, and the owning edge index.  Ties between
        equidistant edges resolve to the smaller edge index, hence the
        smaller t.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        a = self.vertices
        e = self.edge_vecs
        len2 = self.edge_lengths**2
        m = p.shape[0]
        dist = np.empty(m)
        tout = np.empty(m)
        edge = np.empty(m, dtype=int)
        step = max(1, _CHUNK // max(1, len(self)))
        for lo in range(0, m, step):
            q = p[lo : lo + step]
            d = q[:, None, :] - a[None, :, :]
            u = np.clip((d * e).sum(-1) / len2, 0.0, 1.0)
            foot = a + u[..., None] * e
            d2 = ((q[:, None, :] - foot) ** 2).sum(-1)
            k = np.argmin(d2, axis=1)
            rows = np.arange(q.shape[0])
            dist[lo : lo + q.shape[0]] = np.sqrt(d2[rows, k])
            tout[lo : lo + q.shape[0]] = np.mod(
                self.cum_length[k] + u[rows, k] * self.edge_lengths[k],
                self.total_length,
            )
            edge[lo : lo + q.shape[0]] = k
        return dist, tout, edge


def inverse_st(contour, s, t):
    """Map (s, t) back to image space: gamma(t) + s * inward normal.

    Total on its domain; t wraps modulo the contour length, s >= 0 walks
    inward.  Scalars in, scalar pair out; arrays in, (M, 2) array out.
    """
    scalar = np.ndim(s) == 0 and np.ndim(t) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s, t = np.broadcast_arrays(s, t)
    pts = contour.point_at(t) + s[:, None] * contour.normal_at(t)
    if scalar:
        return float(pts[0, 0]), float(pts[0, 1])
    return pts


def forward_st(contour, points):
    """Map interior points to (s, t): distance to the contour and the arc
    position of the nearest contour point.

    Raises STDomainError for points outside or on the contour.
    """
    p = np.asarray(points, dtype=float)
    scalar = p.ndim == 1
    p = np.atleast_2d(p)
    inside = contour.contains(p)
    if not inside.all():
        bad = p[~inside][0]
        raise STDomainError(
            f"point ({bad[0]:g}, {bad[1]:g}) is outside or on the contour"
        )
    dist, t, _ = contour.nearest(p)
    if np.any(dist <= 0):
        bad = p[dist <= 0][0]
        raise STDomainError(f"point ({bad[0]:g}, {bad[1]:g}) lies on the contour")
    if scalar:
        return float(dist[0]), float(t[0])
    return dist, t


def _t_grid(contour, dt):
    """Uniform cyclic t grid.

    The requested spacing is shrunk so that an integer number of samples
    covers the full closed contour; cyclic smoothing along t needs the
    wrap-around gap to equal every other gap.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    count = max(8, int(math.ceil(contour.total_length / dt - 1e-12)))
    eff = contour.total_length / count
    return np.arange(count) * eff, eff


def _march_clearance(contour, tvals, ds, n_sub=2):
    """March the inward normal ray of every t column and parameterize it by
    true clearance (distance to the contour).

    The clearance grows along the ray until the ray meets the medial axis
    of the polygon, where the nearest contour point switches to the other
    side and the clearance peaks.  The march records, per column, the ray
    length at which the clearance crosses each level k*ds (linear
    interpolation between substeps), and stops once the clearance falls
    measurably below its running maximum or the probe leaves the polygon.

    On a contour whose edges run perpendicular to the ray the crossing at
    level k sits exactly at gamma(t) + k*ds*normal; on the jagged
    staircase contours that come out of bitmap tracing the ray runs
    oblique to the underlying shape and the clearance levels are the
    meaningful depth coordinate.

    Returns (depth, ray, peak_ray): depth[t] is the maximum clearance
    reached (the medial-axis distance along the ray); ray[t, k] is the ray
    length of clearance level k*ds, NaN beyond depth[t]; peak_ray[t] is
    the ray length at which the clearance peaked.
    """
    base = contour.point_at(tvals)
    nrm = contour.normal_at(tvals)
    count = tvals.shape[0]
    xmin, ymin, xmax, ymax = contour.bounds
    diag = math.hypot(xmax - xmin, ymax - ymin)
    sub = ds / n_sub
    max_steps = int(diag / sub) + 2
    s_cap = int(diag / (2 * ds)) + 2
    # a ray can dip by the corner-lattice scallop without crossing the axis
    drop_tol = 0.45 * ds

    depth = np.zeros(count)
    peak_ray = np.zeros(count)
    ray = np.full((count, s_cap), np.nan)
    ray[:, 0] = 0.0
    next_level = np.ones(count, dtype=int)
    prev_clear = np.zeros(count)
    prev_r = np.zeros(count)
    active = np.arange(count)
    for step in range(1, max_steps + 1):
        if active.size == 0:
            break
        r = step * sub
        q = base[active] + r * nrm[active]
        inside = contour.contains(q)
        clear = np.full(active.size, -np.inf)
        if inside.any():
            clear[inside] = contour.nearest(q[inside])[0]
        # record every level crossed within this substep; the tolerance
        # matches the one in STField.valid_counts so every valid cell has
        # a recorded crossing
        crossed = clear >= next_level[active] * ds - 1e-9
        while crossed.any():
            pos = np.flatnonzero(crossed)
            idx = active[pos]
            lvl = next_level[idx]
            target = lvl * ds
            span = clear[pos] - prev_clear[idx]
            frac = np.clip(
                np.where(span > 1e-12, (target - prev_clear[idx]) / span, 1.0),
                0.0,
                1.0,
            )
            ray[idx, lvl] = prev_r[idx] + frac * sub
            next_level[idx] = lvl + 1
            clear[pos[next_level[idx] >= s_cap]] = -np.inf
            crossed = clear >= next_level[active] * ds - 1e-9
        improved = clear > depth[active]
        depth[active[improved]] = clear[improved]
        peak_ray[active[improved]] = r
        keep = clear >= depth[active] - drop_tol
        prev_clear[active] = clear
        prev_r[active] = r
        active = active[keep]
    np.maximum(depth, 0.0, out=depth)
    return depth, ray, peak_ray


def compute_depth(contour, dt=1.0, ds=1.0):
    """Per-column depth c(t): the medial-axis distance along the inward
    normal ray of each t sample.

    This is the largest distance-to-contour attained while marching
    inward; past it the nearest contour point belongs to the other side
    of the centerline.  A column whose ray immediately leaves the polygon
    gets depth 0.  The value never exceeds the true distance-to-contour
    at the probed point (it equals it at the turning point).
    """
    if ds <= 0:
        raise ValueError("ds must be positive")
    tvals, _ = _t_grid(contour, dt)
    depth, _, _ = _march_clearance(contour, tvals, ds)
    return depth


@dataclass(frozen=True, eq=False)
class STField:
    """Rectangular (t, s) grid of samples attached to one contour.

    values[t_idx, s_idx] holds the sample of the column at arc position
    t_idx * dt whose distance to the contour is s_idx * ds; cells beyond
    the column depth hold NaN and are never read by downstream math.

    ``ray`` gives the ray length of each cell along its column's normal
    (equal to s_idx * ds wherever the ray runs perpendicular to the local
    shape; larger where bitmap tracing made the ray oblique).  It is None
    for fields loaded from a dump, which carry no geometry; ``contour``
    is then None as well.
    """

    values: np.ndarray
    depth: np.ndarray
    dt: float
    ds: float
    contour: Contour | None = field(default=None, repr=False)
    ray: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        depth = np.asarray(self.depth, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be 2-D (t by s)")
        if depth.shape != (values.shape[0],):
            raise ValueError("depth must have one entry per t column")
        if np.any(depth < 0):
            raise ValueError("depth must be nonnegative")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "depth", _freeze(depth))
        if self.ray is not None:
            ray = np.asarray(self.ray, dtype=float)
            if ray.shape != values.shape:
                raise ValueError("ray must have the same shape as values")
            object.__setattr__(self, "ray", _freeze(ray))

    @property
    def t_count(self):
        return self.values.shape[0]

    @property
    def s_count(self):
        return self.values.shape[1]

    @property
    def level_counts(self):
        """Whole clearance levels per column: cells at s = 0, ds, 2*ds, ...
        up to the column depth."""
        n = np.floor(self.depth / self.ds + 1e-9).astype(int) + 1
        return np.minimum(n, self.s_count)

    @property
    def valid_counts(self):
        """Number of valid cells per column: the whole levels plus, where
        the array has room for it, one cap cell at the depth itself (the
        medial point), so the bone peak is always represented."""
        return np.minimum(self.level_counts + 1, self.s_count)

    @property
    def valid_mask(self):
        return np.arange(self.s_count)[None, :] < self.valid_counts[:, None]

    def with_values(self, values):
        """Same geometry, new sample values."""
        return STField(
            values=values, depth=self.depth, dt=self.dt, ds=self.ds,
            contour=self.contour, ray=self.ray,
        )

    def cell_positions(self):
        """Image-space position of every valid cell, plus the valid mask."""
        if self.contour is None:
            raise ValueError("field has no contour attached")
        tvals = np.arange(self.t_count) * self.dt
        base = self.contour.point_at(tvals)
        nrm = self.contour.normal_at(tvals)
        if self.ray is not None:
            r = np.where(np.isnan(self.ray), 0.0, self.ray)
        else:
            r = np.broadcast_to(
                np.arange(self.s_count) * self.ds, (self.t_count, self.s_count)
            )
        pos = base[:, None, :] + r[:, :, None] * nrm[:, None, :]
        return pos, self.valid_mask


def _bilinear_sample(data, points):
    """Sample ``data`` at image-space points; pixel centers sit at
    (i+0.5, j+0.5).  Coordinates are clamped to the border."""
    h, w = data.shape
    x = np.clip(points[:, 0] - 0.5, 0.0, w - 1.0)
    y = np.clip(points[:, 1] - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(x.astype(int), w - 2) if w > 1 else np.zeros(len(x), int)
    y0 = np.minimum(y.astype(int), h - 2) if h > 1 else np.zeros(len(y), int)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return (
        data[y0, x0] * (1 - fx) * (1 - fy)
        + data[y0, x1] * fx * (1 - fy)
        + data[y1, x0] * (1 - fx) * fy
        + data[y1, x1] * fx * fy
    )


def sample_field(img, contour, dt=1.0, ds=1.0):
    """Build the (s, t) sample grid of an image over one contour.

    Each valid cell holds the bilinear interpolation of the image at the
    point of its column's normal ray whose distance to the contour is
    s * ds; columns stop at the medial-axis depth from the clearance
    march.  Wherever the ray runs perpendicular to the shape this is
    exactly gamma(t) + s * normal.
    """
    if ds <= 0:
        raise ValueError("ds must be positive")
    xmin, ymin, xmax, ymax = contour.bounds
    if xmin < -1e-9 or ymin < -1e-9 or xmax > img.width + 1e-9 or ymax > img.height + 1e-9:
        raise ValueError(
            f"contour bounds ({xmin:g}, {ymin:g})..({xmax:g}, {ymax:g}) exceed "
            f"image bounds {img.width}x{img.height}"
        )
    tvals, dt_eff = _t_grid(contour, dt)
    depth, ray_full, peak_ray = _march_clearance(contour, tvals, ds)
    t_count = tvals.shape[0]
    n_levels = np.floor(depth / ds + 1e-9).astype(int) + 1
    s_count = int(n_levels.max()) + 1  # whole levels plus the cap cell
    ray = np.full((t_count, s_count), np.nan)
    ray[:, : min(s_count, ray_full.shape[1])] = ray_full[
        :, : min(s_count, ray_full.shape[1])
    ]
    ray[np.arange(t_count), n_levels] = peak_ray  # cap at the medial point
    valid = ~np.isnan(ray)
    base = contour.point_at(tvals)
    nrm = contour.normal_at(tvals)
    r = np.where(valid, ray, 0.0)
    pos = base[:, None, :] + r[:, :, None] * nrm[:, None, :]
    values = np.full((t_count, s_count), np.nan)
    values[valid] = _bilinear_sample(img.data, pos[valid])
    return STField(
        values=values, depth=depth, dt=dt_eff, ds=ds, contour=contour, ray=ray
    )


def backproject(st_field, shape):
    """Splat a field back to image space.

    Each valid cell deposits its value on the 4 pixels around its
    image-space position with bilinear weights; the output is the
    weight-normalized accumulation.  Returns (values, weights) rasters of
    the given (height, width); pixels that receive no weight are 0.

    Accumulation runs over cells in row-major (t, s) order, so the result
    is identical regardless of any upstream parallelism.
    """
    h, w = int(shape[0]), int(shape[1])
    acc = np.zeros((h, w))
    wacc = np.zeros((h, w))
    pos, valid = st_field.cell_positions()
    valid = valid & np.isfinite(st_field.values)  # sentinels never splat
    pts = pos[valid]
    vals = st_field.values[valid]
    x = pts[:, 0] - 0.5
    y = pts[:, 1] - 0.5
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    for di, dj, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        i = x0 + di
        j = y0 + dj
        m = (i >= 0) & (i < w) & (j >= 0) & (j < h) & (wgt > 0)
        np.add.at(acc, (j[m], i[m]), wgt[m] * vals[m])
        np.add.at(wacc, (j[m], i[m]), wgt[m])
    out = np.zeros((h, w))
    covered = wacc > 0
    out[covered] = acc[covered] / wacc[covered]
    return out, wacc


def write_field_dump(st_field, path):
    """Write the flat binary dump: header (T, S, dt, ds), then the depth
    array, then row-major values.  Little-endian float64 throughout."""
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                "<4sIIdd",
                _STF_MAGIC,
                st_field.t_count,
                st_field.s_count,
                st_field.dt,
                st_field.ds,
            )
        )
        fh.write(np.ascontiguousarray(st_field.depth, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(st_field.values, dtype="<f8").tobytes())


def read_field_dump(path):
    """Read a dump written by write_field_dump.  The returned field has no
    contour attached."""
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<4sIIdd"))
        magic, t_count, s_count, dt, ds = struct.unpack("<4sIIdd", head)
        if magic != _STF_MAGIC:
            raise ValueError(f"not a field dump: bad magic {magic!r}")
        depth = np.frombuffer(fh.read(8 * t_count), dtype="<f8").astype(float)
        values = np.frombuffer(fh.read(8 * t_count * s_count), dtype="<f8")
        values = values.astype(float).reshape(t_count, s_count)
    return STField(values=values, depth=depth, dt=dt, ds=ds, contour=None)
