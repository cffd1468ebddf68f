"""Per-image random grid search over the suppression hyperparameters.

The search space is a finite Cartesian grid; candidates are drawn
uniformly without replacement from a seeded permutation, so a longer
budget extends a shorter one's trace instead of reshuffling it.  The
always-evaluated candidate 0 is the caller's defaults, which makes the
result never worse than not tuning.  Objectives are pluggable: a
supervised one for phantoms (ground truth in hand) and an unsupervised
residual-edge objective for real images.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .metrics import rmse
from .suppression import DEFAULT_PARAMS, SuppressionParams, suppress_all

DEFAULT_SEED = 177


class TunerError(RuntimeError):
    """No candidate produced a finite objective value."""


@dataclass(frozen=True)
class ParamSpace:
    """Finite grid of candidate values per hyperparameter."""

    kappa_t: tuple = (5.0, 10.0, 15.0, 25.0, 40.0, 60.0)
    tau: tuple = (0.3, 0.5, 0.7, 0.9)
    k_center: tuple = (3, 5, 9)
    s_b: tuple = (0.0, 2.0, 3.0, 5.0)
    k_border: tuple = (1, 5, 9, 13)

    def __post_init__(self):
        for name in ("kappa_t", "tau", "k_center", "s_b", "k_border"):
            grid = getattr(self, name)
            if len(grid) == 0:
                raise ValueError(f"empty grid for {name}")
        # every grid point must build a valid parameter set
        for idx in (0, self.size - 1):
            self.at(idx)

    @property
    def size(self):
        return (
            len(self.kappa_t)
            * len(self.tau)
            * len(self.k_center)
            * len(self.s_b)
            * len(self.k_border)
        )

    def at(self, index):
        """Grid point by flat index (row-major over the five grids)."""
        grids = (self.kappa_t, self.tau, self.k_center, self.s_b, self.k_border)
        coords = []
        for grid in reversed(grids):
            index, r = divmod(index, len(grid))
            coords.append(grid[r])
        kb, sb, kc, tau, kt = coords
        return SuppressionParams(
            kappa_t=float(kt), tau=float(tau), k_center=int(kc),
            s_b=float(sb), k_border=int(kb),
        )


DEFAULT_SPACE = ParamSpace()


@dataclass(frozen=True)
class TuneEval:
    """One evaluated candidate."""

    params: SuppressionParams
    objective: float
    wall_time: float


@dataclass(frozen=True)
class TuneTrace:
    """Evaluations in draw order plus the winning index and the seed."""

    evals: tuple[TuneEval, ...]
    best_index: int
    seed: int

    @property
    def best(self):
        return self.evals[self.best_index]

    def to_jsonl_records(self):
        """Per-candidate dicts for a JSON-lines trace file.

        Wall times are deliberately left out so identical invocations
        write byte-identical traces.
        """
        out = []
        for i, ev in enumerate(self.evals):
            p = ev.params
            out.append(
                {
                    "draw": i,
                    "kappa_t": p.kappa_t,
                    "tau": p.tau,
                    "k_center": p.k_center,
                    "s_b": p.s_b,
                    "k_border": p.k_border,
                    "objective": ev.objective if np.isfinite(ev.objective) else None,
                    "best": i == self.best_index,
                }
            )
        return out


def _grad_mag(data):
    gy, gx = np.gradient(data)
    return np.hypot(gx, gy)


def unsupervised_objective(soft, masks):
    """Residual edge energy around the rib contours.

    Mean absolute gradient magnitude over a 2-px band on both sides of
    every contour, plus 0.1 x the mean absolute first differences inside
    the mask union (total variation per pixel, so the two terms share a
    scale).  Lower is better; a perfectly flat result scores 0.
    """
    data = np.asarray(getattr(soft, "data", soft), dtype=float)
    if len(masks) == 0:
        return 0.0
    if masks.shape != data.shape:
        raise ValueError(f"mask shape {masks.shape} != image shape {data.shape}")
    grad = _grad_mag(data)
    band = np.zeros(data.shape, dtype=bool)
    h, w = data.shape
    for mask in masks:
        xmin, ymin, xmax, ymax = mask.contour.bounds
        x0, x1 = max(0, int(xmin) - 3), min(w, int(xmax) + 4)
        y0, y1 = max(0, int(ymin) - 3), min(h, int(ymax) + 4)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        centers = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], axis=1)
        dist, _, _ = mask.contour.nearest(centers)
        near = (dist <= 2.0).reshape(yy.shape)
        band[y0:y1, x0:x1] |= near
    edge_term = float(grad[band].mean()) if band.any() else 0.0
    union = masks.union_bitmap()
    tv = np.zeros(data.shape)
    tv[:, 1:] += np.abs(np.diff(data, axis=1))
    tv[1:, :] += np.abs(np.diff(data, axis=0))
    tv_term = float(tv[union].mean()) if union.any() else 0.0
    return edge_term + 0.1 * tv_term


def supervised_objective(gt_soft):
    """Objective factory: RMSE against a known soft-tissue ground truth."""

    def objective(soft, masks):
        return rmse(soft, gt_soft)

    return objective


def random_grid_search(
    img,
    masks,
    space=DEFAULT_SPACE,
    budget=50,
    objective=unsupervised_objective,
    seed=DEFAULT_SEED,
    defaults=DEFAULT_PARAMS,
    n_threads=1,
    dt=1.0,
    ds=1.0,
):
    """Evaluate the defaults plus ``budget`` random grid points.

    Draws come from a seeded permutation of the grid (without
    replacement; exact duplicates of earlier candidates collapse), so the
    trace is deterministic in the seed and a larger budget extends the
    same trace.  Candidates may evaluate concurrently; the trace stays in
    draw order and the argmin breaks ties toward the earlier draw.

    Returns (best_params, TuneTrace).
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(space.size)
    candidates = [defaults]
    seen = {defaults.key()}
    for flat in order[: min(budget, space.size)]:
        p = space.at(int(flat))
        if p.key() in seen:
            continue
        seen.add(p.key())
        candidates.append(p)

    def run(params):
        t0 = time.perf_counter()
        try:
            result = suppress_all(img, masks, params, dt=dt, ds=ds)
            value = float(objective(result.soft, masks))
        except Exception:
            value = float("nan")
        return value, time.perf_counter() - t0

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(run, candidates))
    else:
        outcomes = [run(p) for p in candidates]

    evals = tuple(
        TuneEval(params=p, objective=v, wall_time=w)
        for p, (v, w) in zip(candidates, outcomes)
    )
    finite = [i for i, ev in enumerate(evals) if np.isfinite(ev.objective)]
    if not finite:
        raise TunerError(
            f"objective was non-finite for all {len(evals)} candidates"
        )
    best_index = min(finite, key=lambda i: (evals[i].objective, i))
    trace = TuneTrace(evals=evals, best_index=best_index, seed=seed)
    return evals[best_index].params, trace
