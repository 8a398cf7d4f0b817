"""Embedding trajectories of trained models and their local curvature.

Each snapshot of a subject is embedded by the pooled representation that feeds
the classifier head; ordering the snapshots by time gives a trajectory. The
curvature at a point is the inverse radius of a least-squares circle fitted to
the neighbouring points after projecting them onto their best-fitting plane.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import GraphContext, ModelState, embed


class UntrainedModelError(RuntimeError):
    pass


class DegenerateWindowError(ValueError):
    pass


@dataclass
class Trajectory:
    """Ordered embedding points (T x d) for one subject."""

    points: np.ndarray
    subject: object = 0
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] < 2:
            raise ValueError(f"a trajectory needs at least 3 points in >= 2 dimensions, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory contains non-finite values")
        self.points = pts
        if self.times is None:
            self.times = np.arange(pts.shape[0])
        self.times = np.asarray(self.times)
        if self.times.shape != (pts.shape[0],):
            raise ValueError("times must have one entry per point")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class CurvatureProfile:
    """Per-point curvature ``tau`` of a trajectory."""

    tau: np.ndarray
    window_fraction: float
    window: int
    n_degenerate: int = 0
    subject: object = 0
    times: np.ndarray = field(default=None)

    @property
    def mean(self) -> float:
        return float(np.mean(self.tau))


def extract_trajectory(state: ModelState, ctx: GraphContext, snapshots, times=None, subject=0,
                       allow_untrained: bool = False) -> Trajectory:
    """Embed time-ordered snapshots (T x N x F) with a trained model.

    Raises :class:`UntrainedModelError` for a state that has not been trained
    (epoch counter 0) unless ``allow_untrained`` is set.
    """
    if state.epoch == 0 and not allow_untrained:
        raise UntrainedModelError("model state has not been trained (epoch 0)")
    X = np.asarray(snapshots, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError("snapshots must be a (T, N, F) array")
    times = np.arange(X.shape[0]) if times is None else np.asarray(times)
    ctx.clear_cache()
    points = embed(state, ctx, X, times)
    return Trajectory(points, subject, times)


def local_frame(points):
    """Centroid and orthonormal 2-frame (d x 2) spanning the best-fit plane of a window."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 3:
        raise ValueError("a window needs at least 3 points")
    center = P.mean(axis=0)
    X = P - center
    _, s, Vt = np.linalg.svd(X, full_matrices=True)
    if s.size == 0 or s[0] <= 1e-14 * max(1.0, np.abs(P).max()):
        raise DegenerateWindowError("all points in the window coincide")
    return center, Vt[:2].T


def fit_circle(points2d):
    """Algebraic (Kasa) least-squares circle through planar points.

    Returns ``(center, radius)``. Collinear input gives ``radius = inf`` with a
    NaN center.
    """
    P = np.asarray(points2d, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != 2 or P.shape[0] < 3:
        raise ValueError("need at least 3 points in the plane")
    # work relative to the centroid and in units of the spread for conditioning
    c0 = P.mean(axis=0)
    X = P - c0
    spread = np.sqrt(np.mean(np.sum(X * X, axis=1)))
    if spread == 0:
        return np.full(2, np.nan), np.inf
    X = X / spread
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        return np.full(2, np.nan), np.inf
    A = np.column_stack([2.0 * X, np.ones(len(X))])
    b = np.sum(X * X, axis=1)
    (a, bb, c), *_ = np.linalg.lstsq(A, b, rcond=None)
    r2 = c + a * a + bb * bb
    if not np.isfinite(r2) or r2 <= 0:
        return np.full(2, np.nan), np.inf
    return c0 + spread * np.array([a, bb]), spread * float(np.sqrt(r2))


def window_size(n_points: int, window_fraction: float) -> int:
    return max(3, int(round(window_fraction * n_points)))


def _window(i, T, w):
    half = w // 2
    lo, hi = max(0, i - half), min(T, i + half + 1)
    if hi - lo < 3:
        lo = max(0, min(lo, T - 3))
        hi = lo + 3
    return lo, hi


def curvature_profile(traj: Trajectory, window_fraction: float = 0.05) -> CurvatureProfile:
    """Curvature ``1/r`` at every point from a centered window of neighbours.

    The window covers ``window_fraction`` of the trajectory (at least 3 points)
    and shrinks near the ends. Degenerate windows (coincident or collinear
    points) get ``tau = 0`` and are counted.
    """
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    P = traj.points
    T = len(traj)
    w = window_size(T, window_fraction)
    tau = np.zeros(T)
    degenerate = 0
    for i in range(T):
        lo, hi = _window(i, T, w)
        win = P[lo:hi]
        try:
            center, frame = local_frame(win)
        except DegenerateWindowError:
            degenerate += 1
            continue
        _, r = fit_circle((win - center) @ frame)
        if np.isinf(r):
            degenerate += 1
            continue
        tau[i] = 1.0 / r
    if degenerate:
        warnings.warn(f"{degenerate} of {T} curvature windows were degenerate (tau set to 0)", RuntimeWarning)
    return CurvatureProfile(tau, window_fraction, w, degenerate, traj.subject, traj.times)


def export_embeddings(trajectories, path) -> None:
    """Write trajectories as CSV rows ``subject,t,dim_0,...``."""
    trajectories = list(trajectories)
    dims = {t.points.shape[1] for t in trajectories}
    if len(dims) > 1:
        raise ValueError("all trajectories must share the embedding dimension")
    d = dims.pop() if dims else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "t"] + [f"dim_{k}" for k in range(d)])
        for tr in trajectories:
            for t, row in zip(tr.times, tr.points):
                w.writerow([tr.subject, t] + [repr(float(v)) for v in row])


def read_embeddings(path) -> list:
    """Inverse of :func:`export_embeddings`; subjects and times come back as strings/ints."""
    groups: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["subject", "t"]:
            raise ValueError(f"{path}: expected a 'subject,t,dim_0,...' header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            subj = row[0]
            try:
                t = int(row[1])
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            groups.setdefault(subj, ([], []))
            groups[subj][0].append(t)
            groups[subj][1].append(vals)
    return [Trajectory(np.array(v), s, np.array(t)) for s, (t, v) in groups.items()]


def write_curvature_csv(profiles, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "t", "tau"])
        for p in profiles:
            for t, tau in zip(p.times, p.tau):
                w.writerow([p.subject, t, repr(float(tau))])


def curvature_summary(groups: dict) -> dict:
    """Mean and standard deviation of per-trajectory mean curvature for each named group."""
    out = {}
    for name, profiles in groups.items():
        means = np.array([p.mean for p in profiles])
        out[name] = {
            "mean": float(means.mean()) if means.size else float("nan"),
            "std": float(means.std()) if means.size else float("nan"),
            "n_trajectories": int(means.size),
        }
    return out


def write_curvature_summary(groups: dict, path) -> None:
    Path(path).write_text(json.dumps(curvature_summary(groups), indent=2, sort_keys=True))
