"""Curvature estimates on synthetic curves.

Run with ``python3 demos/curvature_of_curves.py``. Circles of several radii
should report a mean curvature close to 1/r, a straight line reports zero,
and a helix lands near its analytic value a/(a^2 + c^2).
"""

import warnings

import numpy as np

from slepgraph.analysis import Trajectory, curvature_profile


def circle(r, n=200):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([r * np.cos(t), r * np.sin(t), np.zeros(n)])


def main():
    for r in (0.1, 1.0, 2.0):
        prof = curvature_profile(Trajectory(circle(r)))
        print(f"circle r = {r:3.1f}: mean tau {prof.mean:8.4f}  (1/r = {1 / r:.4f})")

    line = np.outer(np.linspace(0, 1, 100), [1.0, 2.0, -1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        prof = curvature_profile(Trajectory(line))
    print(f"line: mean tau {prof.mean:.4f}, degenerate windows {prof.n_degenerate}")

    a, c = 1.0, 0.3
    t = np.linspace(0, 6 * np.pi, 600)
    helix = np.column_stack([a * np.cos(t), a * np.sin(t), c * t])
    prof = curvature_profile(Trajectory(helix))
    print(f"helix: mean tau {prof.mean:.4f}  (analytic {a / (a * a + c * c):.4f})")


if __name__ == "__main__":
    main()
