"""Random antenna/user layouts on the unit disk and their access distances.

Everything is normalized to a disk of radius 1, so distances (and the path
gains derived from them) are unitless.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInputError

CELLFREE = "cellfree"
COLOCATED = "colocated"
MODES = (CELLFREE, COLOCATED)

# Slack for points that land a rounding error outside the unit circle.
_RADIUS_TOL = 1e-12


@dataclass(frozen=True)
class Topology:
    """Positions of ``L`` antennas and ``K`` users.

    Parameters
    ----------
    antenna_positions : ndarray, shape (L, 2)
    user_positions : ndarray, shape (K, 2)
    mode : {"cellfree", "colocated"}
        In co-located mode every antenna sits at the origin.
    """

    antenna_positions: np.ndarray
    user_positions: np.ndarray
    mode: str = CELLFREE

    def __post_init__(self):
        ant = np.asarray(self.antenna_positions, dtype=float).reshape(-1, 2)
        usr = np.asarray(self.user_positions, dtype=float).reshape(-1, 2)
        if len(ant) == 0 or len(usr) == 0:
            raise EmptyInputError("a topology needs at least one antenna and one user")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for name, pts in (("antenna", ant), ("user", usr)):
            if np.any(np.hypot(pts[:, 0], pts[:, 1]) > 1.0 + _RADIUS_TOL):
                raise ValueError(f"{name} position outside the unit disk")
        if self.mode == COLOCATED and np.any(ant != 0.0):
            raise ValueError("co-located antennas must all be at the origin")
        ant.setflags(write=False)
        usr.setflags(write=False)
        object.__setattr__(self, "antenna_positions", ant)
        object.__setattr__(self, "user_positions", usr)

    @property
    def L(self):
        return len(self.antenna_positions)

    @property
    def K(self):
        return len(self.user_positions)

    def user_radii(self):
        """Distance of every user from the disk centre."""
        return np.hypot(self.user_positions[:, 0], self.user_positions[:, 1])


def sample_disk_points(n, rng):
    """Draw ``n`` points uniformly (by area) over the unit disk.

    The radius is ``sqrt(u)`` with ``u ~ U[0, 1]``, which makes the radial
    CDF exactly ``x**2``.

    Parameters
    ----------
    n : int
    rng : numpy.random.Generator

    Returns
    -------
    ndarray, shape (n, 2)
    """
    if n < 1:
        raise EmptyInputError("need at least one point")
    u = rng.random((n, 2))
    r = np.sqrt(u[:, 0])
    theta = 2.0 * np.pi * u[:, 1]
    return np.column_stack((r * np.cos(theta), r * np.sin(theta)))


def random_topology(L, K, rng, mode=CELLFREE):
    """Sample users (and, in cell-free mode, antennas) uniformly on the disk.

    Users are drawn first so the user layout for a given generator state does
    not depend on ``L`` or on the mode.
    """
    users = sample_disk_points(K, rng)
    if mode == COLOCATED:
        return colocated_topology(L, users)
    return Topology(sample_disk_points(L, rng), users, CELLFREE)


def colocated_topology(L, user_positions):
    """All ``L`` antennas at the disk centre, users where given."""
    if L < 1:
        raise EmptyInputError("need at least one antenna")
    return Topology(np.zeros((L, 2)), user_positions, COLOCATED)


def pairwise_distances(topology):
    """Euclidean antenna-to-user distances, shape ``(L, K)``."""
    diff = topology.antenna_positions[:, None, :] - topology.user_positions[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def write_topology_csv(topology, path):
    """Write ``role,index,x,y`` rows; 17 significant digits round-trip exactly."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["role", "index", "x", "y"])
        for role, pts in (("antenna", topology.antenna_positions),
                          ("user", topology.user_positions)):
            for i, (x, y) in enumerate(pts):
                writer.writerow([role, i, f"{x:.17g}", f"{y:.17g}"])


def read_topology_csv(path, mode=None):
    """Inverse of :func:`write_topology_csv`.

    The mode is inferred (co-located iff every antenna is at the origin)
    unless given explicitly.
    """
    rows = {"antenna": {}, "user": {}}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            role = row["role"]
            if role not in rows:
                raise ValueError(f"unknown role {role!r}")
            rows[role][int(row["index"])] = (float(row["x"]), float(row["y"]))
    ant = np.array([rows["antenna"][i] for i in sorted(rows["antenna"])]).reshape(-1, 2)
    usr = np.array([rows["user"][i] for i in sorted(rows["user"])]).reshape(-1, 2)
    if mode is None:
        mode = COLOCATED if ant.size and np.all(ant == 0.0) else CELLFREE
    return Topology(ant, usr, mode)
