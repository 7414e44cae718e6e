"""Direction grids: discretizations of the disk |kappa| <= kappa_max."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

POLAR = "PolarIsotropic"
CARTESIAN = "Cartesian"


@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """Nodes and area weights (in kappa units) of a direction grid.

    Polar grids order their nodes radius-major: node ``i * n_angular + j``
    sits at radius ``radii[i]`` and angle ``angles[j]``.
    """

    layout: str
    nodes: np.ndarray
    weights: np.ndarray
    kappa_max: float
    radii: np.ndarray | None = None
    radial_weights: np.ndarray | None = None
    angles: np.ndarray | None = None
    spacing: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or weights.shape != (nodes.shape[0],):
            raise ValueError("nodes must be (N, 2) and weights (N,)")
        norms = np.hypot(nodes[:, 0], nodes[:, 1])
        if np.any(norms <= 0) or np.any(norms >= 1) or np.any(norms > self.kappa_max * (1 + 1e-12)):
            raise ValueError("grid nodes must satisfy 0 < |kappa| <= kappa_max < 1")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def norms(self) -> np.ndarray:
        return np.hypot(self.nodes[:, 0], self.nodes[:, 1])

    @property
    def n_radial(self) -> int:
        return 0 if self.radii is None else self.radii.size

    @property
    def n_angular(self) -> int:
        return 0 if self.angles is None else self.angles.size

    @classmethod
    def polar(cls, n_radial: int = 96, n_angular: int = 256, kappa_max: float = 0.95):
        """Gauss-Legendre radii on (0, kappa_max] times uniform angles."""
        if n_radial < 1 or n_angular < 1:
            raise ValueError("n_radial and n_angular must be positive")
        if not 0 < kappa_max < 1:
            raise ValueError("kappa_max must lie in (0, 1)")
        x, w = np.polynomial.legendre.leggauss(n_radial)
        radii = 0.5 * kappa_max * (x + 1.0)
        rw = 0.5 * kappa_max * w
        angles = 2.0 * math.pi * np.arange(n_angular) / n_angular
        rr, aa = np.meshgrid(radii, angles, indexing="ij")
        nodes = np.stack([rr * np.cos(aa), rr * np.sin(aa)], axis=-1).reshape(-1, 2)
        weights = np.repeat(rw * radii * (2.0 * math.pi / n_angular), n_angular)
        return cls(POLAR, nodes, weights, kappa_max, radii=radii, radial_weights=rw,
                   angles=angles)

    @classmethod
    def cartesian(cls, spacing: float, kappa_max: float = 0.95, offset: float = 0.5,
                  square: bool = False):
        """Uniform lattice ``spacing * (n + offset)`` clipped to the disk.

        With ``square=True`` the lattice is clipped to the square
        ``max(|k1|, |k2|) <= kappa_max`` instead (all nodes must still lie
        inside the unit disk).  The origin is always dropped.
        """
        if spacing <= 0:
            raise ValueError("spacing must be positive")
        n = int(math.ceil(kappa_max / spacing)) + 1
        ticks = spacing * (np.arange(-n, n + 1) + offset)
        k1, k2 = np.meshgrid(ticks, ticks, indexing="ij")
        nodes = np.stack([k1.ravel(), k2.ravel()], axis=-1)
        tol = 1e-12 * spacing
        if square:
            keep = np.max(np.abs(nodes), axis=1) <= kappa_max + tol
            radius = float(np.max(np.hypot(nodes[keep, 0], nodes[keep, 1])))
        else:
            keep = np.hypot(nodes[:, 0], nodes[:, 1]) <= kappa_max + tol
            radius = kappa_max
        keep &= np.hypot(nodes[:, 0], nodes[:, 1]) > tol
        nodes = nodes[keep]
        weights = np.full(nodes.shape[0], spacing * spacing)
        return cls(CARTESIAN, nodes, weights, max(radius, float(np.max(np.hypot(*nodes.T)))),
                   spacing=spacing, meta={"offset": offset, "square": square})

    def angle_index(self) -> np.ndarray:
        """Map node index to (radial index, angular index) for polar grids."""
        if self.layout != POLAR:
            raise ValueError("angle_index is only defined on polar grids")
        idx = np.arange(self.size)
        return np.stack([idx // self.n_angular, idx % self.n_angular], axis=-1)

    def describe(self) -> dict:
        out = {"layout": self.layout, "nodes": int(self.size), "kappa_max": float(self.kappa_max)}
        if self.layout == POLAR:
            out.update(n_radial=self.n_radial, n_angular=self.n_angular)
        if self.spacing is not None:
            out["spacing"] = float(self.spacing)
        return out
