"""Grids, Gaussian states and sampled wavefunctions shared by the kernel
quadrature paths and the numerical oracles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Grid unable to represent the requested state or operation."""


def _is_power_of_two(n):
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular grid, FFT convention (right endpoint excluded)."""

    x1: np.ndarray
    x2: np.ndarray

    @classmethod
    def from_extent(cls, n1, n2, extent1, extent2):
        """Symmetric grid on [-extent, extent) per axis with n points."""
        x1 = -extent1 + 2.0 * extent1 * np.arange(n1) / n1
        x2 = -extent2 + 2.0 * extent2 * np.arange(n2) / n2
        return cls(x1, x2)

    @property
    def shape(self):
        return (self.x1.size, self.x2.size)

    @property
    def spacing(self):
        return (float(self.x1[1] - self.x1[0]), float(self.x2[1] - self.x2[0]))

    def mesh(self):
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def same_extents(self, other, tol=1e-12):
        return (
            self.shape == other.shape
            and abs(self.x1[0] - other.x1[0]) < tol
            and abs(self.x2[0] - other.x2[0]) < tol
            and abs(self.x1[-1] - other.x1[-1]) < tol
            and abs(self.x2[-1] - other.x2[-1]) < tol
        )


@dataclass
class Wavefunction2D:
    """Complex field on a :class:`Grid2D` with its time stamp.

    Grid sizes must be powers of two (FFT-friendly, and the split-step
    oracle insists on it).  The discrete L2 norm at construction time is
    stored so norm drift can be tracked.
    """

    grid: Grid2D
    values: np.ndarray
    time: float
    norm0: float = field(default=None)

    def __post_init__(self):
        n1, n2 = self.grid.shape
        if not (_is_power_of_two(n1) and _is_power_of_two(n2)):
            raise GridError(f"grid sizes must be powers of two, got {n1}x{n2}")
        if self.values.shape != (n1, n2):
            raise GridError("value array does not match grid shape")
        if self.norm0 is None:
            self.norm0 = self.norm()

    def norm(self):
        h1, h2 = self.grid.spacing
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * h1 * h2))

    def boundary_fraction(self, cells=3):
        """Fraction of the squared norm within ``cells`` cells of the edge."""
        p = np.abs(self.values) ** 2
        total = float(np.sum(p))
        if total == 0.0:
            return 0.0
        inner = float(np.sum(p[cells:-cells, cells:-cells]))
        return (total - inner) / total

    def l2_distance(self, other, relative=True):
        h1, h2 = self.grid.spacing
        d = float(np.sqrt(np.sum(np.abs(self.values - other.values) ** 2) * h1 * h2))
        if relative:
            return d / other.norm()
        return d


@dataclass(frozen=True)
class GaussianState:
    """Normalized Gaussian wavepacket, axis-aligned in lab coordinates:

        psi(x) = prod_j (2 pi sigma_j^2)^(-1/4)
                 * exp(-(x_j - c_j)^2 / (4 sigma_j^2) + i p_j (x_j - c_j) / hbar)
    """

    center: tuple
    sigma: tuple
    momentum: tuple = (0.0, 0.0)
    hbar: float = 1.0

    def __post_init__(self):
        if min(self.sigma) <= 0:
            raise ValueError("Gaussian widths must be positive")

    def __call__(self, x1, x2):
        out = 1.0 + 0.0j
        for x, c, s, p in zip((x1, x2), self.center, self.sigma, self.momentum):
            x = np.asarray(x, dtype=float)
            out = out * (2 * np.pi * s * s) ** (-0.25) * np.exp(
                -((x - c) ** 2) / (4 * s * s) + 1j * p * (x - c) / self.hbar
            )
        return out

    def on_grid(self, grid, time=0.0):
        X1, X2 = grid.mesh()
        return Wavefunction2D(grid, self(X1, X2), time)


def write_snapshot(psi, csv_path, json_path, config_hash="", extra=None):
    """Snapshot export: CSV columns x1, x2, Re psi, Im psi plus a JSON
    sidecar with grid metadata, time stamp and norm.  Numeric CSV fields
    use 17 significant digits so doubles round-trip exactly."""
    X1, X2 = psi.grid.mesh()
    with open(csv_path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        fh.write("x1,x2,re_psi,im_psi\n")
        re = np.real(psi.values)
        im = np.imag(psi.values)
        for i in range(X1.shape[0]):
            for j in range(X1.shape[1]):
                fh.write(
                    f"{X1[i, j]:.17g},{X2[i, j]:.17g},{re[i, j]:.17g},{im[i, j]:.17g}\n"
                )
    meta = {
        "time": psi.time,
        "norm": psi.norm(),
        "shape": list(psi.grid.shape),
        "x1_range": [float(psi.grid.x1[0]), float(psi.grid.x1[-1])],
        "x2_range": [float(psi.grid.x2[0]), float(psi.grid.x2[-1])],
        "spacing": list(psi.grid.spacing),
        "config_hash": config_hash,
    }
    if extra:
        meta.update(extra)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
