"""Periodic 2D grids and spinor fields."""

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid2:
    """Periodic rectangle [-L1/2, L1/2) x [-L2/2, L2/2) with N1 x N2 points."""

    L: tuple
    N: tuple

    def __post_init__(self):
        if len(self.L) != 2 or len(self.N) != 2:
            raise PreconditionError("Grid2 needs two lengths and two sizes")
        if not all(_is_pow2(int(n)) for n in self.N):
            raise PreconditionError(f"grid sizes must be powers of two, got {self.N}")
        if not all(l > 0 for l in self.L):
            raise PreconditionError("box lengths must be positive")

    @property
    def dx(self):
        return (self.L[0] / self.N[0], self.L[1] / self.N[1])

    @property
    def cell(self):
        return self.dx[0] * self.dx[1]

    def axes(self):
        return tuple(-l / 2 + np.arange(n) * (l / n) for l, n in zip(self.L, self.N))

    def mesh(self):
        x1, x2 = self.axes()
        return np.meshgrid(x1, x2, indexing="ij")

    def wavenumbers(self):
        k = [2 * np.pi * np.fft.fftfreq(n, d=l / n) for l, n in zip(self.L, self.N)]
        return np.meshgrid(k[0], k[1], indexing="ij")

    def displacement(self, center):
        """Minimum-image displacement x - center on the torus."""
        X1, X2 = self.mesh()
        out = []
        for X, c, l in ((X1, center[0], self.L[0]), (X2, center[1], self.L[1])):
            d = X - c
            out.append(d - l * np.round(d / l))
        return out

    def check_resolves(self, scale, points=8):
        return max(self.dx) <= scale / points * (1 + 1e-12)


@dataclass
class SpinorField:
    psi: np.ndarray
    grid: Grid2
    h: float

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != (2, *self.grid.N):
            raise PreconditionError(f"field shape {self.psi.shape} does not match grid {self.grid.N}")

    def norm(self):
        return float(np.sqrt(self.mass()))

    def mass(self):
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.cell)

    def inner(self, other):
        return complex(np.sum(np.conj(self.psi) * other.psi) * self.grid.cell)

    def copy(self):
        return SpinorField(self.psi.copy(), self.grid, self.h)
