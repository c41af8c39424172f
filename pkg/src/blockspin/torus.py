"""Discrete torus geometry, complex lattice fields, inner products, dual lattices.

Three lattice levels share one geometry record:

* ``unit``   -- the Nt x Nx^3 torus with spacing 1 on every axis,
* ``fine``   -- the same physical torus refined to spacing L^(-2n) in time
  and L^(-n) in space (Nt*L^(2n) x (Nx*L^n)^3 sites),
* ``coarse`` -- the sublattice of unit points at stride (L^2, L, L, L).

Axis order everywhere is (t, x, y, z), row major.  Inner products are
bilinear (no complex conjugation) with level weights 1, L^(-5n) and L^5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: fields on the fine lattice are kept below this many sites; momentum-space
#: work never materializes fine fields and is not subject to the cap.
FINE_SITE_CAP = 1_200_000

LEVELS = ("unit", "fine", "coarse")


class LatticeError(ValueError):
    """Invalid geometry, level mismatch, or divisibility violation."""


@dataclass(frozen=True)
class TorusShape:
    """Geometry of the unit torus and its fine companion at scale ``n``.

    Parameters
    ----------
    n : scale index (>= 0)
    L : block factor, odd and >= 3
    Nt, Nx : unit-torus extents (sites) in time / per spatial axis
    """

    n: int
    L: int
    Nt: int
    Nx: int

    def __post_init__(self):
        if self.L % 2 == 0 or self.L < 3:
            raise LatticeError(f"block factor L must be odd and >= 3, got {self.L}")
        if self.n < 0:
            raise LatticeError(f"scale index must be nonnegative, got {self.n}")
        if self.Nt < 1 or self.Nx < 1:
            raise LatticeError("extents must be positive")

    # -- integer refinement factors (exact) -----------------------------
    @property
    def mt(self) -> int:
        """Temporal refinement factor L^(2n)."""
        return self.L ** (2 * self.n)

    @property
    def mx(self) -> int:
        """Spatial refinement factor L^n."""
        return self.L**self.n

    @property
    def eps_t(self) -> float:
        return 1.0 / self.mt

    @property
    def eps_x(self) -> float:
        return 1.0 / self.mx

    # -- extents ---------------------------------------------------------
    @property
    def unit_extents(self) -> tuple[int, int, int, int]:
        return (self.Nt, self.Nx, self.Nx, self.Nx)

    @property
    def fine_extents(self) -> tuple[int, int, int, int]:
        return (self.Nt * self.mt, self.Nx * self.mx, self.Nx * self.mx, self.Nx * self.mx)

    @property
    def coarse_extents(self) -> tuple[int, int, int, int]:
        if not self.can_block_step:
            raise LatticeError(
                f"block step needs L^2 | Nt and L | Nx, got Nt={self.Nt}, Nx={self.Nx}, L={self.L}"
            )
        Lsq = self.L * self.L
        return (self.Nt // Lsq, self.Nx // self.L, self.Nx // self.L, self.Nx // self.L)

    @property
    def can_block_step(self) -> bool:
        return self.Nt % (self.L * self.L) == 0 and self.Nx % self.L == 0

    def extents(self, level: str) -> tuple[int, int, int, int]:
        if level == "unit":
            return self.unit_extents
        if level == "fine":
            return self.fine_extents
        if level == "coarse":
            return self.coarse_extents
        raise LatticeError(f"unknown level {level!r}")

    def spacings(self, level: str) -> tuple[float, float, float, float]:
        """Lattice spacing per axis at the given level (physical units)."""
        if level == "unit":
            return (1.0, 1.0, 1.0, 1.0)
        if level == "fine":
            return (self.eps_t, self.eps_x, self.eps_x, self.eps_x)
        if level == "coarse":
            Lf = float(self.L)
            return (Lf * Lf, Lf, Lf, Lf)
        raise LatticeError(f"unknown level {level!r}")

    def sites(self, level: str) -> int:
        return int(np.prod(self.extents(level)))

    def weight(self, level: str) -> float:
        """Bilinear inner-product weight for this level."""
        if level == "unit":
            return 1.0
        if level == "fine":
            return 1.0 / float(self.mt * self.mx**3)
        if level == "coarse":
            return float(self.L**5)
        raise LatticeError(f"unknown level {level!r}")

    def next_scale(self) -> "TorusShape":
        """Shape one block-spin step up: coarse extents become the new unit."""
        ce = self.coarse_extents
        return TorusShape(self.n + 1, self.L, ce[0], ce[1])


def make_shape(n: int, L: int, Nt: int, Nx: int) -> TorusShape:
    """Validated geometry constructor."""
    return TorusShape(n=n, L=L, Nt=Nt, Nx=Nx)


@dataclass(frozen=True)
class Momentum:
    """Dual-lattice momentum, stored as integer mode numbers.

    Radian components are ``2*pi*mode/extent`` per axis measured against
    unit-lattice coordinates, reduced to the symmetric fundamental cell
    ``(-pi/spacing, pi/spacing]`` of the owning level.
    """

    modes: tuple[int, int, int, int]
    shape: TorusShape
    level: str = "unit"

    @property
    def radians(self) -> np.ndarray:
        base = self.shape.unit_extents
        return 2.0 * np.pi * np.asarray(self.modes, dtype=float) / np.asarray(base, dtype=float)

    @property
    def k0(self) -> float:
        return float(self.radians[0])

    @property
    def kvec(self) -> np.ndarray:
        return self.radians[1:]


def _symmetric_range(N: int) -> np.ndarray:
    """Mode numbers in the symmetric window (-N/2, N/2]."""
    m = np.arange(N)
    return np.where(m > N // 2, m - N, m)


def dual_modes(shape: TorusShape, level: str) -> np.ndarray:
    """All dual-lattice mode 4-tuples for the level, shape (sites, 4), int.

    Modes are in unit-extent units: radians = 2*pi*mode/unit_extent.  The
    fine level ranges over the refined extents; the coarse level over the
    coarse extents (so its radian cell is (-pi/stride, pi/stride]).
    """
    ext = shape.extents(level)
    ranges = [_symmetric_range(e) for e in ext]
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1).astype(int)


def dual_lattice(shape: TorusShape, level: str) -> list[Momentum]:
    """One Momentum per site of the level's lattice; includes 0; closed under
    negation up to the torus identification."""
    return [Momentum(tuple(int(v) for v in row), shape, level) for row in dual_modes(shape, level)]


def radians_for_modes(shape: TorusShape, modes: np.ndarray) -> np.ndarray:
    """Convert integer mode rows (…,4) to radians against unit extents."""
    base = np.asarray(shape.unit_extents, dtype=float)
    return 2.0 * np.pi * np.asarray(modes, dtype=float) / base


@dataclass(frozen=True)
class Field:
    """Complex-valued field on one level of the torus.  Values are frozen."""

    shape: TorusShape
    level: str
    values: np.ndarray

    def __post_init__(self):
        ext = self.shape.extents(self.level)
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != ext:
            raise LatticeError(f"field values shaped {vals.shape}, lattice needs {ext}")
        if self.level == "fine" and vals.size > FINE_SITE_CAP:
            raise LatticeError(f"fine lattice of {vals.size} sites exceeds the desk cap {FINE_SITE_CAP}")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def sites(self) -> int:
        return self.values.size

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.shape, self.level, values)

    # -- constructors ----------------------------------------------------
    @classmethod
    def zeros(cls, shape: TorusShape, level: str) -> "Field":
        return cls(shape, level, np.zeros(shape.extents(level), dtype=complex))

    @classmethod
    def constant(cls, shape: TorusShape, level: str, value: complex) -> "Field":
        return cls(shape, level, np.full(shape.extents(level), value, dtype=complex))

    @classmethod
    def random(cls, shape: TorusShape, level: str, rng: np.random.Generator, amplitude: float = 1.0) -> "Field":
        ext = shape.extents(level)
        vals = rng.standard_normal(ext) + 1j * rng.standard_normal(ext)
        return cls(shape, level, amplitude * vals / math.sqrt(2.0))

    @classmethod
    def plane_wave(cls, shape: TorusShape, level: str, modes) -> "Field":
        """exp(i k.x) with k the momentum of the given integer modes."""
        ext = shape.extents(level)
        phases = np.zeros(ext, dtype=float)
        for axis, (m, N) in enumerate(zip(modes, ext)):
            idx = np.arange(N, dtype=float)
            ax_phase = 2.0 * np.pi * m * idx / N
            shape_vec = [1, 1, 1, 1]
            shape_vec[axis] = N
            phases = phases + ax_phase.reshape(shape_vec)
        return cls(shape, level, np.exp(1j * phases))


@dataclass(frozen=True)
class FieldPair:
    """A pair (starred, plain) of independent fields on the same lattice.

    The starred member is *not* constrained to be the complex conjugate of
    the plain one.
    """

    starred: Field
    plain: Field

    def __post_init__(self):
        if self.starred.shape != self.plain.shape or self.starred.level != self.plain.level:
            raise LatticeError("field pair members must share shape and level")

    @property
    def shape(self) -> TorusShape:
        return self.plain.shape

    @property
    def level(self) -> str:
        return self.plain.level

    @classmethod
    def zeros(cls, shape: TorusShape, level: str) -> "FieldPair":
        return cls(Field.zeros(shape, level), Field.zeros(shape, level))

    @classmethod
    def random(cls, shape: TorusShape, level: str, rng: np.random.Generator, amplitude: float = 1.0) -> "FieldPair":
        return cls(
            Field.random(shape, level, rng, amplitude),
            Field.random(shape, level, rng, amplitude),
        )

    @classmethod
    def conjugate_pair(cls, plain: Field) -> "FieldPair":
        """The physical slice: starred = complex conjugate of plain."""
        return cls(plain.with_values(np.conj(plain.values)), plain)

    def scaled(self, factor: complex) -> "FieldPair":
        return FieldPair(
            self.starred.with_values(factor * self.starred.values),
            self.plain.with_values(factor * self.plain.values),
        )


def inner_product(a: Field, b: Field) -> complex:
    """Bilinear pairing sum(a*b) with the level weight (1, L^(-5n), or L^5)."""
    if a.shape != b.shape or a.level != b.level:
        raise LatticeError("inner product needs matching shape and level")
    return a.shape.weight(a.level) * complex(np.sum(a.values * b.values))


# ---------------------------------------------------------------------------
# discrete Fourier transform helpers (coefficient convention)
# ---------------------------------------------------------------------------

def field_modes(f: Field) -> np.ndarray:
    """Mode coefficients c with f(x) = sum_m c_m exp(i k_m . x).

    Returned in numpy FFT index order per axis.
    """
    return np.fft.fftn(f.values) / f.sites


def modes_to_field(shape: TorusShape, level: str, coeffs: np.ndarray) -> Field:
    """Inverse of :func:`field_modes`."""
    vals = np.fft.ifftn(coeffs) * coeffs.size
    return Field(shape, level, vals)


def fft_mode_grid(extents: tuple[int, int, int, int]) -> np.ndarray:
    """Integer mode 4-vectors in FFT order, shape extents + (4,).

    Position m on an axis of extent N carries the symmetric representative
    in (-N/2, N/2].
    """
    axes = [_symmetric_range(N) for N in extents]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1)


# ---------------------------------------------------------------------------
# fine-lattice fiber structure over unit momenta
# ---------------------------------------------------------------------------

def fiber_split(coeffs: np.ndarray, shape: TorusShape) -> np.ndarray:
    """Reorganize fine-mode coefficients into unit-momentum fibers.

    Fine mode m decomposes per axis as m = j*unit_extent + i with unit mode i
    and block index j.  Returns an array of shape (unit sites, block count)
    where the unit index is row-major over unit modes in FFT order and the
    block index is row-major over (j_t, j_x, j_y, j_z).
    """
    Nt, Nx, _, _ = shape.unit_extents
    mt, mx = shape.mt, shape.mx
    a = coeffs.reshape(mt, Nt, mx, Nx, mx, Nx, mx, Nx)
    a = a.transpose(1, 3, 5, 7, 0, 2, 4, 6)
    return a.reshape(Nt * Nx * Nx * Nx, mt * mx * mx * mx)


def fiber_merge(fibers: np.ndarray, shape: TorusShape) -> np.ndarray:
    """Inverse of :func:`fiber_split`."""
    Nt, Nx, _, _ = shape.unit_extents
    mt, mx = shape.mt, shape.mx
    a = fibers.reshape(Nt, Nx, Nx, Nx, mt, mx, mx, mx)
    a = a.transpose(4, 0, 5, 1, 6, 2, 7, 3)
    return a.reshape(shape.fine_extents)


def fiber_momenta(shape: TorusShape) -> tuple[np.ndarray, np.ndarray]:
    """(unit momenta, block momenta) in radians.

    Unit momenta: (unit sites, 4), FFT order matching :func:`fiber_split`
    rows.  Block momenta: (L^(5n), 4), row-major over block indices; entry j
    is 2*pi*j per axis scaled to unit coordinates (temporal step 2*pi up to
    2*pi*(L^(2n)-1), reduced to the fine symmetric cell on request).
    """
    unit_modes = fft_mode_grid(shape.unit_extents).reshape(-1, 4)
    k_unit = radians_for_modes(shape, unit_modes)
    mt, mx = shape.mt, shape.mx
    jt = _symmetric_range(mt)
    jx = _symmetric_range(mx)
    grids = np.meshgrid(jt, jx, jx, jx, indexing="ij")
    block = np.stack([g.ravel() for g in grids], axis=-1).astype(float)
    return k_unit, 2.0 * np.pi * block


def block_momenta(shape: TorusShape) -> np.ndarray:
    """The L^(5n) block momenta in radians (symmetric representatives)."""
    _, ell = fiber_momenta(shape)
    return ell
