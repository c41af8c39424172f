"""Direct-space lattice operators.

Forward/backward differences, the spatial Laplacian and the heat operator on
any level; block averaging from the unit torus to its coarse sublattice;
fine-to-unit box averaging; the bilinear adjoints of both averages; and the
parabolic scaling maps between consecutive scales.

Averaging kernels are separable products of one-dimensional box profiles.
``exponent=1`` is the sharp box indicator; ``exponent=5`` is the box
self-convolved four times (support five blocks wide per axis).  All profiles
are even and normalized to unit sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .torus import Field, LatticeError, TorusShape

__all__ = [
    "AveragingProfile",
    "SHARP",
    "SMOOTH",
    "forward_difference",
    "backward_difference",
    "laplacian",
    "apply_heat",
    "apply_heat_transpose",
    "block_average",
    "block_average_adjoint",
    "fine_average",
    "fine_average_adjoint",
    "fine_projector",
    "to_next_scale",
    "from_next_scale",
    "operator_matrix",
    "commutator_average_norm",
    "profile_axis_symbol",
    "scale_interaction_kernel",
    "local_coupling",
]


@dataclass(frozen=True)
class AveragingProfile:
    """Box profile used by the averaging operators.

    exponent: number of box factors in the self-convolution (>= 1).
    """

    exponent: int = 1

    def __post_init__(self):
        if self.exponent < 1:
            raise LatticeError(f"profile exponent must be >= 1, got {self.exponent}")


SHARP = AveragingProfile(1)
SMOOTH = AveragingProfile(5)


@lru_cache(maxsize=None)
def _axis_weights(box_len: int, exponent: int) -> np.ndarray:
    """Normalized weights of the exponent-fold self-convolved box."""
    box = np.ones(box_len, dtype=np.int64)
    w = box
    for _ in range(exponent - 1):
        w = np.convolve(w, box)
    w = w.astype(float)
    w /= w.sum()
    w /= w.sum()  # squeeze the normalization to one ulp
    return w


def _axis_offsets(box_len: int, exponent: int) -> np.ndarray:
    support = exponent * box_len - (exponent - 1)  # odd whenever box_len is odd
    half = (support - 1) // 2
    return np.arange(-half, half + 1)


def _apply_profile_axis(values: np.ndarray, axis: int, box_len: int, exponent: int, sign: int) -> np.ndarray:
    """sum_j w_j * values(x + sign*off_j) along one axis, periodic."""
    if box_len == 1:
        return values
    w = _axis_weights(box_len, exponent)
    offs = _axis_offsets(box_len, exponent)
    out = np.zeros_like(values)
    for wj, oj in zip(w, offs):
        out += wj * np.roll(values, -sign * int(oj), axis=axis)
    return out


def _box_lengths(shape: TorusShape, which: str) -> tuple[int, int, int, int]:
    if which == "block":
        return (shape.L * shape.L, shape.L, shape.L, shape.L)
    if which == "fine":
        return (shape.mt, shape.mx, shape.mx, shape.mx)
    raise LatticeError(which)


# ---------------------------------------------------------------------------
# difference operators
# ---------------------------------------------------------------------------

def forward_difference(f: Field, axis: int) -> Field:
    """(f(x + e_axis * spacing) - f(x)) / spacing, periodic wrap."""
    if axis not in (0, 1, 2, 3):
        raise LatticeError(f"axis must be 0..3, got {axis}")
    eps = f.shape.spacings(f.level)[axis]
    vals = (np.roll(f.values, -1, axis=axis) - f.values) / eps
    return f.with_values(vals)


def backward_difference(f: Field, axis: int) -> Field:
    """(f(x) - f(x - e_axis * spacing)) / spacing, periodic wrap."""
    if axis not in (0, 1, 2, 3):
        raise LatticeError(f"axis must be 0..3, got {axis}")
    eps = f.shape.spacings(f.level)[axis]
    vals = (f.values - np.roll(f.values, 1, axis=axis)) / eps
    return f.with_values(vals)


def laplacian(f: Field) -> Field:
    """Spatial nearest-neighbor Laplacian (axes 1..3)."""
    eps = f.shape.spacings(f.level)[1]
    out = np.zeros_like(f.values)
    for axis in (1, 2, 3):
        out += np.roll(f.values, -1, axis=axis) + np.roll(f.values, 1, axis=axis) - 2.0 * f.values
    return f.with_values(out / (eps * eps))


def apply_heat(f: Field, d: float = 1.0) -> Field:
    """Heat operator: -d * (forward time difference) - Laplacian."""
    vals = -d * forward_difference(f, 0).values - laplacian(f).values
    return f.with_values(vals)


def apply_heat_transpose(f: Field, d: float = 1.0) -> Field:
    """Bilinear transpose of the heat operator: +d * (backward time difference) - Laplacian."""
    vals = d * backward_difference(f, 0).values - laplacian(f).values
    return f.with_values(vals)


# ---------------------------------------------------------------------------
# block averaging: unit -> coarse and back
# ---------------------------------------------------------------------------

def block_average(f: Field, profile: AveragingProfile = SHARP) -> Field:
    """Profile-weighted average over L^2 x L x L x L blocks centered at coarse points."""
    if f.level != "unit":
        raise LatticeError("block_average expects a unit-level field")
    shape = f.shape
    ce = shape.coarse_extents  # validates divisibility
    g = f.values
    for axis, blen in enumerate(_box_lengths(shape, "block")):
        g = _apply_profile_axis(g, axis, blen, profile.exponent, sign=+1)
    Lsq = shape.L * shape.L
    out = g[::Lsq, :: shape.L, :: shape.L, :: shape.L]
    assert out.shape == ce
    return Field(shape, "coarse", out)


def block_average_adjoint(theta: Field, profile: AveragingProfile = SHARP) -> Field:
    """Adjoint of :func:`block_average` for the pairing <theta, Q psi>_{-1} = <Q* theta, psi>_0."""
    if theta.level != "coarse":
        raise LatticeError("block_average_adjoint expects a coarse-level field")
    shape = theta.shape
    scat = np.zeros(shape.unit_extents, dtype=complex)
    Lsq = shape.L * shape.L
    scat[::Lsq, :: shape.L, :: shape.L, :: shape.L] = theta.values
    for axis, blen in enumerate(_box_lengths(shape, "block")):
        scat = _apply_profile_axis(scat, axis, blen, profile.exponent, sign=-1)
    return Field(shape, "unit", float(shape.L**5) * scat)


# ---------------------------------------------------------------------------
# fine averaging: fine -> unit and back
# ---------------------------------------------------------------------------

def fine_average(f: Field, profile: AveragingProfile = SHARP) -> Field:
    """Average of a fine field over the side-1 box centered at each unit point."""
    if f.level != "fine":
        raise LatticeError("fine_average expects a fine-level field")
    shape = f.shape
    g = f.values
    for axis, blen in enumerate(_box_lengths(shape, "fine")):
        g = _apply_profile_axis(g, axis, blen, profile.exponent, sign=+1)
    out = g[:: shape.mt, :: shape.mx, :: shape.mx, :: shape.mx]
    return Field(shape, "unit", out)


def fine_average_adjoint(psi: Field, profile: AveragingProfile = SHARP) -> Field:
    """Adjoint of :func:`fine_average` for <psi, Q f>_0 = <Q* psi, f>_n.

    With the sharp profile this is the piecewise-constant embedding.
    """
    if psi.level != "unit":
        raise LatticeError("fine_average_adjoint expects a unit-level field")
    shape = psi.shape
    scat = np.zeros(shape.fine_extents, dtype=complex)
    scat[:: shape.mt, :: shape.mx, :: shape.mx, :: shape.mx] = psi.values
    for axis, blen in enumerate(_box_lengths(shape, "fine")):
        scat = _apply_profile_axis(scat, axis, blen, profile.exponent, sign=-1)
    return Field(shape, "fine", float(shape.mt * shape.mx**3) * scat)


def fine_projector(f: Field, profile: AveragingProfile = SHARP) -> Field:
    """The composition adjoint(average(f)) on fine fields."""
    return fine_average_adjoint(fine_average(f, profile), profile)


# ---------------------------------------------------------------------------
# parabolic scaling maps between consecutive scales
# ---------------------------------------------------------------------------

def _amplitude(L: int) -> float:
    return math.sqrt(float(L) ** 3)


def to_next_scale(f: Field) -> Field:
    """Relabel a scale-n field as a scale-(n+1) field, amplitude * L^(3/2).

    coarse(n) -> unit(n+1); fine(n) -> fine(n+1).  Index arrays coincide; the
    map is the amplitude factor plus relabeling.
    """
    shape = f.shape
    nxt = shape.next_scale()
    amp = _amplitude(shape.L)
    if f.level == "coarse":
        return Field(nxt, "unit", amp * f.values)
    if f.level == "fine":
        return Field(nxt, "fine", amp * f.values)
    raise LatticeError("to_next_scale maps coarse or fine fields")


def from_next_scale(f: Field) -> Field:
    """Inverse of :func:`to_next_scale`: unit(n+1) -> coarse(n), fine(n+1) -> fine(n)."""
    shape = f.shape
    if shape.n < 1:
        raise LatticeError("already at scale 0")
    prev = TorusShape(shape.n - 1, shape.L, shape.Nt * shape.L * shape.L, shape.Nx * shape.L)
    amp = 1.0 / _amplitude(shape.L)
    if f.level == "unit":
        return Field(prev, "coarse", amp * f.values)
    if f.level == "fine":
        return Field(prev, "fine", amp * f.values)
    raise LatticeError("from_next_scale maps unit or fine fields")


# ---------------------------------------------------------------------------
# dense matrices for desk-scale oracles
# ---------------------------------------------------------------------------

def operator_matrix(apply_fn, shape: TorusShape, level_in: str, level_out: str, max_sites: int = 4096) -> np.ndarray:
    """Dense matrix of a linear operator by application to basis fields."""
    n_in = shape.sites(level_in)
    n_out = shape.sites(level_out)
    if max(n_in, n_out) > max_sites:
        raise LatticeError(f"dense oracle capped at {max_sites} sites")
    ext = shape.extents(level_in)
    cols = np.empty((n_out, n_in), dtype=complex)
    basis = np.zeros(ext, dtype=complex)
    flat = basis.reshape(-1)
    for j in range(n_in):
        flat[j] = 1.0
        cols[:, j] = apply_fn(Field(shape, level_in, basis)).values.reshape(-1)
        flat[j] = 0.0
    return cols


# ---------------------------------------------------------------------------
# profile symbols and the difference/averaging commutator
# ---------------------------------------------------------------------------

def profile_axis_symbol(theta, box_len: int, exponent: int = 1):
    """Fourier transform of the 1d box profile at angle ``theta`` per site.

    Equals sin(box_len*theta/2) / (box_len*sin(theta/2)) raised to the
    exponent, with the removable singularity at theta = 0 (mod 2*pi) handled
    by series expansion below 1e-6.
    """
    th = np.asarray(theta, dtype=float)
    if box_len == 1:
        return np.ones_like(th)
    # reduce to (-pi, pi]; box_len odd keeps the ratio 2*pi periodic with sign +1
    red = np.mod(th + np.pi, 2.0 * np.pi) - np.pi
    small = np.abs(red) < 1e-6
    safe = np.where(small, 1.0, red)
    ratio = np.sin(0.5 * box_len * safe) / (box_len * np.sin(0.5 * safe))
    series = 1.0 - (box_len * box_len - 1.0) * red * red / 24.0
    out = np.where(small, series, ratio)
    return out**exponent


def block_profile_symbol(k, shape: TorusShape, profile: AveragingProfile = SHARP):
    """Fourier transform of the unit-lattice block-averaging kernel at momentum k.

    k: radians, array shape (..., 4).
    """
    k = np.asarray(k, dtype=float)
    blens = _box_lengths(shape, "block")
    out = np.ones(k.shape[:-1])
    for axis in range(4):
        out = out * profile_axis_symbol(k[..., axis], blens[axis], profile.exponent)
    return out


def commutator_average_norm(shape: TorusShape, axis: int, profile: AveragingProfile = SHARP) -> float:
    """Momentum-grid estimate of the operator norm of [d_axis, block_average].

    The forward difference on the coarse lattice uses the block stride as its
    spacing.  Per coarse momentum the operator acts on the block fiber by the
    row vector c(k) = qhat(k) * (stride-difference symbol - unit-difference
    symbol); the reported norm is the max over coarse momenta of the fiber
    row norm.
    """
    from .torus import fft_mode_grid, radians_for_modes

    modes = fft_mode_grid(shape.unit_extents).reshape(-1, 4)
    k = radians_for_modes(shape, modes)
    stride = (shape.L * shape.L, shape.L, shape.L, shape.L)[axis]
    qhat = block_profile_symbol(k, shape, profile)
    ka = k[:, axis]
    diff_coarse = (np.exp(1j * ka * stride) - 1.0) / stride
    diff_unit = np.exp(1j * ka) - 1.0
    c = qhat * (diff_coarse - diff_unit)
    # group unit momenta into coarse fibers: coarse momentum = unit modes mod coarse extents
    ce = shape.coarse_extents
    keys = [tuple(int(m % e) for m, e in zip(row, ce)) for row in modes]
    sums: dict[tuple, float] = {}
    for key, val in zip(keys, np.abs(c) ** 2):
        sums[key] = sums.get(key, 0.0) + float(val)
    return math.sqrt(max(sums.values()))


# ---------------------------------------------------------------------------
# interaction-kernel rescaling
# ---------------------------------------------------------------------------

def scale_interaction_kernel(V, n: int):
    """Rescale a translation-invariant interaction kernel by n parabolic steps.

    The fine torus at scale n has the same index grid as the original unit
    torus, and the rescaling map is the index identity there, so the entries
    keep their index tuples and extents; each value is multiplied by
    L^(-n) * (L^(5n))^3 = L^(14n).  The induced local coupling of an
    on-diagonal kernel drops by L^(-n) per step.
    """
    from .norms import Kernel

    if n < 0:
        raise LatticeError("scale index must be nonnegative")
    if n == 0:
        return V
    L = V.block_factor
    if L is None:
        raise LatticeError("kernel carries no block factor; set block_factor to rescale")
    factor = float(L) ** (14 * n)
    entries = {key: factor * val for key, val in V.entries.items()}
    return Kernel(
        arity=V.arity,
        extents=V.extents,
        entries=entries,
        translation_invariant=V.translation_invariant,
        block_factor=L,
    )


def local_coupling(V, n: int) -> float:
    """Coupling constant induced by an on-diagonal kernel in the weighted quartic form."""
    L = V.block_factor
    if L is None:
        raise LatticeError("kernel carries no block factor")
    return float(np.real(V.diagonal_value())) * float(L) ** (-15 * n)
