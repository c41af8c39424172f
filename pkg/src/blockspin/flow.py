"""Running couplings and the quadratic-level block-spin step.

One renormalization step convolves the Gaussian defined by a translation-
invariant quadratic action with the block-spin Gaussian weight and rescales
parabolically.  At quadratic level the result is exact and closed: per
output momentum the new symbol is a Schur complement over the block fiber of
the input symbol plus the averaging coupling, composed with the momentum
rescaling (k0, kvec) -> (k0/L^2, kvec/L) and the L^(+-3/2) amplitudes.

The chemical-potential trace is quadratic-level bookkeeping: the step's
zero-momentum remainder feeds a fixed-point update mu_{n+1} = L^2 mu_n +
correction(mu_{n+1}).  It mirrors, but does not reproduce, the full flow,
whose correction includes non-Gaussian parts of the fluctuation integral.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .lattice_ops import SHARP, AveragingProfile, block_average, block_average_adjoint, operator_matrix, profile_axis_symbol
from .symbols import NumericalError
from .torus import Field, LatticeError, TorusShape, _symmetric_range

__all__ = [
    "FlowParams",
    "FlowStep",
    "flow_params_at",
    "max_steps",
    "admissible_window",
    "QuadraticAction",
    "block_spin_step",
    "block_spin_step_dense",
    "localize_quadratic",
    "apply_offset_kernel",
    "quadratic_mass_correction",
    "renormalize_mu",
    "run_flow",
]


@dataclass(frozen=True)
class FlowParams:
    """Running couplings at one scale."""

    n: int
    L: int
    mu: float
    v: float
    d: float
    a: float
    kappa: float
    kappa_prime: float
    eps: float
    mu0: float
    v0: float


def _block_prefactor(n: int, L: int) -> float:
    """(1 - L^-2) / (1 - L^-2n) evaluated through an integer ratio."""
    if n == 0:
        return 1.0
    num = L ** (2 * n - 2) * (L * L - 1)
    den = L ** (2 * n) - 1
    return num / den


def max_steps(v0: float, L: int) -> int:
    """Largest admissible scale index: floor((2/5) log(1/v0) / log L)."""
    return int(math.floor(0.4 * math.log(1.0 / v0) / math.log(L)))


def admissible_window(mu0: float, v0: float, mu_star: float = 0.0) -> tuple[float, float]:
    """(lower, upper) admissible bounds for the initial chemical potential."""
    return (mu_star + v0**1.25, v0**0.9)


def flow_params_at(n: int, mu0: float, v0: float, L: int, eps: float = 0.01,
                   d_schedule=None, mu_override: float | None = None) -> FlowParams:
    """Running couplings at scale n from the closed-form leading flow.

    mu_n = L^(2n) mu0 (or the supplied override from a renormalized trace),
    v_n = v0 / L^n, the block prefactor from its closed form, and the field
    radii L^(3n/4) v0^(-1/3+eps) and L^(3n/8) v0^(-1/3+eps).  Initial data
    outside the admissible window only warns.
    """
    if n < 0:
        raise LatticeError("scale index must be nonnegative")
    lo, hi = admissible_window(mu0, v0)
    if not (lo < mu0 < hi):
        warnings.warn(f"initial chemical potential {mu0:.3g} outside the admissible window ({lo:.3g}, {hi:.3g})")
    if n > max_steps(v0, L):
        warnings.warn(f"scale {n} beyond the admissible number of steps {max_steps(v0, L)}")
    mu = float(mu_override) if mu_override is not None else float(L ** (2 * n)) * mu0
    d = 1.0 if d_schedule is None else float(d_schedule(n))
    radius_base = v0 ** (-1.0 / 3.0 + eps)
    return FlowParams(
        n=n,
        L=L,
        mu=mu,
        v=v0 / float(L**n),
        d=d,
        a=_block_prefactor(n, L),
        kappa=float(L) ** (0.75 * n) * radius_base,
        kappa_prime=float(L) ** (0.375 * n) * radius_base,
        eps=eps,
        mu0=mu0,
        v0=v0,
    )


# ---------------------------------------------------------------------------
# quadratic actions as unit-lattice symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticAction:
    """Translation-invariant quadratic form on the unit torus.

    symbol_grid holds the kernel's symbol over the dual lattice in FFT index
    order (translation invariance is built in by the representation).
    """

    extents: tuple[int, int, int, int]
    symbol_grid: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        grid = np.asarray(self.symbol_grid, dtype=complex)
        if grid.shape != tuple(self.extents):
            raise LatticeError(f"symbol grid shaped {grid.shape}, extents {self.extents}")
        object.__setattr__(self, "symbol_grid", grid)
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))

    @classmethod
    def from_heat_minus_mu(cls, extents, mu: float, d: float = 1.0) -> "QuadraticAction":
        """Unit-lattice heat symbol minus a mass term."""
        axes = [2.0 * np.pi * np.arange(N) / N for N in extents]
        k0, k1, k2, k3 = np.meshgrid(*axes, indexing="ij")
        grid = -d * (np.exp(1j * k0) - 1.0)
        for kk in (k1, k2, k3):
            grid = grid + (2.0 - 2.0 * np.cos(kk))
        return cls(tuple(extents), grid - mu, provenance=f"heat-mu (mu={mu}, d={d})")

    def mass(self) -> complex:
        """Negative of the zero-momentum symbol value."""
        return -complex(self.symbol_grid[(0,) * len(self.extents)])


def _block_counts(L: int) -> tuple[int, int, int, int]:
    return (L * L, L, L, L)


def _profile_grid(extents, L: int, profile: AveragingProfile) -> np.ndarray:
    """Block-averaging transform over the full input mode grid."""
    out = np.ones(tuple(extents))
    for axis, (N, blen) in enumerate(zip(extents, _block_counts(L))):
        theta = 2.0 * np.pi * np.arange(N) / N
        fac = profile_axis_symbol(theta, blen, profile.exponent)
        shape_vec = [1, 1, 1, 1]
        shape_vec[axis] = N
        out = out * fac.reshape(shape_vec)
    return out


def _fiberize(grid: np.ndarray, extents, L: int) -> np.ndarray:
    """(coarse sites..., fiber) view of an input-grid array."""
    bt, bx = L * L, L
    Ntp = extents[0] // bt
    N1, N2, N3 = extents[1] // bx, extents[2] // bx, extents[3] // bx
    a = grid.reshape(bt, Ntp, bx, N1, bx, N2, bx, N3)
    a = a.transpose(1, 3, 5, 7, 0, 2, 4, 6)
    return a.reshape(Ntp, N1, N2, N3, bt * bx * bx * bx)


def block_spin_step(action: QuadraticAction, L: int, profile: AveragingProfile = SHARP) -> QuadraticAction:
    """One exact quadratic-level block-spin step.

    Per output momentum the fiber sum T = sum_m qhat(K+m)^2 / symbol(K+m)
    yields the new symbol L^2 / (L^2 + T); an infinite T (the input symbol
    vanishing on the fiber with live averaging weight) is the massless limit
    and maps to 0.  A vanishing input symbol where the averaging weight also
    vanishes makes the Gaussian degenerate and is reported.
    """
    Nt = action.extents[0]
    if Nt % (L * L) != 0 or any(e % L != 0 for e in action.extents[1:]):
        raise LatticeError(f"block step needs L^2 | Nt and L | Nx, got {action.extents}, L={L}")
    q = _profile_grid(action.extents, L, profile)
    q_f = _fiberize(q, action.extents, L)
    a_f = _fiberize(action.symbol_grid, action.extents, L)
    zero = a_f == 0.0
    bad = zero & (np.abs(q_f) < 1e-14)
    if np.any(bad):
        idx = np.argwhere(bad.any(axis=-1))[0]
        raise NumericalError(f"degenerate fiber at output momentum index {tuple(int(i) for i in idx)}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(zero, 0.0, q_f * q_f / np.where(zero, 1.0, a_f))
    T = terms.sum(axis=-1)
    has_pole = zero.any(axis=-1)
    Lsq = float(L * L)
    denom = Lsq + T
    if np.any(np.abs(denom[~has_pole]) < 1e-12):
        idx = np.argwhere((np.abs(denom) < 1e-12) & ~has_pole)[0]
        raise NumericalError(f"degenerate fiber at output momentum index {tuple(int(i) for i in idx)}")
    out = np.where(has_pole, 0.0, Lsq / np.where(has_pole, 1.0, denom))
    new_extents = (Nt // (L * L),) + tuple(e // L for e in action.extents[1:])
    return QuadraticAction(new_extents, out, provenance=f"step({action.provenance})")


def block_spin_step_dense(action: QuadraticAction, L: int, profile: AveragingProfile = SHARP,
                          max_sites: int = 4096) -> QuadraticAction:
    """Oracle: the same step through dense Gaussian (Schur-complement) algebra.

    Builds the dense input form, the dense averaging matrices, and the exact
    convolution output (1/L^2) I - (1/L^4) Q G^{-1} Q* with
    G = input + (1/L^2) Q* Q, then reads the output symbol off the first row.
    """
    extents = action.extents
    sites = int(np.prod(extents))
    if sites > max_sites:
        raise LatticeError(f"dense oracle capped at {max_sites} sites")
    kernel = np.fft.fftn(action.symbol_grid) / sites  # A[x, y] = K(y - x)
    A = np.empty((sites, sites), dtype=complex)
    for x in range(sites):
        shift = np.unravel_index(x, extents)
        A[x, :] = np.roll(kernel, shift, axis=(0, 1, 2, 3)).reshape(-1)
    shape0 = TorusShape(0, L, extents[0], extents[1])
    Q = operator_matrix(lambda f: block_average(f, profile), shape0, "unit", "coarse", max_sites=max_sites)
    Qstar = operator_matrix(lambda f: block_average_adjoint(f, profile), shape0, "coarse", "unit", max_sites=max_sites)
    Lsq = float(L * L)
    G = A + Qstar @ Q / Lsq
    coarse_sites = Q.shape[0]
    out_op = np.eye(coarse_sites) / Lsq - Q @ np.linalg.solve(G, Qstar) / Lsq**2
    new_extents = (extents[0] // (L * L), extents[1] // L, extents[2] // L, extents[3] // L)
    row0 = out_op[0, :].reshape(new_extents)
    symbol = np.fft.ifftn(row0) * coarse_sites * Lsq
    return QuadraticAction(new_extents, symbol, provenance=f"dense-step({action.provenance})")


# ---------------------------------------------------------------------------
# localization: constant part plus derivative kernels
# ---------------------------------------------------------------------------

def localize_quadratic(action: QuadraticAction, tol: float = 1e-10):
    """Split the quadratic kernel into a local mass and derivative parts.

    For any translation-invariant kernel K the form <psi_star, K psi>_0
    equals scalar * <psi_star, psi>_0 plus sum_axis <psi_star, K_axis
    (forward-difference psi)>_0, by telescoping each kernel displacement
    along a fixed axis-ordered lattice path.  Returns (scalar, kernels)
    with kernels[axis] a dict offset -> coefficient.
    """
    grid = action.symbol_grid
    scalar_c = complex(grid[(0,) * grid.ndim])
    # symbol(k) = sum_z K(z) exp(+i k z), so the kernel is the forward transform
    kernel = np.fft.fftn(grid) / grid.size
    extents = action.extents
    reps = [np.asarray(_symmetric_range(N)) for N in extents]
    deriv: list[dict] = [{}, {}, {}, {}]
    it = np.nditer(kernel, flags=["multi_index"])
    for val in it:
        v = complex(val)
        if abs(v) < 1e-16:
            continue
        z = tuple(int(reps[a][it.multi_index[a]]) for a in range(4))
        w = [0, 0, 0, 0]
        for axis in range(4):
            s = z[axis]
            if s > 0:
                for j in range(s):
                    off = tuple(w[a] + (j if a == axis else 0) for a in range(4))
                    deriv[axis][off] = deriv[axis].get(off, 0.0) + v
            elif s < 0:
                for j in range(1, -s + 1):
                    off = tuple(w[a] - (j if a == axis else 0) for a in range(4))
                    deriv[axis][off] = deriv[axis].get(off, 0.0) - v
            w[axis] += s
    kernels = [{k: c for k, c in d.items() if abs(c) > 1e-16} for d in deriv]
    if abs(scalar_c.imag) > tol * max(1.0, abs(scalar_c)):
        warnings.warn(f"localized mass has imaginary part {scalar_c.imag:.3e}")
    return scalar_c.real, kernels


def apply_offset_kernel(kern: dict, f: Field) -> Field:
    """(K f)(x) = sum_z K(z) f(x + z) for a sparse offset kernel."""
    out = np.zeros_like(f.values)
    for off, c in kern.items():
        out += c * np.roll(f.values, tuple(-o for o in off), axis=(0, 1, 2, 3))
    return f.with_values(out)


def quadratic_action_form(action: QuadraticAction, psi_star: Field, psi: Field) -> complex:
    """<psi_star, K psi>_0 through the symbol grid."""
    c_star = np.fft.fftn(psi_star.values) / psi_star.sites
    c_plain = np.fft.fftn(psi.values) / psi.sites
    neg = c_star
    for axis in range(4):
        neg = np.roll(np.flip(neg, axis=axis), 1, axis=axis)
    return complex(psi.sites * np.sum(neg * action.symbol_grid * c_plain))


# ---------------------------------------------------------------------------
# chemical-potential renormalization
# ---------------------------------------------------------------------------

def quadratic_mass_correction(mu_in: float, L: int, extents, d: float = 1.0,
                              profile: AveragingProfile = SHARP) -> float:
    """Zero-momentum remainder of one step beyond the naive L^2 mass scaling.

    Runs the quadratic step on the heat-minus-mass input and localizes the
    output; the returned value is (output mass) - L^2 * (input mass).
    """
    stepped = block_spin_step(QuadraticAction.from_heat_minus_mu(extents, mu_in, d), L, profile)
    out_mass = -stepped.symbol_grid[(0,) * 4].real
    return float(out_mass - L * L * mu_in)


def renormalize_mu(flow: FlowParams, correction, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Self-consistent next chemical potential: fixed point of
    mu -> L^2 * flow.mu + correction(mu).

    The correction map's contraction property is estimated by sampling a
    difference quotient near L^2 * flow.mu before iterating.
    """
    Lsq = float(flow.L * flow.L)
    base = Lsq * flow.mu
    if base == 0.0:
        return 0.0
    h = 0.05 * base
    lip = abs(correction(base + h) - correction(base - h)) / (2.0 * h)
    if lip >= 1.0:
        raise NumericalError(f"chemical-potential correction is not a contraction (estimate {lip:.3f})")
    mu = base
    for _ in range(max_iter):
        nxt = base + correction(mu)
        if abs(nxt - mu) <= tol * max(1.0, abs(nxt)):
            return float(nxt)
        mu = nxt
    raise NumericalError("chemical-potential fixed point did not converge")


# ---------------------------------------------------------------------------
# the assembled flow
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowStep:
    params: FlowParams
    well_radius: float
    well_depth_per_site: float
    classifier: str


def _classify_step(params: FlowParams, stop_mu: float) -> str:
    if params.d > 10.0:
        return "elliptic"
    if params.mu < stop_mu:
        return "parabolic"
    return "transitional"


def run_flow(mu0: float, v0: float, L: int, shape: TorusShape, steps: int | None = None,
             stop_mu: float = 0.5, eps: float = 0.01, renormalize: bool = True,
             profile: AveragingProfile = SHARP, d_schedule=None) -> list[FlowStep]:
    """Trace the running couplings across scales.

    Halts after floor((2/5) log(1/v0)/log L) steps or once the chemical
    potential reaches ``stop_mu``, whichever comes first.  With
    ``renormalize`` the trace uses the quadratic-level fixed point per step
    (the trial's pull-back mu/L^2 is the step input); otherwise the closed
    form L^(2n) mu0.  The per-step quadratic correction runs on the supplied
    desk-scale torus.
    """
    from .action import well_geometry

    n_last = max_steps(v0, L)
    if steps is not None:
        n_last = min(n_last, steps - 1)
    extents = shape.unit_extents
    trace: list[FlowStep] = []
    mu_running = mu0
    for n in range(n_last + 1):
        params = flow_params_at(
            n, mu0, v0, L, eps=eps, d_schedule=d_schedule,
            mu_override=mu_running if renormalize else None,
        )
        well = well_geometry(params, shape, per_site=True)
        trace.append(FlowStep(params, well.radius, well.depth, _classify_step(params, stop_mu)))
        if params.mu >= stop_mu:
            break
        if n < n_last and renormalize:
            corr = lambda m, _d=params.d: quadratic_mass_correction(m / (L * L), L, extents, d=_d, profile=profile)
            mu_running = renormalize_mu(params, corr)
        elif n < n_last:
            mu_running = L * L * mu_running
    return trace
