"""Momentum-space symbol algebra on the unit dual lattice.

Translation-invariant fine-lattice operators act diagonally on fine momenta
p = k + l, where k is a unit-lattice momentum and l runs over the L^(5n)
block momenta.  Box averaging couples each fiber through the rank-one matrix
u u^T built from the averaging-profile transform u(p), so composite unit
symbols reduce to finite fiber sums plus rank-one (or 2x2 Woodbury)
inversions.  Dense fiber inversion is kept as an oracle.

Two time-derivative modes are supported:

* ``discrete``  -- honest lattice difference symbols,
* ``continuum`` -- the continuum pretend: -i*d*k0 off a quadratic spatial
  part for the scalar heat symbol, and real +/- d*k0 off-diagonals for the
  2x2 well operator.

For the 2x2 well operator the discrete mode uses the *symmetrized*
difference symbols d*sin(eps*k0)/eps off-diagonal and an extra
(2d/eps)*sin^2(eps*k0/2) on the diagonal: that is the exact quadratic kernel
of the discrete action expanded around the well, and it reduces to the
continuum form as eps -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice_ops import SHARP, AveragingProfile, profile_axis_symbol
from .torus import LatticeError, TorusShape, block_momenta

__all__ = [
    "NumericalError",
    "averaging_symbol",
    "block_profile_symbol",
    "heat_symbol",
    "zero_field_symbol",
    "zero_field_symbol_dense",
    "delta_identity_check",
    "well_matrix",
    "well_symbol",
    "well_feedback",
    "well_fiber_dense",
    "SmallKFit",
    "small_k_fit",
    "fit_window_momenta",
    "classify_regime",
    "momentum_bound_report",
]

MODES = ("discrete", "continuum")


class NumericalError(RuntimeError):
    """Singular resolvent, degenerate fiber, or failed iteration."""


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise LatticeError(f"mode must be one of {MODES}, got {mode!r}")


def _as_k_array(k) -> np.ndarray:
    arr = np.asarray(k, dtype=float)
    if arr.shape[-1] != 4:
        raise LatticeError("momenta must have 4 components")
    return arr


# ---------------------------------------------------------------------------
# elementary symbols
# ---------------------------------------------------------------------------

def averaging_symbol(p, shape: TorusShape, profile: AveragingProfile = SHARP):
    """Fourier transform of the fine box-averaging kernel at momentum p.

    Product over axes of sin(p/2) / ((1/eps) sin(eps*p/2)) raised to the
    profile exponent; removable singularities handled by series expansion.
    """
    p = _as_k_array(p)
    blens = (shape.mt, shape.mx, shape.mx, shape.mx)
    spac = shape.spacings("fine")
    out = np.ones(p.shape[:-1])
    for axis in range(4):
        out = out * profile_axis_symbol(spac[axis] * p[..., axis], blens[axis], profile.exponent)
    return out


def block_profile_symbol(k, shape: TorusShape, profile: AveragingProfile = SHARP):
    """Fourier transform of the unit-lattice block-averaging kernel at k."""
    from .lattice_ops import block_profile_symbol as _bps

    return _bps(k, shape, profile)


def _spatial_stencil(p: np.ndarray, eps_x: float) -> np.ndarray:
    return sum((2.0 - 2.0 * np.cos(eps_x * p[..., i])) / (eps_x * eps_x) for i in (1, 2, 3))


def heat_symbol(p, shape: TorusShape, d: float = 1.0, mode: str = "discrete", transpose: bool = False):
    """Symbol of -d * (forward time difference) - Laplacian on the fine lattice.

    ``transpose`` gives the bilinear transpose (+d * backward difference).
    In continuum mode the result is -i*d*p0 + |pvec|^2 (conjugate time part
    when transposed).
    """
    _check_mode(mode)
    p = _as_k_array(p)
    if mode == "continuum":
        sp = np.sum(p[..., 1:] ** 2, axis=-1)
        time = 1j * d * p[..., 0] if transpose else -1j * d * p[..., 0]
        return time + sp
    et = shape.eps_t
    sp = _spatial_stencil(p, shape.eps_x)
    if transpose:
        time = d * (1.0 - np.exp(-1j * et * p[..., 0])) / et
    else:
        time = -d * (np.exp(1j * et * p[..., 0]) - 1.0) / et
    return time + sp


# ---------------------------------------------------------------------------
# scalar composite: the zero-field effective quadratic symbol
# ---------------------------------------------------------------------------

def _fiber_terms(k, mu, d, shape, mode, profile, transpose=False):
    """Per-fiber arrays (a, u) with a = heat(k+l) - mu and u the averaging FT."""
    k = _as_k_array(k)
    ell = block_momenta(shape)
    p = k[..., None, :] + ell  # (..., B, 4)
    u = averaging_symbol(p, shape, profile)
    a = heat_symbol(p, shape, d, mode, transpose=transpose) - mu
    return a, u


def zero_field_symbol(k, mu, d, shape: TorusShape, mode: str = "discrete", profile: AveragingProfile = SHARP):
    """Unit-lattice symbol of the quadratic kernel around zero field.

    Equals 1/(1 + S) with the fiber sum S(k) = sum_l u(k+l)^2 / (heat - mu),
    the rank-one (Sherman-Morrison) reduction of the fiber inverse.  Where
    exactly one fiber entry of (heat - mu) vanishes with nonzero averaging
    weight the limit value 0 is exact; any other vanishing combination means
    the subtraction point sits in the operator's spectrum.
    """
    a, u = _fiber_terms(k, mu, d, shape, mode, profile)
    a_flat = a.reshape(-1, a.shape[-1])
    u_flat = u.reshape(-1, u.shape[-1])
    out = np.empty(a_flat.shape[0], dtype=complex)
    zero_mask = a_flat == 0.0
    rows_with_zero = np.nonzero(zero_mask.any(axis=1))[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        S = np.where(zero_mask, 0.0, u_flat * u_flat / np.where(zero_mask, 1.0, a_flat)).sum(axis=1)
    out[:] = 1.0 / (1.0 + S)
    for r in rows_with_zero:
        zi = np.nonzero(zero_mask[r])[0]
        if len(zi) > 1 or abs(u_flat[r, zi[0]]) < 1e-12:
            raise NumericalError(f"subtraction point mu={mu} lies in the spectrum at fiber row {r}")
        out[r] = 0.0
    return out.reshape(a.shape[:-1])[()] if a.ndim > 1 else complex(out[0])


def zero_field_symbol_dense(k, mu, d, shape: TorusShape, mode: str = "discrete",
                            profile: AveragingProfile = SHARP, cap: int = 2500):
    """Oracle: the same symbol via dense inversion of the coupled sub-fiber.

    Fiber indices with (numerically) vanishing averaging weight decouple from
    the rank-one part exactly; the remaining block diag(a) + u u^T is
    inverted densely.  Single momenta only.
    """
    a, u = _fiber_terms(np.asarray(k, float).reshape(4), mu, d, shape, mode, profile)
    a, u = a.reshape(-1), u.reshape(-1)
    coupled = np.abs(u) > 1e-12
    ac, uc = a[coupled], u[coupled]
    if ac.size > cap:
        raise LatticeError(f"coupled fiber of size {ac.size} exceeds the dense-oracle cap {cap}")
    M = np.diag(ac) + np.outer(uc, uc)
    x = np.linalg.solve(M, uc)
    return complex(1.0 - uc @ x)


def delta_identity_check(k, shape: TorusShape, d: float = 1.0, mode: str = "discrete",
                         profile: AveragingProfile = SHARP, cap: int = 2500):
    """Cross-check of the averaged-resolvent factorization at mu = 0.

    lhs: dense coupled-fiber value of the averaged resolvent symbol.
    rhs: (fiber sum A) * (1 + A)^(-1), the product of the averaged inverse
    heat symbol with the resummation factor.
    Returns (lhs, rhs, |lhs - rhs|).  k = 0 is excluded (the heat symbol
    vanishes there).
    """
    kk = np.asarray(k, dtype=float).reshape(4)
    a, u = _fiber_terms(kk, 0.0, d, shape, mode, profile)
    a, u = a.reshape(-1), u.reshape(-1)
    if np.any(a == 0.0):
        raise NumericalError("excluded point: the heat symbol vanishes somewhere on this fiber (k = 0)")
    A = complex(np.sum(u * u / a))
    rhs = A / (1.0 + A)
    lhs = 1.0 - zero_field_symbol_dense(kk, 0.0, d, shape, mode, profile, cap=cap)
    return lhs, rhs, abs(lhs - rhs)


# ---------------------------------------------------------------------------
# 2x2 well operator
# ---------------------------------------------------------------------------

def well_matrix(p, mu, d, shape: TorusShape, mode: str = "continuum"):
    """2x2 symbol coupling radial/tangential components around the well.

    continuum: [[2mu + |pvec|^2, d*p0], [-d*p0, |pvec|^2]].
    discrete: spatial stencil plus the symmetrized time-difference symbols.
    Shape (..., 2, 2).
    """
    _check_mode(mode)
    p = _as_k_array(p)
    out = np.zeros(p.shape[:-1] + (2, 2), dtype=complex)
    if mode == "continuum":
        sp = np.sum(p[..., 1:] ** 2, axis=-1)
        off = d * p[..., 0]
        extra = 0.0
    else:
        et = shape.eps_t
        sp = _spatial_stencil(p, shape.eps_x)
        off = d * np.sin(et * p[..., 0]) / et
        extra = (2.0 * d / et) * np.sin(0.5 * et * p[..., 0]) ** 2
    out[..., 0, 0] = 2.0 * mu + sp + extra
    out[..., 0, 1] = off
    out[..., 1, 0] = -off
    out[..., 1, 1] = sp + extra
    return out


def _inv2(M: np.ndarray) -> np.ndarray:
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    out = np.empty_like(M)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 1, 1] = M[..., 0, 0]
    out[..., 0, 1] = -M[..., 0, 1]
    out[..., 1, 0] = -M[..., 1, 0]
    return out / det[..., None, None]


def _det2(M: np.ndarray) -> np.ndarray:
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def well_symbol(k, mu, d, shape: TorusShape, mode: str = "continuum",
                profile: AveragingProfile = SHARP):
    """Unit-lattice 2x2 symbol of the effective quadratic kernel around the well.

    Equals (I + B(k))^(-1), B(k) = sum_l u(k+l)^2 * wellmatrix(k+l)^(-1); by
    the Woodbury identity this is simultaneously the resummation factor of
    the averaged well-operator inverse.  Works for single momenta or batches
    (..., 4); returns (..., 2, 2).  The vanishing of the bare well matrix at
    p = 0 is absorbed by the reformulation
    (I + u0^2 D^-1 + R)^(-1) = (D + u0^2 I + D R)^(-1) D.
    """
    k = _as_k_array(k)
    single = k.ndim == 1
    kk = k.reshape(-1, 4)
    ell = block_momenta(shape)
    p = kk[:, None, :] + ell[None, :, :]
    u = averaging_symbol(p, shape, profile)
    D = well_matrix(p, mu, d, shape, mode)
    det = _det2(D)
    sing = det == 0.0
    out = np.empty((kk.shape[0], 2, 2), dtype=complex)
    eye = np.eye(2)
    for r in range(kk.shape[0]):
        s_idx = np.nonzero(sing[r])[0]
        u2 = (u[r] * u[r])[:, None, None]
        if len(s_idx) == 0:
            B = np.sum(u2 * _inv2(D[r]), axis=0)
            out[r] = _inv2(eye + B)
        elif len(s_idx) == 1:
            j = s_idx[0]
            ok = np.ones(u.shape[1], dtype=bool)
            ok[j] = False
            R = np.sum(u2[ok] * _inv2(D[r][ok]), axis=0)
            Dj = D[r, j]
            combined = Dj + (u[r, j] ** 2) * eye + Dj @ R
            out[r] = np.linalg.solve(combined, Dj)
        else:
            raise NumericalError("well operator fiber singular at more than one momentum")
    if single:
        return out[0]
    return out.reshape(k.shape[:-1] + (2, 2))


def well_feedback(k, mu, d, shape: TorusShape, mode: str = "continuum",
                  profile: AveragingProfile = SHARP):
    """Resummation factor (I + averaged well inverse)^(-1).

    Coincides with :func:`well_symbol` by the Woodbury identity.
    """
    return well_symbol(k, mu, d, shape, mode, profile)


def well_fiber_dense(k, mu, d, shape: TorusShape, mode: str = "continuum",
                     profile: AveragingProfile = SHARP, cap: int = 1500):
    """Oracle: dense coupled-fiber matrix of the full well operator and its
    averaged inverse.

    Returns (fiber matrix, 2x2 averaged-inverse symbol I - Q box^-1 Q*).
    """
    kk = np.asarray(k, dtype=float).reshape(4)
    ell = block_momenta(shape)
    p = kk[None, :] + ell
    u = averaging_symbol(p, shape, profile)
    D = well_matrix(p, mu, d, shape, mode)
    coupled = np.abs(u) > 1e-12
    uc = u[coupled]
    Dc = D[coupled]
    B = uc.size
    if B > cap:
        raise LatticeError(f"coupled fiber of size {B} exceeds the dense-oracle cap {cap}")
    M = np.zeros((2 * B, 2 * B), dtype=complex)
    for i in range(B):
        M[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = Dc[i]
    U = np.zeros((2 * B, 2), dtype=complex)
    U[0::2, 0] = uc
    U[1::2, 1] = uc
    M += U @ U.T
    X = np.linalg.solve(M, U)
    return M, np.eye(2) - U.T @ X


# ---------------------------------------------------------------------------
# small-momentum fits and regime classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmallKFit:
    """Least-squares fit of a symbol over {1, -i*k0, k0^2, |kvec|^2}."""

    mass: complex
    first_order_time: complex
    second_order_time: complex
    spatial: complex
    residual: float
    window: float
    samples: int


def fit_window_momenta(window: float, include_zero: bool = True) -> np.ndarray:
    """Symmetric sample stencil with per-axis components in {0, +-w/2, +-w}."""
    vals = np.array([-window, -window / 2, 0.0, window / 2, window])
    grids = np.meshgrid(vals, vals, vals, vals, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    if not include_zero:
        pts = pts[np.any(pts != 0.0, axis=1)]
    return pts


def small_k_fit(symbol, window: float, momenta: np.ndarray | None = None) -> SmallKFit:
    """Fit symbol(k) = mass + c1*(-i*k0) + c2*k0^2 + c3*|kvec|^2 in the window.

    ``symbol`` is a callable taking momenta (..., 4) and returning complex
    values.  Halving the window must shrink the residual for a symbol with a
    genuine small-momentum expansion.
    """
    if momenta is None:
        momenta = fit_window_momenta(window)
    momenta = np.asarray(momenta, dtype=float)
    y = np.asarray(symbol(momenta), dtype=complex).reshape(-1)
    k0 = momenta[:, 0]
    ksq = np.sum(momenta[:, 1:] ** 2, axis=1)
    X = np.stack([np.ones_like(k0), -1j * k0, k0**2 + 0j, ksq + 0j], axis=1)
    if X.shape[0] < X.shape[1]:
        raise LatticeError("fit needs at least as many momenta as basis functions")
    coeffs, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise NumericalError("rank-deficient small-momentum fit")
    resid = float(np.sqrt(np.mean(np.abs(X @ coeffs - y) ** 2)))
    return SmallKFit(
        mass=complex(coeffs[0]),
        first_order_time=complex(coeffs[1]),
        second_order_time=complex(coeffs[2]),
        spatial=complex(coeffs[3]),
        residual=resid,
        window=float(window),
        samples=len(y),
    )


def classify_regime(fit: SmallKFit, dominance: float = 3.0, mass_fraction: float = 0.2) -> str:
    """Label a fit parabolic, elliptic, or transitional.

    At the window scale w the basis terms weigh |c1|*w (first-order time),
    |c2|*w^2 (second-order time) and |mass|.  First-order dominance with a
    negligible mass is parabolic; second-order dominance (or a pure mass) is
    elliptic; anything else is transitional.
    """
    w = fit.window
    t1 = abs(fit.first_order_time) * w
    t2 = abs(fit.second_order_time) * w * w
    t3 = abs(fit.spatial) * w * w
    tm = abs(fit.mass)
    scale = max(t1, t2, t3, tm)
    if scale == 0.0:
        return "transitional"
    if t1 > dominance * (t2 + tm) and tm <= mass_fraction * max(t1, t3):
        return "parabolic"
    if (t2 + tm) > dominance * t1:
        return "elliptic"
    return "transitional"


# ---------------------------------------------------------------------------
# envelope report for the 2x2 matrix bounds
# ---------------------------------------------------------------------------

def _entry_ratios(values: np.ndarray, envelope: np.ndarray) -> float:
    return float(np.max(np.abs(values) / envelope))


def momentum_bound_report(shape: TorusShape, mu: float, d: float, mode: str = "continuum",
                          profile: AveragingProfile = SHARP, kgrid: np.ndarray | None = None,
                          n_ell: int = 6, rng: np.random.Generator | None = None) -> dict:
    """Max entrywise ratios of the 2x2 matrix symbols against their expected
    (d, mu, |k|) scaling envelopes.

    Parts:
      a: inverse well matrix at momenta bounded away from zero vs
         [[d^-2, d^-1], [d^-1, 1]];
      b: wellmatrix(k+l)^-1 wellmatrix(k) for l != 0 vs
         [[mu/d^2 + |k|, |k|/d], [mu/d + d|k|, |k|]];
      c: resummation factor vs [[mu/d^2 + |k|^2, |k|/d], [|k|/d, |k|^2]];
      d: wellmatrix(k+l)^-1 * resummation vs
         [[mu/d^4 + |k|/d^2, |k|/d^3 + |k|^2/d], [mu/d^3 + |k|/d, |k|/d^2 + |k|^2]].
    Returns {"a": ..., "b": ..., "c": ..., "d": ...}, each a finite float.
    """
    rng = rng or np.random.default_rng(0)
    if kgrid is None:
        base = np.array([0.05, 0.1, 0.2, 0.4])
        pts = []
        for a0 in base:
            for a1 in base:
                pts.append([a0, a1, a1 / 2, 0.0])
                pts.append([a0, 0.0, a1, a1])
        kgrid = np.asarray(pts)
    kgrid = np.asarray(kgrid, dtype=float)
    knorm = np.linalg.norm(kgrid, axis=1)

    ell_all = block_momenta(shape)
    nonzero = np.nonzero(np.any(ell_all != 0.0, axis=1))[0]
    pick = rng.choice(nonzero, size=min(n_ell, len(nonzero)), replace=False)
    ells = ell_all[pick]

    report = {}
    # part a: momenta bounded away from zero
    pa = rng.uniform(-np.pi, np.pi, size=(200, 4))
    pa = pa[np.linalg.norm(pa, axis=1) >= 1.0]
    inva = _inv2(well_matrix(pa, mu, d, shape, mode))
    env_a = np.array([[d**-2, d**-1], [d**-1, 1.0]])
    report["a"] = _entry_ratios(inva, env_a[None, :, :])

    # part b
    Dk = well_matrix(kgrid, mu, d, shape, mode)
    ratios_b = 0.0
    for ell in ells:
        Dkl_inv = _inv2(well_matrix(kgrid + ell[None, :], mu, d, shape, mode))
        prod = Dkl_inv @ Dk
        env = np.empty_like(prod, dtype=float)
        env[:, 0, 0] = mu / d**2 + knorm
        env[:, 0, 1] = knorm / d
        env[:, 1, 0] = mu / d + d * knorm
        env[:, 1, 1] = knorm
        ratios_b = max(ratios_b, _entry_ratios(prod, env))
    report["b"] = ratios_b

    # part c
    fb = well_feedback(kgrid, mu, d, shape, mode, profile)
    env_c = np.empty_like(fb, dtype=float)
    env_c[:, 0, 0] = mu / d**2 + knorm**2
    env_c[:, 0, 1] = knorm / d
    env_c[:, 1, 0] = knorm / d
    env_c[:, 1, 1] = knorm**2
    report["c"] = _entry_ratios(fb, env_c)

    # part d
    ratios_d = 0.0
    for ell in ells:
        Dkl_inv = _inv2(well_matrix(kgrid + ell[None, :], mu, d, shape, mode))
        prod = Dkl_inv @ fb
        env = np.empty_like(prod, dtype=float)
        env[:, 0, 0] = mu / d**4 + knorm / d**2
        env[:, 0, 1] = knorm / d**3 + knorm**2 / d
        env[:, 1, 0] = mu / d**3 + knorm / d
        env[:, 1, 1] = knorm / d**2 + knorm**2
        ratios_d = max(ratios_d, _entry_ratios(prod, env))
    report["d"] = ratios_d
    return report


def well_feedback_entry_at_zero(mu: float, d: float, shape: TorusShape, mode: str = "continuum",
                                profile: AveragingProfile = SHARP) -> np.ndarray:
    """The 2x2 resummation factor exactly at k = 0."""
    return well_symbol(np.zeros(4), mu, d, shape, mode, profile)
