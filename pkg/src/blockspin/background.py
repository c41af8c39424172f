"""Background-field solvers on the fine lattice.

The stationarity system for the pair (phi_star, phi) given external unit
fields (psi_star, psi) is

    average_adjoint(average(phi) - psi)   + heat(phi)     + (v*phi_star*phi - mu)*phi      = 0
    average_adjoint(average(phi_star) - psi_star) + heat^T(phi_star) + (v*phi_star*phi - mu)*phi_star = 0

Solvers, in increasing generality: constant fields (a real cubic), the
linearization around zero field (exact momentum-space solve through the
fiber rank-one structure), the linearization around the well bottom (2x2
Woodbury per fiber), and damped Newton on the full nonlinear system with
the exact Jacobian (dense at small sizes, preconditioned GMRES above).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .lattice_ops import (
    SHARP,
    AveragingProfile,
    apply_heat,
    apply_heat_transpose,
    fine_average,
    fine_average_adjoint,
    operator_matrix,
)
from .symbols import NumericalError, averaging_symbol, heat_symbol, well_matrix, _inv2, _det2
from .torus import (
    Field,
    FieldPair,
    LatticeError,
    TorusShape,
    fiber_merge,
    fiber_momenta,
    fiber_split,
)

__all__ = [
    "ModelParams",
    "BackgroundSolution",
    "solve_constant",
    "solve_linear",
    "solve_well_linear",
    "solve_nonlinear",
    "nonlinear_residuals",
]

DENSE_SITE_LIMIT = 600  # dense Newton path up to this many fine sites


@dataclass(frozen=True)
class ModelParams:
    """Chemical potential, local coupling, and time-derivative weight.

    The well radius sqrt(mu/v) is derived, so radius^2 * v = mu holds by
    construction.  mu = 0 is allowed (radius 0).
    """

    mu: float
    v: float
    d: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise LatticeError("chemical potential must be >= 0")
        if self.v <= 0:
            raise LatticeError("coupling must be > 0")
        if self.d < 1.0:
            raise LatticeError("time-derivative weight must be >= 1")

    @property
    def well_radius(self) -> float:
        return float(np.sqrt(self.mu / self.v))


@dataclass(frozen=True)
class BackgroundSolution:
    phi_star: Field
    phi: Field
    residual: tuple[float, float]  # sup norms of (starred, plain) equations
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# constant fields
# ---------------------------------------------------------------------------

def solve_constant(psi: float, params: ModelParams, tol: float = 1e-12) -> list[float]:
    """All real roots of  v*phi^3 + (1 - mu)*phi = psi.

    Exactly one root when mu <= 1; up to three otherwise.  Each root is
    polished by Newton to the requested residual.
    """
    coeffs = [params.v, 0.0, 1.0 - params.mu, -float(psi)]
    roots = np.roots(coeffs)
    real = []
    for r in roots:
        if abs(r.imag) > 1e-7 * max(1.0, abs(r)):
            continue
        x = float(r.real)
        for _ in range(60):
            f = params.v * x**3 + (1.0 - params.mu) * x - psi
            if abs(f) <= tol:
                break
            df = 3 * params.v * x**2 + (1.0 - params.mu)
            if df == 0:
                break
            x -= f / df
        if abs(params.v * x**3 + (1.0 - params.mu) * x - psi) <= tol:
            real.append(x)
    # dedupe (np.roots may report near-equal real roots at multiple points)
    real.sort()
    out: list[float] = []
    for x in real:
        if not out or abs(x - out[-1]) > 1e-8 * max(1.0, abs(x)):
            out.append(x)
    if params.mu <= 1.0 and len(out) != 1:
        out = [min(out, key=lambda x: abs(params.v * x**3 + (1.0 - params.mu) * x - psi))]
    return out


# ---------------------------------------------------------------------------
# fiber arithmetic shared by the momentum-space solvers
# ---------------------------------------------------------------------------

class _FiberOperator:
    """Cached fiber data for (averaging + heat - mu) at one parameter set."""

    def __init__(self, shape: TorusShape, params: ModelParams, profile: AveragingProfile = SHARP):
        self.shape = shape
        self.params = params
        self.profile = profile
        k_unit, ell = fiber_momenta(shape)
        p = k_unit[:, None, :] + ell[None, :, :]  # (U, B, 4)
        self.u = averaging_symbol(p, shape, profile)
        self.a_plain = heat_symbol(p, shape, params.d, "discrete") - params.mu
        self.a_star = heat_symbol(p, shape, params.d, "discrete", transpose=True) - params.mu

    def solve(self, rhs: np.ndarray, transpose: bool = False, shift: complex = 0.0) -> np.ndarray:
        """Solve (diag(a + shift) + u u^T) x = rhs on every fiber.

        rhs, result: (U, B) fiber arrays of mode coefficients.
        """
        a = (self.a_star if transpose else self.a_plain) + shift
        u = self.u
        zero = a == 0.0
        out = np.empty_like(rhs)
        regular = ~zero.any(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_a = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, a))
        Su = np.sum(u * u * inv_a, axis=1)
        Sc = np.sum(u * rhs * inv_a, axis=1)
        factor = Sc / (1.0 + Su)
        out[:] = (rhs - u * factor[:, None]) * inv_a
        for r in np.nonzero(~regular)[0]:
            zi = np.nonzero(zero[r])[0]
            if len(zi) > 1 or abs(u[r, zi[0]]) < 1e-12:
                raise NumericalError(
                    f"resolvent singular on fiber {r}: subtraction point in the spectrum"
                )
            j = zi[0]
            s = rhs[r, j] / u[r, j]
            x = np.zeros_like(rhs[r])
            others = np.ones(len(x), dtype=bool)
            others[j] = False
            x[others] = (rhs[r, others] - u[r, others] * s) / a[r, others]
            x[j] = (s - np.sum(u[r, others] * x[others])) / u[r, j]
            out[r] = x
        return out

    def solve_field(self, rhs_values: np.ndarray, transpose: bool = False, shift: complex = 0.0) -> np.ndarray:
        coeffs = np.fft.fftn(rhs_values) / rhs_values.size
        fib = fiber_split(coeffs, self.shape)
        sol = self.solve(fib, transpose=transpose, shift=shift)
        merged = fiber_merge(sol, self.shape)
        return np.fft.ifftn(merged) * merged.size


# ---------------------------------------------------------------------------
# linearization around zero field
# ---------------------------------------------------------------------------

def _linear_residual(phi_vals, rhs_vals, params, shape, profile, transpose) -> float:
    proj = fine_average_adjoint(fine_average(Field(shape, "fine", phi_vals), profile), profile).values
    heat = (apply_heat_transpose if transpose else apply_heat)(Field(shape, "fine", phi_vals), params.d).values
    res = proj + heat - params.mu * phi_vals - rhs_vals
    return float(np.max(np.abs(res)))


def solve_linear(psi_pair: FieldPair, params: ModelParams, shape: TorusShape,
                 profile: AveragingProfile = SHARP) -> BackgroundSolution:
    """First-order background fields: exact momentum-space solve.

    phi = (average^T average - mu + heat)^(-1) average^T psi, and the
    transpose-heat analogue for the starred member.  Residuals are evaluated
    by applying the operators in direct space.
    """
    op = _FiberOperator(shape, params, profile)
    rhs_plain = fine_average_adjoint(psi_pair.plain, profile).values
    rhs_star = fine_average_adjoint(psi_pair.starred, profile).values
    phi_vals = op.solve_field(rhs_plain, transpose=False)
    phi_star_vals = op.solve_field(rhs_star, transpose=True)
    res_plain = _linear_residual(phi_vals, rhs_plain, params, shape, profile, transpose=False)
    res_star = _linear_residual(phi_star_vals, rhs_star, params, shape, profile, transpose=True)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(psi_pair.plain.values))), float(np.max(np.abs(psi_pair.starred.values))))
    return BackgroundSolution(
        phi_star=Field(shape, "fine", phi_star_vals),
        phi=Field(shape, "fine", phi_vals),
        residual=(res_star, res_plain),
        iterations=1,
        converged=bool(res_plain <= tol and res_star <= tol),
    )


# ---------------------------------------------------------------------------
# linearization around the well bottom (radial / tangential components)
# ---------------------------------------------------------------------------

def solve_well_linear(R: Field, Theta: Field, params: ModelParams, shape: TorusShape,
                      mode: str = "discrete", profile: AveragingProfile = SHARP,
                      check_tol: float = 1e-10) -> tuple[Field, Field]:
    """Solve the linearized radial/tangential system per momentum fiber.

    Returns (X, H) with  welloperator [X; H] = average_adjoint [R; Theta];
    the well operator couples the two components through the 2x2 matrix
    symbol plus the averaging mass.  The residual of the solved system is
    verified against a full-grid application of the operator.
    """
    if R.level != "unit" or Theta.level != "unit":
        raise LatticeError("radial/tangential data live on the unit lattice")
    cR = (np.fft.fftn(R.values) / R.sites).reshape(-1)
    cT = (np.fft.fftn(Theta.values) / Theta.sites).reshape(-1)
    k_unit, ell = fiber_momenta(shape)
    U, B = k_unit.shape[0], ell.shape[0]
    p = k_unit[:, None, :] + ell[None, :, :]
    u = averaging_symbol(p, shape, profile)
    D = well_matrix(p, params.mu, params.d, shape, mode)
    det = _det2(D)
    cX = np.zeros((U, B), dtype=complex)
    cH = np.zeros((U, B), dtype=complex)
    eye = np.eye(2)
    for r in range(U):
        w = np.array([cR[r], cT[r]])
        s_idx = np.nonzero(det[r] == 0.0)[0]
        u2 = (u[r] * u[r])[:, None, None]
        if len(s_idx) == 0:
            invs = _inv2(D[r])
            Bsum = np.sum(u2 * invs, axis=0)
            y = np.linalg.solve(eye + Bsum, w)
            c = invs @ (u[r, :, None] * y)[..., None]
            cX[r] = c[:, 0, 0]
            cH[r] = c[:, 1, 0]
        elif len(s_idx) == 1:
            j = s_idx[0]
            ok = np.ones(B, dtype=bool)
            ok[j] = False
            invs_ok = _inv2(D[r][ok])
            Rsum = np.sum(u2[ok] * invs_ok, axis=0)
            Dj = D[r, j]
            base = Dj + (u[r, j] ** 2) * eye + Rsum @ Dj
            z = np.linalg.solve(base, w)
            cj = u[r, j] * z
            y = Dj @ z
            c_ok = invs_ok @ (u[r, ok, None] * y)[..., None]
            cX[r, ok] = c_ok[:, 0, 0]
            cH[r, ok] = c_ok[:, 1, 0]
            cX[r, j] = cj[0]
            cH[r, j] = cj[1]
        else:
            raise NumericalError(f"well operator fiber {r} singular at more than one momentum")
    X_vals = np.fft.ifftn(fiber_merge(cX, shape)) * shape.sites("fine")
    H_vals = np.fft.ifftn(fiber_merge(cH, shape)) * shape.sites("fine")
    X = Field(shape, "fine", X_vals)
    H = Field(shape, "fine", H_vals)
    resid = _well_residual(X, H, R, Theta, params, shape, mode, profile)
    scale = max(1.0, float(np.max(np.abs(R.values))), float(np.max(np.abs(Theta.values))))
    if resid > check_tol * scale:
        raise NumericalError(f"well solve residual {resid:.3e} exceeds {check_tol:.1e}")
    return X, H


def apply_well_operator(X: Field, H: Field, params: ModelParams, shape: TorusShape,
                        mode: str = "discrete", profile: AveragingProfile = SHARP) -> tuple[np.ndarray, np.ndarray]:
    """Full-grid application of the 2x2 well operator plus averaging mass."""
    k_all = _fine_mode_radians(shape)
    D = well_matrix(k_all, params.mu, params.d, shape, mode)
    cX = np.fft.fftn(X.values) / X.sites
    cH = np.fft.fftn(H.values) / H.sites
    oX = D[..., 0, 0] * cX + D[..., 0, 1] * cH
    oH = D[..., 1, 0] * cX + D[..., 1, 1] * cH
    outX = np.fft.ifftn(oX) * oX.size + fine_average_adjoint(fine_average(X, profile), profile).values
    outH = np.fft.ifftn(oH) * oH.size + fine_average_adjoint(fine_average(H, profile), profile).values
    return outX, outH


def _well_residual(X, H, R, Theta, params, shape, mode, profile) -> float:
    outX, outH = apply_well_operator(X, H, params, shape, mode, profile)
    rhsX = fine_average_adjoint(R, profile).values
    rhsH = fine_average_adjoint(Theta, profile).values
    return float(max(np.max(np.abs(outX - rhsX)), np.max(np.abs(outH - rhsH))))


def _fine_mode_radians(shape: TorusShape) -> np.ndarray:
    from .torus import fft_mode_grid

    modes = fft_mode_grid(shape.fine_extents).astype(float)
    base = np.asarray(shape.unit_extents, dtype=float)
    return 2.0 * np.pi * modes / base


# ---------------------------------------------------------------------------
# full nonlinear system
# ---------------------------------------------------------------------------

def nonlinear_residuals(psi_pair: FieldPair, phi_star: np.ndarray, phi: np.ndarray,
                        params: ModelParams, shape: TorusShape,
                        profile: AveragingProfile = SHARP) -> tuple[np.ndarray, np.ndarray]:
    """Direct-space values of both stationarity equations (starred, plain)."""
    mu, v, d = params.mu, params.v, params.d
    f_phi = Field(shape, "fine", phi)
    f_star = Field(shape, "fine", phi_star)
    proj = lambda f: fine_average_adjoint(fine_average(f, profile), profile).values
    rhs_plain = fine_average_adjoint(psi_pair.plain, profile).values
    rhs_star = fine_average_adjoint(psi_pair.starred, profile).values
    res_plain = proj(f_phi) + apply_heat(f_phi, d).values + (v * phi_star * phi - mu) * phi - rhs_plain
    res_star = proj(f_star) + apply_heat_transpose(f_star, d).values + (v * phi_star * phi - mu) * phi_star - rhs_star
    return res_star, res_plain


def _seed_fields(psi_pair, params, shape, profile, strategy):
    if strategy == "zero":
        z = np.zeros(shape.fine_extents, dtype=complex)
        return z.copy(), z.copy()
    if strategy in ("linearized", "auto-small"):
        lin = solve_linear(psi_pair, params, shape, profile)
        return lin.phi_star.values.copy(), lin.phi.values.copy()
    if strategy == "well":
        r = params.well_radius
        if r == 0.0:
            raise LatticeError("well seed needs mu > 0")
        ratio_plain = psi_pair.plain.values / r
        ratio_star = psi_pair.starred.values / r
        if np.any(np.abs(ratio_plain) < 1e-12):
            raise NumericalError("well seed undefined at vanishing external field")
        Rv = 0.5 * (np.log(np.abs(ratio_plain)) + np.log(np.abs(ratio_star)))
        Tv = np.angle(ratio_plain)
        X, H = solve_well_linear(
            Field(shape, "unit", Rv.astype(complex)),
            Field(shape, "unit", Tv.astype(complex)),
            params,
            shape,
            mode="discrete",
            profile=profile,
        )
        phi = r * np.exp(X.values + 1j * H.values)
        phi_star = r * np.exp(X.values - 1j * H.values)
        return phi_star, phi
    if strategy == "auto":
        if params.mu <= 1.0:
            return _seed_fields(psi_pair, params, shape, profile, "linearized")
        conj_like = np.allclose(psi_pair.starred.values, np.conj(psi_pair.plain.values), atol=1e-9)
        return _seed_fields(psi_pair, params, shape, profile, "well" if conj_like else "linearized")
    raise LatticeError(f"unknown seed strategy {strategy!r}")


def solve_nonlinear(psi_pair: FieldPair, params: ModelParams, shape: TorusShape,
                    tol: float = 1e-10, max_iter: int = 40, seed_strategy: str = "auto",
                    profile: AveragingProfile = SHARP, field_radius: float | None = None) -> BackgroundSolution:
    """Damped Newton on the coupled stationarity system with the exact Jacobian.

    Small lattices use a dense factorization of the Jacobian; larger ones a
    matrix-free GMRES solve preconditioned by the constant-coefficient fiber
    inverse.  Non-convergence returns the best iterate with converged=False.
    """
    if field_radius is not None:
        amp = max(float(np.max(np.abs(psi_pair.plain.values))), float(np.max(np.abs(psi_pair.starred.values))))
        if amp > field_radius:
            warnings.warn(f"external field amplitude {amp:.3g} exceeds the admissible radius {field_radius:.3g}")
    mu, v, d = params.mu, params.v, params.d
    phi_star, phi = _seed_fields(psi_pair, params, shape, profile, seed_strategy)
    sites = shape.sites("fine")
    dense = sites <= DENSE_SITE_LIMIT
    fiber = None if dense else _FiberOperator(shape, params, profile)

    lin_plain = lin_star = None
    if dense:
        proj_heat = lambda f: Field(
            shape,
            "fine",
            fine_average_adjoint(fine_average(f, profile), profile).values + apply_heat(f, d).values - mu * f.values,
        )
        proj_heat_T = lambda f: Field(
            shape,
            "fine",
            fine_average_adjoint(fine_average(f, profile), profile).values
            + apply_heat_transpose(f, d).values
            - mu * f.values,
        )
        lin_plain = operator_matrix(proj_heat, shape, "fine", "fine", max_sites=DENSE_SITE_LIMIT)
        lin_star = operator_matrix(proj_heat_T, shape, "fine", "fine", max_sites=DENSE_SITE_LIMIT)

    def res_norms(rs, rp):
        return float(np.max(np.abs(rs))), float(np.max(np.abs(rp)))

    best = None
    for iteration in range(1, max_iter + 1):
        res_star, res_plain = nonlinear_residuals(psi_pair, phi_star, phi, params, shape, profile)
        ns, npl = res_norms(res_star, res_plain)
        if best is None or max(ns, npl) < best[0]:
            best = (max(ns, npl), phi_star.copy(), phi.copy(), (ns, npl), iteration)
        if ns <= tol and npl <= tol:
            return BackgroundSolution(
                phi_star=Field(shape, "fine", phi_star),
                phi=Field(shape, "fine", phi),
                residual=(ns, npl),
                iterations=iteration,
                converged=True,
            )
        # Newton step on the stacked (delta_plain, delta_star) system
        if dense:
            n = sites
            J = np.zeros((2 * n, 2 * n), dtype=complex)
            J[:n, :n] = lin_plain + np.diag((2.0 * v * phi_star * phi).reshape(-1))
            J[:n, n:] = np.diag((v * phi * phi).reshape(-1))
            J[n:, n:] = lin_star + np.diag((2.0 * v * phi_star * phi).reshape(-1))
            J[n:, :n] = np.diag((v * phi_star * phi_star).reshape(-1))
            rhs = -np.concatenate([res_plain.reshape(-1), res_star.reshape(-1)])
            delta = np.linalg.solve(J, rhs)
            d_plain = delta[:n].reshape(shape.fine_extents)
            d_star = delta[n:].reshape(shape.fine_extents)
        else:
            d_plain, d_star = _gmres_newton_step(
                fiber, shape, profile, params, phi_star, phi, res_star, res_plain, max(ns, npl)
            )
        # damping: halve the step while the residual grows
        step = 1.0
        base = max(ns, npl)
        for _ in range(12):
            cand_star = phi_star + step * d_star
            cand = phi + step * d_plain
            rs, rp = nonlinear_residuals(psi_pair, cand_star, cand, params, shape, profile)
            if max(*res_norms(rs, rp)) < base or base <= tol:
                break
            step *= 0.5
        phi_star = phi_star + step * d_star
        phi = phi + step * d_plain
    _, bs, bp, bres, bit = best
    return BackgroundSolution(
        phi_star=Field(shape, "fine", bs),
        phi=Field(shape, "fine", bp),
        residual=bres,
        iterations=max_iter,
        converged=False,
    )


def _gmres_newton_step(fiber, shape, profile, params, phi_star, phi, res_star, res_plain, rnorm):
    """Matrix-free Newton direction via preconditioned GMRES."""
    mu, v, d = params.mu, params.v, params.d
    ext = shape.fine_extents
    n = int(np.prod(ext))
    two_v_ss = 2.0 * v * phi_star * phi
    v_pp = v * phi * phi
    v_ss = v * phi_star * phi_star

    def matvec(x):
        dp = x[:n].reshape(ext)
        ds = x[n:].reshape(ext)
        f_dp = Field(shape, "fine", dp)
        f_ds = Field(shape, "fine", ds)
        proj_p = fine_average_adjoint(fine_average(f_dp, profile), profile).values
        proj_s = fine_average_adjoint(fine_average(f_ds, profile), profile).values
        out_p = proj_p + apply_heat(f_dp, d).values - mu * dp + two_v_ss * dp + v_pp * ds
        out_s = proj_s + apply_heat_transpose(f_ds, d).values - mu * ds + two_v_ss * ds + v_ss * dp
        return np.concatenate([out_p.reshape(-1), out_s.reshape(-1)])

    shift = complex(np.mean(two_v_ss))

    def precond(x):
        dp = fiber.solve_field(x[:n].reshape(ext), transpose=False, shift=shift)
        ds = fiber.solve_field(x[n:].reshape(ext), transpose=True, shift=shift)
        return np.concatenate([dp.reshape(-1), ds.reshape(-1)])

    A = spla.LinearOperator((2 * n, 2 * n), matvec=matvec, dtype=complex)
    M = spla.LinearOperator((2 * n, 2 * n), matvec=precond, dtype=complex)
    rhs = -np.concatenate([res_plain.reshape(-1), res_star.reshape(-1)])
    rtol = min(1e-4, max(1e-12, 1e-3 * rnorm))
    sol, info = spla.gmres(A, rhs, rtol=rtol, atol=0.0, M=M, maxiter=200, restart=60)
    if info != 0:
        raise NumericalError(f"inner linear solve stalled (gmres info={info})")
    return sol[:n].reshape(ext), sol[n:].reshape(ext)
