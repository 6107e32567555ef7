"""Determinant roots and fundamental matrices of spectrally negative models.

For the supported jump-law class the matrix exponent is a rational matrix
function of alpha whose denominators are products of linear factors
(alpha + rho) coming from one-sided exponential transforms.  Clearing the
denominators row by row turns det Psi(lambda) = 0 into a polynomial equation
of known degree, solved exactly through the companion matrix; this keeps the
root bookkeeping honest (no contour integration, no missed roots).

From the right-half-plane roots and their null vectors we assemble

* ``G``  - the generator of the upward first-passage phase chain,
* ``R``  - its left counterpart (same spectrum, left null vectors),
* ``H``  - the matrix of expected local times at the origin,

which satisfy H R = G H and transpose into the dual model's triple through
the stationary law.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np
import numpy.polynomial.polynomial as npp

from .errors import (
    ConvergenceError,
    CountError,
    DomainError,
    DriftError,
    IllConditionedError,
    MultiplicityError,
    UnsupportedError,
)
from .model import JumpLaw, LevyComponent, MapModel, dual, psi, stationary, stationary_drift

_ROOT_COLLISION = 1e-6       # closer kept roots than this are treated as defective
_REL_HAT_TOL = 1e-8
_COND_LIMIT = 1e10
_MAX_PHASES_DET = 8          # Leibniz expansion guard


# ---------------------------------------------------------------------------
# Rational-function plumbing
# ---------------------------------------------------------------------------

def _law_rational(law: JumpLaw) -> tuple[np.ndarray, dict[float, int]]:
    """Moment transform of a law as (numerator coeffs, {rho: multiplicity})
    with denominator prod (alpha + rho)^mult.  Only laws that keep the
    exponent rational are accepted here."""
    if law.kind == "point":
        if law.value != 0.0:
            raise UnsupportedError(
                "nonzero point-mass jumps make the exponent non-rational; "
                "the spectral solver supports point masses at 0 only")
        return np.array([1.0]), {}
    if law.kind == "exp-neg":
        return np.array([law.rate]), {law.rate: 1}
    if law.kind == "exp-pos":
        raise UnsupportedError("positive jumps are outside the spectral solver's class")
    num = np.array([0.0])
    den: dict[float, int] = {}
    parts = []
    for w, comp in zip(law.weights, law.components):
        cnum, cden = _law_rational(comp)
        parts.append((w * cnum, cden))
        for rho, m in cden.items():
            den[rho] = max(den.get(rho, 0), m)
    for cnum, cden in parts:
        num = npp.polyadd(num, npp.polymul(cnum, _expand({r: m - cden.get(r, 0)
                                                          for r, m in den.items()})))
    return num, den


def _expand(factors: dict[float, int]) -> np.ndarray:
    """Coefficients of prod (x + rho)^mult, low order first."""
    out = np.array([1.0])
    for rho, mult in sorted(factors.items()):
        for _ in range(mult):
            out = npp.polymul(out, np.array([rho, 1.0]))
    return out


def _den_union(a: dict[float, int], b: dict[float, int]) -> dict[float, int]:
    out = dict(a)
    for rho, m in b.items():
        out[rho] = max(out.get(rho, 0), m)
    return out


def _den_diff(a: dict[float, int], b: dict[float, int]) -> dict[float, int]:
    return {rho: m - b.get(rho, 0) for rho, m in a.items() if m - b.get(rho, 0) > 0}


def _entry_rationals(model: MapModel, beta: np.ndarray):
    """Per-entry (numerator, denominator-factor) table for Psi with extra
    killing beta."""
    n = model.n
    table = [[None] * n for _ in range(n)]
    for i, comp in enumerate(model.levy):
        const = -(model.switch_rate[i].sum() + model.kill[i] + beta[i])
        poly = np.array([const, comp.drift, 0.5 * comp.sigma2])
        num, den = np.trim_zeros(poly, "b"), {}
        if num.size == 0:
            num = np.array([0.0])
        if comp.jump_rate > 0.0:
            jnum, jden = _law_rational(comp.jump_law)
            # lam * (m(alpha) - 1) merged over the common denominator
            den = jden
            num = npp.polyadd(npp.polymul(num, _expand(jden)),
                              comp.jump_rate * npp.polyadd(jnum, -_expand(jden)))
        table[i][i] = (num, den)
        for j in range(n):
            if j != i and model.switch_rate[i, j] > 0.0:
                snum, sden = _law_rational(model.switch_jump[(i, j)])
                table[i][j] = (model.switch_rate[i, j] * snum, sden)
            elif j != i:
                table[i][j] = (np.array([0.0]), {})
    return table


def _cleared_polynomial(model: MapModel, beta: np.ndarray):
    """Row-cleared determinant polynomial and the pole locations removed."""
    n = model.n
    if n > _MAX_PHASES_DET:
        raise UnsupportedError(f"determinant expansion limited to {_MAX_PHASES_DET} phases")
    table = _entry_rationals(model, beta)
    poles = []
    cleared = []
    for i in range(n):
        row_den: dict[float, int] = {}
        for j in range(n):
            row_den = _den_union(row_den, table[i][j][1])
        poles.extend(row_den.keys())
        cleared.append([npp.polymul(table[i][j][0], _expand(_den_diff(row_den, table[i][j][1])))
                        for j in range(n)])
    det = np.array([0.0])
    for perm in permutations(range(n)):
        prod = np.array([1.0])
        for i, j in enumerate(perm):
            prod = npp.polymul(prod, cleared[i][j])
        det = npp.polyadd(det, _perm_sign(perm) * prod)
    scale = np.abs(det).max()
    keep = np.nonzero(np.abs(det) > 1e-13 * scale)[0]
    det = det[: keep[-1] + 1] if keep.size else np.array([0.0])
    return det, sorted(set(poles))


def _perm_sign(perm) -> float:
    inv = sum(1 for i in range(len(perm)) for j in range(i + 1, len(perm))
              if perm[i] > perm[j])
    return -1.0 if inv % 2 else 1.0


def _polish(coeffs: np.ndarray, roots: np.ndarray, steps: int = 2) -> np.ndarray:
    dcoeffs = npp.polyder(coeffs)
    for _ in range(steps):
        p = npp.polyval(roots, coeffs)
        dp = npp.polyval(roots, dcoeffs)
        safe = np.abs(dp) > 0
        roots = np.where(safe, roots - np.where(safe, p, 0) / np.where(safe, dp, 1), roots)
    return roots


# ---------------------------------------------------------------------------
# Root data and fundamental matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RootData:
    """Right-half-plane determinant roots with their null vectors.

    ``vectors_right`` holds one column per root (Psi(lam_k) u_k = 0),
    ``vectors_left`` one row per root (w_k Psi(lam_k) = 0).  Complex roots
    come in exactly conjugate pairs with conjugate vectors.
    """

    roots: np.ndarray           # (n,) complex
    vectors_right: np.ndarray   # (n, n) complex, columns
    vectors_left: np.ndarray    # (n, n) complex, rows
    det_residuals: np.ndarray
    vector_residuals: np.ndarray
    semi_simple: bool


@dataclass(frozen=True)
class FundamentalSet:
    """First-passage triple of a spectrally negative model at extra killing
    ``beta``, plus the zero-extra-killing G and R needed by factor formulas."""

    model: MapModel
    beta: np.ndarray
    root_data: RootData
    G: np.ndarray
    R: np.ndarray
    H: np.ndarray
    pi: np.ndarray
    G0: np.ndarray
    R0: np.ndarray
    dual_residual: float


def _require_spectral_class(model: MapModel):
    if not model.spectrally_negative:
        raise DomainError("the spectral solver requires a spectrally negative model")
    for i, comp in enumerate(model.levy):
        if comp.nonincreasing():
            raise DomainError(
                f"phase {i} can never move up; first-passage theory excludes "
                "non-increasing components")


def _normalize_vector(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    idx = np.nonzero(np.abs(v) > 1e-8 * np.abs(v).max())[0][0]
    phase = v[idx] / abs(v[idx])
    return v / phase


def det_roots(model: MapModel, beta=None) -> RootData:
    """All determinant roots of the killed exponent in the right half-plane.

    Exactly n roots are kept when q + beta is nonzero; for an unkilled model
    with positive stationary drift the root at 0 is pinned analytically
    (null vector of ones) and n - 1 strictly positive-real-part roots are
    found numerically.
    """
    _require_spectral_class(model)
    n = model.n
    b = np.zeros(n) if beta is None else np.asarray(beta, dtype=float)
    if b.shape != (n,) or np.any(b < 0.0):
        raise DomainError("beta must be a nonnegative vector, one entry per phase")
    qb = model.kill + b
    boundary = not np.any(qb > 0.0)
    if boundary and stationary_drift(model) <= 0.0:
        raise DriftError("q = 0 requires positive stationary drift")

    coeffs, poles = _cleared_polynomial(model, b)
    if coeffs.size < 2:
        raise CountError("determinant polynomial is constant")
    raw = np.roots(coeffs[::-1])
    raw = _polish(coeffs, raw)
    # poles of the rational exponent masquerade as roots of the cleared form
    keep = np.ones(raw.shape, dtype=bool)
    for rho in poles:
        keep &= np.abs(raw + rho) > 1e-8 * (1.0 + rho)
    raw = raw[keep]
    if boundary:
        raw = raw[(raw.real > 1e-7) & (np.abs(raw) > 1e-7)]
        expected = n - 1
    else:
        raw = raw[raw.real > 1e-9]
        expected = n
    if raw.size != expected:
        raise CountError(
            f"found {raw.size} right-half-plane roots, expected {expected}")

    # exact conjugate symmetry: rebuild pairs from the upper half-plane
    real_roots = sorted(r.real for r in raw if abs(r.imag) <= 1e-9 * (1.0 + abs(r)))
    cplx = sorted((r for r in raw if abs(r.imag) > 1e-9 * (1.0 + abs(r))),
                  key=lambda z: (z.real, abs(z.imag), z.imag))
    if len(cplx) % 2:
        raise CountError("unpaired complex determinant root")
    upper = [z for z in cplx if z.imag > 0]
    if 2 * len(upper) != len(cplx):
        raise CountError("complex determinant roots do not pair conjugately")
    lam = [complex(r) for r in real_roots]
    for z in upper:
        lam.extend([z, z.conjugate()])
    if boundary:
        lam.insert(0, 0.0 + 0.0j)
    lam = np.array(sorted(lam, key=lambda z: (z.real, z.imag)), dtype=complex)

    gaps = np.abs(lam[:, None] - lam[None, :])[np.triu_indices(n, k=1)]
    if gaps.size and gaps.min() < _ROOT_COLLISION:
        raise MultiplicityError(
            f"determinant roots {gaps.min():.2e} apart; defective spectra are unsupported")

    U = np.zeros((n, n), dtype=complex)
    W = np.zeros((n, n), dtype=complex)
    det_res = np.zeros(n)
    vec_res = np.zeros(n)
    done: dict[int, int] = {}
    for k, lk in enumerate(lam):
        if boundary and k == 0:
            U[:, 0] = np.ones(n) / np.sqrt(n)
            pi = stationary(model)
            W[0, :] = pi / np.linalg.norm(pi)
            mat = psi(model, 0.0, b)
        else:
            partner = done.get(k)
            mat = psi(model, lk, b)
            if partner is None:
                uu, ss, vv = np.linalg.svd(mat)
                U[:, k] = _normalize_vector(vv[-1].conj())
                W[k, :] = _normalize_vector(uu[:, -1].conj())
                for k2 in range(k + 1, n):
                    if lam[k2] == lk.conjugate() and abs(lk.imag) > 0:
                        done[k2] = k
                        break
            else:
                U[:, k] = U[:, partner].conj()
                W[k, :] = W[partner, :].conj()
        det_res[k] = np.abs(np.linalg.det(mat)) / (1.0 + abs(lk)) ** n
        vec_res[k] = max(np.linalg.norm(mat @ U[:, k]), np.linalg.norm(W[k, :] @ mat))
    if np.abs(lam.imag).max(initial=0.0) == 0.0:
        U, W = U.real.astype(complex), W.real.astype(complex)
    return RootData(roots=lam, vectors_right=U, vectors_left=W,
                    det_residuals=det_res, vector_residuals=vec_res, semi_simple=True)


def _triple_from_roots(model: MapModel, b: np.ndarray, rd: RootData):
    lam, U, W = rd.roots, rd.vectors_right, rd.vectors_left
    n = model.n
    if np.linalg.cond(U) > _COND_LIMIT or np.linalg.cond(W) > _COND_LIMIT:
        raise IllConditionedError("null-vector basis condition number exceeds 1e10")
    G = -np.linalg.solve(U.T, (U * lam[None, :]).T).T
    R = np.linalg.solve(W, -lam[:, None] * W)
    H = np.zeros((n, n), dtype=complex)
    for k in range(n):
        dpsi = psi(model, lam[k], derivative=True)
        H += np.outer(U[:, k], W[k, :]) / (W[k, :] @ dpsi @ U[:, k])
    out = []
    for name, mat in (("G", G), ("R", R), ("H", H)):
        if np.abs(mat.imag).max() > 1e-10 * (1.0 + np.abs(mat.real).max()):
            raise IllConditionedError(f"{name} has non-cancelling imaginary parts")
        out.append(mat.real.copy())
    return out


def fundamental(model: MapModel, beta=None, check_dual: bool = True) -> FundamentalSet:
    """Fundamental triple (G, R, H) at extra killing ``beta``.

    The triple is assembled from the determinant roots; when ``check_dual``
    is set the dual model's triple is computed independently and the
    transpose relations through the stationary law are enforced to 1e-8.
    """
    n = model.n
    b = np.zeros(n) if beta is None else np.asarray(beta, dtype=float)
    rd = det_roots(model, b)
    G, R, H = _triple_from_roots(model, b, rd)
    pi = stationary(model)
    if np.any(b > 0.0):
        rd0 = det_roots(model, None)
        G0, R0, _ = _triple_from_roots(model, np.zeros(n), rd0)
    else:
        G0, R0 = G, R
    dual_residual = 0.0
    if check_dual:
        dm = dual(model)
        rdd = det_roots(dm, b)
        Gh, Rh, Hh = _triple_from_roots(dm, b, rdd)
        dpi = np.diag(pi)
        dpi_inv = np.diag(1.0 / pi)
        for left, right in ((Gh, dpi_inv @ R.T @ dpi),
                            (Rh, dpi_inv @ G.T @ dpi),
                            (Hh, dpi_inv @ H.T @ dpi)):
            res = np.abs(left - right).max() / (1.0 + np.abs(right).max())
            dual_residual = max(dual_residual, res)
        if dual_residual > _REL_HAT_TOL:
            raise IllConditionedError(
                f"dual transpose relations violated at {dual_residual:.2e}")
    return FundamentalSet(model=model, beta=b, root_data=rd, G=G, R=R, H=H,
                          pi=pi, G0=G0, R0=R0, dual_residual=dual_residual)


# ---------------------------------------------------------------------------
# Scalar reduction and the unkilled normalising vector
# ---------------------------------------------------------------------------

def phi_scalar(levy: LevyComponent, q: float, beta: float = 0.0) -> tuple[float, float]:
    """Positive root of the scalar exponent equation psi(x) = q + beta and
    the derivative of the root in the killing rate, 1 / psi'(root).

    Safeguarded Newton with a bisection bracket; the exponent is convex on
    the positive axis for the supported (no positive jumps) class.
    """
    if levy.nonincreasing():
        raise DomainError("scalar root requires a component that can move up")
    if levy.jump_rate > 0.0 and levy.jump_law.has_positive_mass():
        raise DomainError("scalar root solver requires no positive jumps")
    target = q + beta
    if target < 0.0:
        raise DomainError("killing rates must be nonnegative")

    def f(x):
        val = levy.drift * x + 0.5 * levy.sigma2 * x * x
        if levy.jump_rate > 0.0:
            val += levy.jump_rate * (levy.jump_law.mgf(x).real - 1.0)
        return val - target

    def fp(x):
        val = levy.drift + levy.sigma2 * x
        if levy.jump_rate > 0.0:
            val += levy.jump_rate * levy.jump_law.mgf(x, derivative=True).real
        return val

    if target == 0.0:
        mean = fp(0.0)
        if mean < 0.0:
            raise DomainError("zero killing needs nonnegative mean drift")
        return 0.0, (np.inf if mean == 0.0 else 1.0 / mean)

    hi = 1.0
    for _ in range(200):
        if f(hi) > 0.0:
            break
        hi *= 2.0
    else:
        raise ConvergenceError("could not bracket the scalar root")
    lo = 0.0
    x = hi
    for _ in range(100):
        fx = f(x)
        if fx > 0.0:
            hi = x
        else:
            lo = x
        step = fx / fp(x)
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) < 1e-15 * (1.0 + abs(x)) and abs(fx) < 1e-12 * (1.0 + target):
            x = x_new
            break
        x = x_new
    else:
        raise ConvergenceError("scalar root iteration did not converge in 100 steps")
    return x, 1.0 / fp(x)


def r_vector(model: MapModel) -> np.ndarray:
    """Null direction of R for an unkilled model, normalised against the
    stationary law; requires positive stationary drift."""
    if np.any(model.kill > 0.0):
        raise DomainError("r_vector applies to unkilled models only")
    if stationary_drift(model) <= 0.0:
        raise DriftError("r_vector requires positive stationary drift")
    fund = fundamental(model, check_dual=False)
    _, s, vt = np.linalg.svd(fund.R)
    scale = s[0] if s[0] > 0 else 1.0
    if s[-1] > 1e-8 * scale:
        raise DriftError("R has no null vector; stationary drift assumption violated")
    r = vt[-1].real
    r = r / (fund.pi @ r)
    if np.any(r < -1e-10):
        raise DriftError("normalising vector is not nonnegative")
    return np.clip(r, 0.0, None)
