"""Closed-form fluctuation quantities of spectrally negative models.

Everything here is assembled from a :class:`~mapflux.spectral.FundamentalSet`:
the five transform factors of the killed process (killing-time transform, its
supremum/infimum splitting factors and the two conditioned-process factors),
the diagonal correction vectors that enter the full factorization, the
last-exit transform, and the initial law of the process conditioned to stay
below its starting level.

Conventions: ``alpha`` weights the level, the vector ``beta`` weights the
time spent in each phase.  Factors on the supremum side live on
Re(alpha) <= 0, factors on the infimum side on Re(alpha) >= 0 away from
determinant roots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ClassError, DomainError, DriftError, NearSingularError
from .model import JumpLaw, MapModel, PhaseClass, dual, phase_partition, psi
from .spectral import FundamentalSet, fundamental, r_vector
from .model import stationary_drift

FACTOR_KINDS = ("killing", "sup", "inf", "cond_up", "cond_down")

_ROOT_EXCLUSION = 1e-6
_HALF_PLANE_TOL = 1e-12


@dataclass(frozen=True)
class WhFactor:
    """One transform factor evaluated at (alpha, beta)."""

    kind: str
    alpha: complex
    beta: np.ndarray
    value: np.ndarray


@dataclass(frozen=True)
class ReversalConstants:
    """Scaling vectors appearing in the time-reversal identities.

    inf_mass[j]        stationary kill mass whose infimum phase is j:
                       sum_i pi_i q_i P_i(infimum phase = j).
    dual_sup_mass[j]   same construction on the dual with the supremum phase;
                       this is the diagonal correction of the full
                       factorization.
    dual_inf_mass[j]   dual infimum-phase version, correcting the
                       conditioned-to-stay-below factor.
    creep_mass[j]      aggregate intensity of continuous upward passage in
                       phase j over all levels, -(pi*q) G^{-1} as a row.
    dual_creep_mass[j] the dual counterpart, -pi_j (R^{-1} q)_j.
    """

    inf_mass: np.ndarray
    dual_sup_mass: np.ndarray
    dual_inf_mass: np.ndarray
    creep_mass: np.ndarray
    dual_creep_mass: np.ndarray


@dataclass(frozen=True)
class InitialLawDensity:
    """Initial law of the conditioned-to-stay-below process started from an
    upward phase, as a density factor against the jump measure.

    ``factors[j]`` multiplies the (phase, j) jump measure at level ``x``;
    ``constant`` is the total non-killed mass scale and ``atom`` the
    probability of immediate killing.
    """

    phase: int
    x: float
    factors: np.ndarray
    constant: float
    atom: float


# ---------------------------------------------------------------------------
# Factor evaluation
# ---------------------------------------------------------------------------

def _psi_inv_times(fund: FundamentalSet, alpha: complex, rhs: np.ndarray) -> np.ndarray:
    """(Psi^beta(alpha))^{-1} rhs with a guard against determinant roots."""
    gap = np.abs(fund.root_data.roots - alpha).min()
    if gap < _ROOT_EXCLUSION:
        raise NearSingularError(
            f"alpha within {gap:.1e} of a determinant root; evaluation rejected")
    return np.linalg.solve(psi(fund.model, alpha, fund.beta), rhs)


def wh_factor(fund: FundamentalSet, kind: str, alpha: complex) -> WhFactor:
    """Evaluate one factor at ``alpha`` (extra killing taken from ``fund``).

    killing    -(Psi^b(a))^{-1} Dq, the joint transform at the killing time.
    sup        (a I + G^b)^{-1} D(G 1), supremum with its phase.
    inf        -(Psi^b(a))^{-1} (a I + R^b) D(R^{-1} q), infimum with its phase.
    cond_up    D(R^{-1} q)^{-1} (a I + R^b)^{-1} Dq, killed transform of the
               process conditioned to stay positive.
    cond_down  -D(G 1)^{-1} (a I + G^b) (Psi^b(a))^{-1} Dq, conditioned to
               stay below the start.

    The diagonal weights use the zero-extra-killing G and R.
    """
    if kind not in FACTOR_KINDS:
        raise DomainError(f"unknown factor kind {kind!r}")
    model = fund.model
    q = model.kill
    n = model.n
    if not np.any(q > 0.0):
        raise DomainError("transform factors require a killed model (q != 0)")
    a = complex(alpha)
    eye = np.eye(n)
    if kind in ("sup", "cond_up"):
        if a.real > _HALF_PLANE_TOL:
            raise DomainError(f"{kind} factor requires Re(alpha) <= 0")
    else:
        if a.real < -_HALF_PLANE_TOL:
            raise DomainError(f"{kind} factor requires Re(alpha) >= 0")
    if kind in ("inf", "cond_up"):
        if not np.all(q > 0.0):
            raise DomainError(f"{kind} factor requires strictly positive killing rates")
        rinv_q = np.linalg.solve(fund.R0, q)
        if np.any(rinv_q >= 0.0):
            raise NearSingularError("R^{-1} q is not strictly negative")

    if kind == "killing":
        value = -_psi_inv_times(fund, a, np.diag(q).astype(complex))
    elif kind == "sup":
        value = np.linalg.solve(a * eye + fund.G, np.diag(fund.G0 @ np.ones(n)).astype(complex))
    elif kind == "inf":
        value = -_psi_inv_times(fund, a, (a * eye + fund.R) @ np.diag(rinv_q))
    elif kind == "cond_up":
        value = np.diag(1.0 / rinv_q) @ np.linalg.solve(a * eye + fund.R,
                                                        np.diag(q).astype(complex))
    else:  # cond_down
        g1 = fund.G0 @ np.ones(n)
        value = -np.diag(1.0 / g1) @ (a * eye + fund.G) @ _psi_inv_times(
            fund, a, np.diag(q).astype(complex))
    return WhFactor(kind=kind, alpha=a, beta=fund.beta, value=value)


# ---------------------------------------------------------------------------
# Factorization residuals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualPoint:
    alpha: complex
    beta: tuple[float, ...]
    identity: str
    residual: float


@dataclass(frozen=True)
class ResidualReport:
    points: tuple[ResidualPoint, ...]

    def max_by_identity(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for p in self.points:
            out[p.identity] = max(out.get(p.identity, 0.0), p.residual)
        return out

    @property
    def max_residual(self) -> float:
        return max((p.residual for p in self.points), default=0.0)


def _rel(diff: np.ndarray, ref: np.ndarray) -> float:
    return float(np.abs(diff).max() / (1.0 + np.abs(ref).max()))


def wh_residuals(fund: FundamentalSet, alphas, betas) -> ResidualReport:
    """Residuals of the factorization identities over an (alpha, beta) grid.

    The grid alphas must lie on the imaginary axis, where every factor is
    defined at a common point.  Checked pointwise: the killing transform
    against the product of infimum and conditioned-up factors, against
    supremum times conditioned-down, and against the full form with the dual
    supremum factor and its diagonal correction; plus both transpose
    identities linking the conditioned factors to the dual extremum factors.
    """
    model = fund.model
    pi = fund.pi
    q = model.kill
    dm = dual(model)
    consts = reversal_constants(fund)
    dpi_dq = np.diag(pi * q)
    points = []
    for beta in betas:
        b = np.asarray(beta, dtype=float)
        fb = fundamental(model, b, check_dual=False)
        db = fundamental(dm, b, check_dual=False)
        for alpha in alphas:
            a = complex(alpha)
            if abs(a.real) > _HALF_PLANE_TOL:
                raise DomainError("residual grids must stay on the imaginary axis")
            kill = wh_factor(fb, "killing", a).value
            inf_ = wh_factor(fb, "inf", a).value
            sup = wh_factor(fb, "sup", a).value
            cup = wh_factor(fb, "cond_up", a).value
            cdown = wh_factor(fb, "cond_down", a).value
            dsup = wh_factor(db, "sup", a).value
            dinf = wh_factor(db, "inf", a).value
            bt = tuple(b)
            points.append(ResidualPoint(a, bt, "kill=inf*cond_up",
                                        _rel(kill - inf_ @ cup, kill)))
            points.append(ResidualPoint(a, bt, "kill=sup*cond_down",
                                        _rel(kill - sup @ cdown, kill)))
            full = inf_ @ np.diag(1.0 / consts.dual_sup_mass) @ dsup.T @ dpi_dq
            points.append(ResidualPoint(a, bt, "kill=full_product",
                                        _rel(kill - full, kill)))
            points.append(ResidualPoint(a, bt, "cond_up_transpose",
                                        _rel(np.diag(consts.dual_sup_mass) @ cup
                                             - dsup.T @ dpi_dq, cup)))
            points.append(ResidualPoint(a, bt, "cond_down_transpose",
                                        _rel(np.diag(consts.dual_inf_mass) @ cdown
                                             - dinf.T @ dpi_dq, cdown)))
    return ResidualReport(points=tuple(points))


# ---------------------------------------------------------------------------
# Reversal constants, last exit, conditioned initial law
# ---------------------------------------------------------------------------

def reversal_constants(fund: FundamentalSet) -> ReversalConstants:
    """Scaling vectors of the reversal identities (all at zero extra killing)."""
    model = fund.model
    q = model.kill
    if not np.all(q > 0.0):
        raise DomainError("reversal constants require strictly positive killing rates")
    pi = fund.pi
    n = model.n
    base = fund if not np.any(fund.beta > 0.0) else fundamental(model, check_dual=False)
    piq = pi * q
    p_inf = wh_factor(base, "inf", 0.0).value.real
    inf_mass = piq @ p_inf
    dm = dual(model)
    dfund = fundamental(dm, check_dual=False)
    ghat = -dfund.G0 @ np.ones(n)
    p_sup_hat = -np.linalg.solve(dfund.G0, np.diag(ghat))
    dual_sup_mass = p_sup_hat.T @ piq
    p_inf_hat = wh_factor(dfund, "inf", 0.0).value.real
    dual_inf_mass = p_inf_hat.T @ piq
    creep_mass = -np.linalg.solve(base.G0.T, piq)
    dual_creep_mass = -pi * np.linalg.solve(base.R0, q)
    return ReversalConstants(inf_mass=inf_mass, dual_sup_mass=dual_sup_mass,
                             dual_inf_mass=dual_inf_mass, creep_mass=creep_mass,
                             dual_creep_mass=dual_creep_mass)


def last_exit_transform(fund: FundamentalSet) -> np.ndarray:
    """Joint transform of the per-phase times up to the last exit from the
    negative half-line together with the phase there.

    Killed models: H^b D(-R^{-1} q).  Unkilled models with positive
    stationary drift: mu H^b D(r) with r the normalised null direction of R.
    """
    model = fund.model
    q = model.kill
    if np.any(q > 0.0):
        if not np.all(q > 0.0):
            raise DomainError("last-exit transform needs q strictly positive or zero")
        rinv_q = np.linalg.solve(fund.R0, q)
        return fund.H @ np.diag(-rinv_q)
    mu = stationary_drift(model)
    if mu <= 0.0:
        raise DriftError("unkilled last exit requires positive stationary drift")
    r = r_vector(model)
    return mu * fund.H @ np.diag(r)


def cond_down_initial_law(fund: FundamentalSet, phase: int, x: float) -> InitialLawDensity:
    """Density factor of the conditioned-to-stay-below initial law at level
    ``x`` < 0, against the jump measure out of ``phase``.

    The factor for target phase j is (1 - e_j e^{-Gx} 1) / (-d_i e_i G 1);
    the immediate-killing atom is q_i divided by the same normaliser.
    """
    model = fund.model
    classes = phase_partition(model)
    if classes[phase] is not PhaseClass.UP:
        raise ClassError(f"phase {phase} is {classes[phase].value}, needs an upward phase")
    if x >= 0.0:
        raise DomainError("the conditioned initial law lives on x < 0")
    G = fund.G0
    n = model.n
    denom = -model.levy[phase].drift * float(G[phase] @ np.ones(n))
    factors = (1.0 - expm(-G * x) @ np.ones(n)) / denom
    c_i = denom - model.kill[phase]
    return InitialLawDensity(phase=phase, x=x, factors=factors,
                             constant=c_i, atom=model.kill[phase] / denom)


# ---------------------------------------------------------------------------
# Jump-measure integrals (closed forms used by the verification suites)
# ---------------------------------------------------------------------------

def jump_matrix_transform(law: JumpLaw, G: np.ndarray) -> np.ndarray:
    """E exp(-G V) for a jump V with the given law, as a matrix function."""
    if law.kind == "point":
        return expm(-G * law.value)
    n = G.shape[0]
    if law.kind == "exp-neg":
        return law.rate * np.linalg.inv(law.rate * np.eye(n) - G)
    if law.kind == "exp-pos":
        return law.rate * np.linalg.inv(law.rate * np.eye(n) + G)
    out = np.zeros_like(G)
    for w, comp in zip(law.weights, law.components):
        out = out + w * jump_matrix_transform(comp, G)
    return out


def first_passage_row_identity(fund: FundamentalSet, phase: int) -> np.ndarray:
    """Row residual of the integral equation defining G at an upward phase:
    integral of the jump measure against (e^{-Gx} - I), plus the exponent row
    at 0, minus drift times the G row.  Zero for a correct G."""
    model = fund.model
    classes = phase_partition(model)
    if classes[phase] is not PhaseClass.UP:
        raise ClassError("the row identity is stated for upward phases")
    n = model.n
    G = fund.G0
    row = psi(model, 0.0).real[phase].copy()
    row -= model.levy[phase].drift * G[phase]
    comp = model.levy[phase]
    if comp.jump_rate > 0.0:
        m = jump_matrix_transform(comp.jump_law, G)
        row += comp.jump_rate * (m[phase] - np.eye(n)[phase])
    for j in range(n):
        if j != phase and model.switch_rate[phase, j] > 0.0:
            m = jump_matrix_transform(model.switch_jump[(phase, j)], G)
            row += model.switch_rate[phase, j] * (m[j] - np.eye(n)[j])
    return row


def initial_law_bin_masses(fund: FundamentalSet, phase: int, edges) -> tuple[np.ndarray, float, float]:
    """Exact masses of the conditioned-to-stay-below initial law on level
    bins [edges[k], edges[k+1]) (edges negative, increasing), per target
    phase.  Returns (masses[k, j], normaliser, atom probability)."""
    model = fund.model
    classes = phase_partition(model)
    if classes[phase] is not PhaseClass.UP:
        raise ClassError("initial-law masses are stated for upward phases")
    G = fund.G0
    n = model.n
    edges = np.asarray(edges, dtype=float)
    if np.any(edges > 0.0) or np.any(np.diff(edges) <= 0.0):
        raise DomainError("edges must be increasing and nonpositive")
    denom = -model.levy[phase].drift * float(G[phase] @ np.ones(n))
    ones = np.ones(n)
    masses = np.zeros((len(edges) - 1, n))

    def law_bin(law: JumpLaw, j: int, x0: float, x1: float) -> float:
        if law.kind == "point":
            v = law.value
            if v == 0.0 or not (x0 <= v < x1):
                return 0.0
            return float(1.0 - expm(-G * v)[j] @ ones)
        if law.kind == "exp-neg":
            rho = law.rate
            plain = np.exp(rho * x1) - np.exp(rho * x0)
            A = rho * np.eye(n) - G
            mat = np.linalg.solve(A, expm(A * x1) - expm(A * x0))
            return float(plain - rho * (mat[j] @ ones))
        if law.kind == "mixture":
            return sum(w * law_bin(c, j, x0, x1)
                       for w, c in zip(law.weights, law.components))
        raise DomainError("positive jumps have no mass below 0")

    for k in range(len(edges) - 1):
        x0, x1 = edges[k], edges[k + 1]
        comp = model.levy[phase]
        if comp.jump_rate > 0.0:
            # within-phase jumps keep the phase
            masses[k, phase] += comp.jump_rate * law_bin(comp.jump_law, phase, x0, x1)
        for j in range(n):
            if j != phase and model.switch_rate[phase, j] > 0.0:
                masses[k, j] += model.switch_rate[phase, j] * \
                    law_bin(model.switch_jump[(phase, j)], j, x0, x1)
    return masses / denom, denom, model.kill[phase] / denom
