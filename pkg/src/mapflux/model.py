"""Markov-modulated additive process models and their matrix exponent.

A model couples a finite irreducible phase chain with one scalar additive
component per phase (drift, Brownian variance, compound-Poisson jumps),
jumps attached to phase switches, and phase-dependent killing rates.  The
matrix exponent ``psi`` characterises the joint law of (level, phase) and is
the single object every analytic module is built from.

Jump laws are restricted to point masses, one-sided exponentials and finite
mixtures of those, which keeps every moment transform in closed form and the
exponent a rational matrix function (point masses at 0 aside, see
:mod:`mapflux.spectral`).
"""

from __future__ import annotations

import cmath
import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import (
    DegenerateError,
    DomainError,
    ParseError,
    PoleError,
    SingularError,
    ValidationError,
)

_ATOL = 1e-12
_POLE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Jump laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpLaw:
    """Parametric jump distribution with closed-form moment transform.

    ``kind`` is one of ``point`` (unit mass at ``value``), ``exp-neg``
    (negative of an exponential with ``rate``, support (-inf, 0)),
    ``exp-pos`` (exponential with ``rate``, support (0, inf)) or ``mixture``
    (finite convex combination of non-mixture laws).
    """

    kind: str
    value: float = 0.0
    rate: float = 0.0
    weights: tuple[float, ...] = ()
    components: tuple["JumpLaw", ...] = ()

    def __post_init__(self):
        if self.kind == "point":
            pass
        elif self.kind in ("exp-neg", "exp-pos"):
            if not self.rate > 0.0:
                raise ValidationError(f"{self.kind} law requires a strictly positive rate")
        elif self.kind == "mixture":
            if len(self.weights) != len(self.components) or not self.components:
                raise ValidationError("mixture needs matching, non-empty weights and components")
            if any(w < 0.0 for w in self.weights):
                raise ValidationError("mixture weights must be nonnegative")
            if abs(sum(self.weights) - 1.0) > _ATOL:
                raise ValidationError("mixture weights must sum to 1 within 1e-12")
            if any(c.kind == "mixture" for c in self.components):
                raise ValidationError("mixture components must not be mixtures themselves")
        else:
            raise ValidationError(f"unknown jump law kind {self.kind!r}")

    # -- constructors --------------------------------------------------

    @staticmethod
    def point(value: float) -> "JumpLaw":
        return JumpLaw("point", value=float(value))

    @staticmethod
    def exp_neg(rate: float) -> "JumpLaw":
        return JumpLaw("exp-neg", rate=float(rate))

    @staticmethod
    def exp_pos(rate: float) -> "JumpLaw":
        return JumpLaw("exp-pos", rate=float(rate))

    @staticmethod
    def mixture(weights, components) -> "JumpLaw":
        return JumpLaw("mixture", weights=tuple(float(w) for w in weights),
                       components=tuple(components))

    # -- analytic structure --------------------------------------------

    def mgf(self, alpha: complex, derivative: bool = False) -> complex:
        """E exp(alpha U), or its derivative in alpha.

        Poles are rejected outright: evaluating exp-neg(rho) within 1e-12 of
        alpha = -rho raises :class:`PoleError`, and exp-pos(rho) requires
        Re(alpha) < rho (:class:`DomainError` otherwise).
        """
        a = complex(alpha)
        if self.kind == "point":
            e = cmath.exp(a * self.value)
            return self.value * e if derivative else e
        if self.kind == "exp-neg":
            rho = self.rate
            if abs(a + rho) < _POLE_TOL:
                raise PoleError(f"exp-neg({rho}) transform has a pole at alpha = {-rho}")
            return -rho / (rho + a) ** 2 if derivative else rho / (rho + a)
        if self.kind == "exp-pos":
            rho = self.rate
            if a.real >= rho:
                raise DomainError(f"exp-pos({rho}) transform needs Re(alpha) < {rho}")
            if abs(a - rho) < _POLE_TOL:
                raise PoleError(f"exp-pos({rho}) transform has a pole at alpha = {rho}")
            return rho / (rho - a) ** 2 if derivative else rho / (rho - a)
        return sum(w * c.mgf(a, derivative) for w, c in zip(self.weights, self.components))

    def mean(self) -> float:
        if self.kind == "point":
            return self.value
        if self.kind == "exp-neg":
            return -1.0 / self.rate
        if self.kind == "exp-pos":
            return 1.0 / self.rate
        return sum(w * c.mean() for w, c in zip(self.weights, self.components))

    def support_nonpositive(self) -> bool:
        """True when the law puts no mass on (0, inf)."""
        if self.kind == "point":
            return self.value <= 0.0
        if self.kind == "exp-neg":
            return True
        if self.kind == "exp-pos":
            return False
        return all(c.support_nonpositive() for w, c in zip(self.weights, self.components)
                   if w > 0.0)

    def has_positive_mass(self) -> bool:
        """True when the law puts positive mass on (0, inf)."""
        if self.kind == "point":
            return self.value > 0.0
        if self.kind == "exp-neg":
            return False
        if self.kind == "exp-pos":
            return True
        return any(w > 0.0 and c.has_positive_mass()
                   for w, c in zip(self.weights, self.components))


def jump_mgf(law: JumpLaw, alpha: complex, derivative: bool = False) -> complex:
    """Moment transform E exp(alpha U) of a jump law (module-level alias)."""
    return law.mgf(alpha, derivative)


# ---------------------------------------------------------------------------
# Phases and models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevyComponent:
    """Per-phase additive dynamics: linear drift, Brownian variance and
    compound-Poisson jumps with a parametric law (present iff jump_rate > 0)."""

    drift: float
    sigma2: float = 0.0
    jump_rate: float = 0.0
    jump_law: JumpLaw | None = None

    def __post_init__(self):
        if self.sigma2 < 0.0:
            raise ValidationError("sigma2 must be nonnegative")
        if self.jump_rate < 0.0:
            raise ValidationError("jump_rate must be nonnegative")
        if (self.jump_rate > 0.0) != (self.jump_law is not None):
            raise ValidationError("jump_law must be present exactly when jump_rate > 0")

    def nonincreasing(self) -> bool:
        """True when the component alone can never move up."""
        if self.sigma2 > 0.0 or self.drift > 0.0:
            return False
        return not (self.jump_rate > 0.0 and self.jump_law.has_positive_mass())


class PhaseClass(enum.Enum):
    """Local behaviour of a phase: drifts up, drifts down (or compound
    Poisson), or oscillates (Brownian part present)."""

    UP = "up"
    DOWN = "down"
    OSC = "osc"


@dataclass(frozen=True, eq=False)
class MapModel:
    """A Markov-modulated additive process with phase-dependent killing.

    Parameters
    ----------
    levy : per-phase additive components.
    switch_rate : (n, n) nonnegative matrix of phase-switch rates, zero diagonal.
    switch_jump : jump law attached to each switch with positive rate,
        keyed by (from, to).
    kill : per-phase nonnegative killing rates.
    phase_names : optional labels used by the JSON format and reports.
    """

    levy: tuple[LevyComponent, ...]
    switch_rate: np.ndarray
    switch_jump: dict[tuple[int, int], JumpLaw] = field(default_factory=dict)
    kill: np.ndarray = None
    phase_names: tuple[str, ...] = ()

    def __post_init__(self):
        levy = tuple(self.levy)
        n = len(levy)
        if n < 1:
            raise ValidationError("a model needs at least one phase")
        q = np.zeros(n) if self.kill is None else np.asarray(self.kill, dtype=float)
        rates = np.asarray(self.switch_rate, dtype=float)
        if rates.shape != (n, n):
            raise ValidationError(f"switch_rate must be {n}x{n}")
        if np.any(rates < 0.0) or np.any(np.diag(rates) != 0.0):
            raise ValidationError("switch rates must be nonnegative with zero diagonal")
        if q.shape != (n,) or np.any(q < 0.0):
            raise ValidationError("kill must be a nonnegative vector of length n")
        for (i, j), law in self.switch_jump.items():
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"switch jump key {(i, j)} out of range")
            if rates[i, j] <= 0.0:
                raise ValidationError(f"switch jump given for zero-rate switch {(i, j)}")
            if not isinstance(law, JumpLaw):
                raise ValidationError("switch jumps must be JumpLaw instances")
        for (i, j) in zip(*np.nonzero(rates)):
            if (int(i), int(j)) not in self.switch_jump:
                raise ValidationError(f"switch {(int(i), int(j))} has a rate but no jump law")
        names = tuple(self.phase_names) or tuple(f"p{i}" for i in range(n))
        if len(names) != n or len(set(names)) != n:
            raise ValidationError("phase names must be unique, one per phase")
        if n > 1:
            ncomp, _ = connected_components(rates > 0.0, directed=True, connection="strong")
            if ncomp != 1:
                raise ValidationError("the phase chain must be irreducible")
        object.__setattr__(self, "levy", levy)
        object.__setattr__(self, "switch_rate", rates)
        object.__setattr__(self, "kill", q)
        object.__setattr__(self, "phase_names", names)

    # -- derived structure ----------------------------------------------

    @property
    def n(self) -> int:
        return len(self.levy)

    @property
    def drift(self) -> np.ndarray:
        return np.array([c.drift for c in self.levy])

    @property
    def sigma2(self) -> np.ndarray:
        return np.array([c.sigma2 for c in self.levy])

    @property
    def jump_rate(self) -> np.ndarray:
        return np.array([c.jump_rate for c in self.levy])

    @property
    def spectrally_negative(self) -> bool:
        """True iff no within-phase or switch jump has support above 0."""
        for c in self.levy:
            if c.jump_rate > 0.0 and not c.jump_law.support_nonpositive():
                return False
        return all(law.support_nonpositive() for law in self.switch_jump.values())

    def has_nonincreasing_phase(self) -> bool:
        return any(c.nonincreasing() for c in self.levy)

    def all_bounded_variation(self) -> bool:
        return not np.any(self.sigma2 > 0.0)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def psi(model: MapModel, alpha: complex, beta=None, derivative: bool = False) -> np.ndarray:
    """Matrix exponent at ``alpha`` with extra killing ``beta``.

    Entry (i, i) is d_i a + s_i^2 a^2 / 2 + lam_i (E e^{aY_i} - 1) minus all
    outflow rates (switching, killing, extra killing); entry (i, j) is
    Q_ij E e^{aU_ij}.  With ``derivative`` set, returns the entrywise
    derivative in alpha instead (killing constants drop out).
    """
    n = model.n
    b = np.zeros(n) if beta is None else np.asarray(beta, dtype=float)
    if b.shape != (n,):
        raise DomainError("beta must be a vector with one entry per phase")
    if np.any(b < 0.0):
        raise DomainError("beta must be nonnegative")
    a = complex(alpha)
    out = np.zeros((n, n), dtype=complex)
    for i, comp in enumerate(model.levy):
        if derivative:
            diag = comp.drift + comp.sigma2 * a
            if comp.jump_rate > 0.0:
                diag += comp.jump_rate * comp.jump_law.mgf(a, derivative=True)
        else:
            diag = comp.drift * a + 0.5 * comp.sigma2 * a * a
            if comp.jump_rate > 0.0:
                diag += comp.jump_rate * (comp.jump_law.mgf(a) - 1.0)
            diag -= model.switch_rate[i].sum() + model.kill[i] + b[i]
        out[i, i] = diag
    for (i, j), law in model.switch_jump.items():
        out[i, j] = model.switch_rate[i, j] * law.mgf(a, derivative=derivative)
    return out


def phase_partition(model: MapModel) -> list[PhaseClass]:
    """Classify each phase as UP, DOWN or OSC.

    Any Brownian part makes a phase OSC; otherwise the drift sign decides,
    with driftless compound-Poisson phases classed DOWN (they sit still
    between jumps, so extrema are left from below).
    """
    classes = []
    for i, c in enumerate(model.levy):
        if c.sigma2 > 0.0:
            classes.append(PhaseClass.OSC)
        elif c.drift > 0.0:
            classes.append(PhaseClass.UP)
        elif c.drift < 0.0:
            classes.append(PhaseClass.DOWN)
        elif c.jump_rate > 0.0:
            classes.append(PhaseClass.DOWN)
        else:
            raise DegenerateError(f"phase {i} is constant (no drift, noise or jumps)")
    return classes


def stationary(model: MapModel, strip_killing: bool = False) -> np.ndarray:
    """Stationary law of the phase chain with killing removed.

    Solves pi (Psi(0) + diag(q)) = 0 with pi summing to 1.  The
    ``strip_killing`` flag is accepted for symmetry but both readings
    coincide: adding diag(q) back to Psi(0) is exactly the conservative
    generator.
    """
    del strip_killing
    gen = psi(model, 0.0).real + np.diag(model.kill)
    if model.n == 1:
        return np.ones(1)
    _, s, vt = np.linalg.svd(gen.T)
    scale = s[0] if s[0] > 0 else 1.0
    if s[-1] > 1e-9 * scale:
        raise SingularError("conservative generator has no null vector")
    if model.n > 1 and s[-2] < 1e-9 * scale:
        raise SingularError("conservative generator is rank deficient beyond tolerance")
    pi = vt[-1].real
    pi = pi / pi.sum()
    if np.any(pi <= 0.0):
        raise SingularError("stationary vector is not strictly positive")
    return pi


def dual(model: MapModel) -> MapModel:
    """Time-reversed model: same per-phase dynamics and killing, switch rates
    rebalanced by the stationary law and switch jumps transposed."""
    pi = stationary(model)
    n = model.n
    rates = np.zeros((n, n))
    jumps = {}
    for i in range(n):
        for j in range(n):
            if i != j and model.switch_rate[j, i] > 0.0:
                rates[i, j] = pi[j] * model.switch_rate[j, i] / pi[i]
                jumps[(i, j)] = model.switch_jump[(j, i)]
    return MapModel(levy=model.levy, switch_rate=rates, switch_jump=jumps,
                    kill=model.kill.copy(), phase_names=model.phase_names)


def stationary_drift(model: MapModel) -> float:
    """Mean level increment per unit time under the stationary phase law."""
    pi = stationary(model)
    return float(pi @ psi(model, 0.0, derivative=True).real @ np.ones(model.n))


# ---------------------------------------------------------------------------
# JSON model format
# ---------------------------------------------------------------------------

def _law_from_dict(d) -> JumpLaw:
    if not isinstance(d, dict) or "type" not in d:
        raise ParseError("jump law must be an object with a 'type' key")
    kind = d["type"]
    try:
        if kind == "point":
            _expect_keys(d, {"type", "value"})
            return JumpLaw.point(d["value"])
        if kind == "exp-neg":
            _expect_keys(d, {"type", "rate"})
            return JumpLaw.exp_neg(d["rate"])
        if kind == "exp-pos":
            _expect_keys(d, {"type", "rate"})
            return JumpLaw.exp_pos(d["rate"])
        if kind == "mixture":
            _expect_keys(d, {"type", "weights", "components"})
            return JumpLaw.mixture(d["weights"], [_law_from_dict(c) for c in d["components"]])
    except ValidationError as exc:
        raise ParseError(str(exc)) from exc
    raise ParseError(f"unknown jump law type {kind!r}")


def _law_to_dict(law: JumpLaw) -> dict:
    if law.kind == "point":
        return {"type": "point", "value": law.value}
    if law.kind in ("exp-neg", "exp-pos"):
        return {"type": law.kind, "rate": law.rate}
    return {"type": "mixture", "weights": list(law.weights),
            "components": [_law_to_dict(c) for c in law.components]}


def _expect_keys(d: dict, allowed: set):
    extra = set(d) - allowed
    if extra:
        raise ParseError(f"unknown keys {sorted(extra)}; allowed: {sorted(allowed)}")


def model_from_dict(doc: dict) -> MapModel:
    """Build a model from the documented JSON structure; unknown keys are
    rejected and all structural invariants are re-validated."""
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object")
    _expect_keys(doc, {"phases", "switch", "kill"})
    phases = doc.get("phases")
    if not isinstance(phases, list) or not phases:
        raise ParseError("'phases' must be a non-empty array")
    names, levy = [], []
    for p in phases:
        if not isinstance(p, dict):
            raise ParseError("each phase must be an object")
        _expect_keys(p, {"name", "drift", "sigma2", "jump"})
        if "name" not in p or "drift" not in p:
            raise ParseError("each phase needs 'name' and 'drift'")
        names.append(str(p["name"]))
        rate, law = 0.0, None
        if "jump" in p and p["jump"] is not None:
            j = p["jump"]
            _expect_keys(j, {"rate", "law"})
            rate = float(j.get("rate", 0.0))
            if rate > 0.0:
                law = _law_from_dict(j["law"])
            elif "law" in j and j["law"] is not None:
                raise ParseError("phase jump law given with zero rate")
        try:
            levy.append(LevyComponent(drift=float(p["drift"]),
                                      sigma2=float(p.get("sigma2", 0.0)),
                                      jump_rate=rate, jump_law=law))
        except ValidationError as exc:
            raise ParseError(str(exc)) from exc
    n = len(levy)
    index = {nm: i for i, nm in enumerate(names)}
    if len(index) != n:
        raise ParseError("phase names must be unique")
    rates = np.zeros((n, n))
    jumps = {}
    for sw in doc.get("switch", []):
        _expect_keys(sw, {"from", "to", "rate", "jump"})
        try:
            i, j = index[sw["from"]], index[sw["to"]]
        except KeyError as exc:
            raise ParseError(f"switch references unknown phase {exc}") from exc
        if i == j:
            raise ParseError("switch 'from' and 'to' must differ")
        rates[i, j] = float(sw["rate"])
        if rates[i, j] > 0.0:
            jumps[(i, j)] = _law_from_dict(sw["jump"])
    kill = doc.get("kill", [0.0] * n)
    if not isinstance(kill, list) or len(kill) != n:
        raise ParseError("'kill' must be an array with one entry per phase")
    try:
        return MapModel(levy=tuple(levy), switch_rate=rates, switch_jump=jumps,
                        kill=np.array([float(q) for q in kill]), phase_names=tuple(names))
    except ValidationError as exc:
        raise ParseError(str(exc)) from exc


def model_to_dict(model: MapModel) -> dict:
    """Normalized JSON form of a model (round-trips through model_from_dict)."""
    phases = []
    for name, c in zip(model.phase_names, model.levy):
        p = {"name": name, "drift": c.drift, "sigma2": c.sigma2}
        if c.jump_rate > 0.0:
            p["jump"] = {"rate": c.jump_rate, "law": _law_to_dict(c.jump_law)}
        phases.append(p)
    switch = []
    for i in range(model.n):
        for j in range(model.n):
            if model.switch_rate[i, j] > 0.0:
                switch.append({"from": model.phase_names[i], "to": model.phase_names[j],
                               "rate": model.switch_rate[i, j],
                               "jump": _law_to_dict(model.switch_jump[(i, j)])})
    return {"phases": phases, "switch": switch, "kill": [float(q) for q in model.kill]}


def load_model(path) -> MapModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read model file {path}: {exc}") from exc
    return model_from_dict(doc)


def save_model(model: MapModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Desk-scale reference models used throughout the test and verification suites
# ---------------------------------------------------------------------------

def m1() -> MapModel:
    """Single phase: drift 2, unit-rate exp(1) downward jumps, kill 0.5."""
    return MapModel(
        levy=(LevyComponent(drift=2.0, jump_rate=1.0, jump_law=JumpLaw.exp_neg(1.0)),),
        switch_rate=np.zeros((1, 1)),
        kill=np.array([0.5]),
        phase_names=("only",),
    )


def m2() -> MapModel:
    """Two upward phases, spectrally negative, non-trivial switch jumps."""
    return MapModel(
        levy=(
            LevyComponent(drift=2.0, jump_rate=1.0, jump_law=JumpLaw.exp_neg(1.0)),
            LevyComponent(drift=1.0),
        ),
        switch_rate=np.array([[0.0, 1.0], [2.0, 0.0]]),
        switch_jump={(0, 1): JumpLaw.point(0.0), (1, 0): JumpLaw.exp_neg(3.0)},
        kill=np.array([0.5, 0.5]),
        phase_names=("fast", "slow"),
    )


def m3() -> MapModel:
    """Two-sided model with a pure-down phase and upward switch jumps;
    exercises splitting below the infimum and is simulation-only."""
    return MapModel(
        levy=(
            LevyComponent(drift=-1.0),
            LevyComponent(drift=2.0, jump_rate=1.0, jump_law=JumpLaw.exp_neg(1.0)),
        ),
        switch_rate=np.array([[0.0, 1.0], [1.0, 0.0]]),
        switch_jump={(0, 1): JumpLaw.exp_pos(1.0), (1, 0): JumpLaw.point(0.0)},
        kill=np.array([0.25, 0.25]),
        phase_names=("down", "up"),
    )


def with_kill(model: MapModel, kill) -> MapModel:
    """Copy of a model with a different killing vector."""
    q = np.asarray(kill, dtype=float) * np.ones(model.n)
    return replace(model, kill=q)
