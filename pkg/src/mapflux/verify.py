"""Verification suites: every closed form paired with an independent check.

Algebraic suites re-derive matrix identities from scratch (dual triples are
recomputed spectrally, never transposed into place); statistical suites pit
closed forms against exact-path Monte Carlo and report z-scores, or compare
two empirical laws that the splitting and reversal theory says must agree.

All randomness flows from one master seed through fixed integer stream
codes, so a suite re-run is byte-identical for a given (seed, n) regardless
of thread count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2 as chi2_dist

from . import rng
from .errors import DomainError, InsufficientSamplesError
from .model import (JumpLaw, LevyComponent, MapModel, PhaseClass, dual,
                    phase_partition, psi, stationary, stationary_drift)
from .spectral import FundamentalSet, det_roots, fundamental
from .fluctuation import (ReversalConstants, cond_down_initial_law,
                          first_passage_row_identity, initial_law_bin_masses,
                          jump_matrix_transform, last_exit_transform,
                          reversal_constants, wh_factor, wh_residuals)
from .simulate import iter_summaries, simulate_block, target_values

Z_MAX_DEFAULT = 4.0
MIN_CONDITION_SAMPLES = 1000


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    """One verified statement: a residual, a z-score, a p-value or a count."""

    name: str
    kind: str                # "residual" | "z" | "pvalue" | "count" | "lower"
    value: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class CheckReport:
    suite: str
    model_name: str
    checks: tuple[Check, ...]
    seed: int | None = None
    n_paths: int | None = None
    note: str = ""
    runtime: float | None = None   # informational; kept out of canonical bytes

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "model": self.model_name,
            "seed": self.seed,
            "n_paths": self.n_paths,
            "pass": self.passed,
            "note": self.note,
            "checks": [
                {"name": c.name, "kind": c.kind, "value": c.value,
                 "threshold": c.threshold, "pass": c.passed, "detail": c.detail}
                for c in self.checks
            ],
        }

    def to_json(self) -> str:
        """Canonical byte-stable serialization (runtime deliberately absent)."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        lines = [f"suite {self.suite} on {self.model_name}  "
                 f"[{'PASS' if self.passed else 'FAIL'}]"]
        if self.seed is not None:
            lines.append(f"  seed={self.seed} n={self.n_paths}")
        if self.note:
            lines.append(f"  note: {self.note}")
        for c in self.checks:
            mark = "ok " if c.passed else "FAIL"
            lines.append(f"  [{mark}] {c.name}: {c.kind}={c.value:.3e} "
                         f"(threshold {c.threshold:g})")
        return "\n".join(lines)


def _finish(report: CheckReport) -> CheckReport:
    if len(report.checks) > 50 and not report.note:
        report.note = (f"{len(report.checks)} simultaneous checks; a handful of "
                       "borderline statistics is expected by chance")
    return report


def _residual_check(name, value, tol, **detail) -> Check:
    return Check(name=name, kind="residual", value=float(value), threshold=tol,
                 passed=bool(value <= tol), detail=detail)


def _z_check(name, z, z_max, **detail) -> Check:
    return Check(name=name, kind="z", value=float(z), threshold=z_max,
                 passed=bool(z <= z_max), detail=detail)


def _safe_z(diff, se) -> float:
    if se == 0.0:
        return 0.0 if abs(diff) < 1e-12 else np.inf
    return abs(diff) / se


# ---------------------------------------------------------------------------
# Batch accumulation helpers
# ---------------------------------------------------------------------------

class _PhaseMoments:
    """Sums of value * 1{phase == j} and squares, per target phase."""

    def __init__(self, n_phases: int):
        self.s1 = np.zeros(n_phases, dtype=complex)
        self.s2r = np.zeros(n_phases)
        self.s2i = np.zeros(n_phases)
        self.count = np.zeros(n_phases, dtype=np.int64)
        self.total = 0

    def add(self, vals, phases, valid):
        self.total += vals.size
        for j in range(self.s1.size):
            sel = valid & (phases == j)
            v = np.where(sel, vals, 0.0)
            self.s1[j] += v.sum()
            self.s2r[j] += (v.real ** 2).sum()
            self.s2i[j] += (v.imag ** 2).sum()
            self.count[j] += sel.sum()

    def mean_se(self, denominator: int | None = None):
        """(mean, se_re, se_im) over the full sample, or over an explicit
        conditioning count when ``denominator`` is given."""
        n = self.total if denominator is None else int(denominator)
        mean = self.s1 / n
        var_re = np.maximum(self.s2r / n - mean.real ** 2, 0.0)
        var_im = np.maximum(self.s2i / n - mean.imag ** 2, 0.0)
        return mean, np.sqrt(var_re / n), np.sqrt(var_im / n)


def _joint_moments(blocks, value_fn, n_phases):
    """Fold (values, phases, valid) over blocks into a _PhaseMoments."""
    acc = _PhaseMoments(n_phases)
    for block in blocks:
        vals, phases, valid = value_fn(block)
        acc.add(vals, phases, valid)
    return acc


# ---------------------------------------------------------------------------
# Algebraic suites
# ---------------------------------------------------------------------------

def sigma_routes(model: MapModel, beta) -> dict[str, np.ndarray]:
    """The last-exit transform by three independent computations.

    ``splitting``  positive-endpoint transform divided by the conditioned
                   factor at alpha = 0;
    ``reversal``   assembled from the dual triple (computed spectrally on the
                   dual) and the dual creep weights;
    ``spectral``   local-time action recovered from the resolvent limit along
                   eigendirections of R, Richardson-extrapolated;
    plus ``direct`` for the production formula.
    """
    b = np.asarray(beta, dtype=float)
    if not np.all(model.kill > 0.0) or not np.all(b > 0.0):
        raise DomainError("route comparison needs q > 0 and beta > 0 entrywise")
    fund = fundamental(model, b, check_dual=False)
    n = model.n
    q = model.kill
    pi = fund.pi
    direct = last_exit_transform(fund)

    # (i) splitting at the last exit
    pos_part = -fund.H @ np.linalg.solve(fund.R, np.diag(q))
    cond_up0 = wh_factor(fund, "cond_up", 0.0).value.real
    route_split = pos_part @ np.linalg.inv(cond_up0)

    # (ii) reversal at the last exit, dual triple computed independently
    dfund = fundamental(dual(model), b, check_dual=False)
    u_hat = -pi * np.linalg.solve(fund.R0, q)
    lhat = dfund.H @ np.diag(q)
    route_rev = (lhat.T * u_hat[None, :]) / (pi * q)[:, None]

    # (iii) resolvent limit along eigendirections of R
    lam = fund.root_data.roots
    V = np.linalg.inv(fund.root_data.vectors_left)   # columns: R^b v = -lam v
    cols = []
    eps0 = 1e-3
    for k in range(n):
        fs = []
        for eps in (eps0, eps0 / 2, eps0 / 4):
            mat = psi(model, lam[k] + eps, b)
            fs.append(eps * np.linalg.solve(mat, V[:, k]))
        r1a = 2 * fs[1] - fs[0]
        r1b = 2 * fs[2] - fs[1]
        cols.append((4 * r1b - r1a) / 3)
    h_tilde = np.column_stack(cols) @ fund.root_data.vectors_left
    if np.abs(h_tilde.imag).max() > 1e-8:
        raise DomainError("resolvent-limit route produced a complex matrix")
    rinv_q = np.linalg.solve(fund.R0, q)
    route_spec = h_tilde.real @ np.diag(-rinv_q)

    return {"direct": direct, "splitting": route_split,
            "reversal": route_rev, "spectral": route_spec}


def verify_identities(model: MapModel, betas=None, tol: float = 1e-8,
                      model_name: str = "model") -> CheckReport:
    """Null-vector residuals, the triple identity H R = G H, dual transpose
    relations, the first-passage integral equation rows, and the three-route
    last-exit consistency."""
    n = model.n
    if betas is None:
        betas = [np.zeros(n), np.full(n, 0.3) + 0.4 * np.arange(n)]
    classes = phase_partition(model)
    pi_mat = None
    checks = []
    for b in betas:
        b = np.asarray(b, dtype=float)
        tag = "beta=" + ",".join(f"{v:g}" for v in b)
        fund = fundamental(model, b, check_dual=False)
        rd = fund.root_data
        checks.append(_residual_check(f"null vectors [{tag}]",
                                      rd.vector_residuals.max(), tol))
        checks.append(_residual_check(f"determinant roots [{tag}]",
                                      rd.det_residuals.max(), tol))
        hrgh = np.abs(fund.H @ fund.R - fund.G @ fund.H).max() / \
            (1.0 + np.abs(fund.G @ fund.H).max())
        checks.append(_residual_check(f"HR=GH [{tag}]", hrgh, tol))
        dfund = fundamental(dual(model), b, check_dual=False)
        dpi = np.diag(fund.pi)
        dpi_inv = np.diag(1.0 / fund.pi)
        for nm, left, right in (("G", dfund.G, dpi_inv @ fund.R.T @ dpi),
                                ("R", dfund.R, dpi_inv @ fund.G.T @ dpi),
                                ("H", dfund.H, dpi_inv @ fund.H.T @ dpi)):
            res = np.abs(left - right).max() / (1.0 + np.abs(right).max())
            checks.append(_residual_check(f"dual {nm} transpose [{tag}]", res, tol))
        for i in range(n):
            if classes[i] is PhaseClass.UP:
                row = np.abs(first_passage_row_identity(fund, i)).max()
                checks.append(_residual_check(
                    f"first-passage row identity phase {i} [{tag}]", row, tol))
        if np.all(b > 0.0) and np.all(model.kill > 0.0):
            routes = sigma_routes(model, b)
            names = sorted(routes)
            worst = 0.0
            for a_idx in range(len(names)):
                for b_idx in range(a_idx + 1, len(names)):
                    diff = np.abs(routes[names[a_idx]] - routes[names[b_idx]]).max()
                    worst = max(worst, diff / (1.0 + np.abs(routes["direct"]).max()))
            checks.append(_residual_check(f"last-exit route agreement [{tag}]",
                                          worst, tol))
    return _finish(CheckReport(suite="identities", model_name=model_name,
                               checks=tuple(checks)))


def verify_factorization(model: MapModel, alphas=None, betas=None,
                         tol: float = 1e-8,
                         model_name: str = "model") -> CheckReport:
    """Factorization residuals over a grid, mass bookkeeping of the
    correction vectors, and the necessity of the correct diagonal correction
    (the stationarity-based shortcut fails whenever killing is genuinely
    phase dependent)."""
    n = model.n
    if alphas is None:
        alphas = [0.1j, 0.7j, 1.6j, 3.0j]
    if betas is None:
        betas = [np.zeros(n), np.full(n, 0.2), np.full(n, 0.3) + 0.4 * np.arange(n)]
    fund = fundamental(model, check_dual=False)
    report = wh_residuals(fund, alphas, betas)
    checks = [_residual_check(f"identity {name}", value, tol)
              for name, value in sorted(report.max_by_identity().items())]
    consts = reversal_constants(fund)
    piq = float(fund.pi @ model.kill)
    for nm, vec in (("infimum-phase mass", consts.inf_mass),
                    ("dual supremum-phase mass", consts.dual_sup_mass),
                    ("dual infimum-phase mass", consts.dual_inf_mass)):
        checks.append(_residual_check(f"{nm} sums to pi.q", abs(vec.sum() - piq), 1e-12))
        checks.append(Check(name=f"{nm} nonnegative", kind="count",
                            value=float((vec < 0).sum()), threshold=0.0,
                            passed=bool((vec >= 0).all())))

    # replace the correct diagonal correction by the stationarity shortcut
    dm = dual(model)
    dfund = fundamental(dm, check_dual=False)
    naive = np.diag(1.0 / (fund.pi * model.kill))
    correct = np.diag(1.0 / consts.dual_sup_mass)
    worst = 0.0
    for a in alphas:
        kill = wh_factor(fund, "killing", a).value
        inf_ = wh_factor(fund, "inf", a).value
        dsup = wh_factor(dfund, "sup", a).value
        tail = dsup.T @ np.diag(fund.pi * model.kill)
        worst = max(worst, float(np.abs(kill - inf_ @ naive @ tail).max()
                                 / (1.0 + np.abs(kill).max())))
    q = model.kill
    if np.ptp(q) > 1e-12:
        checks.append(Check(
            name="stationarity shortcut correction fails (non-constant kill)",
            kind="lower", value=worst, threshold=1e-3, passed=bool(worst > 1e-3),
            detail={"correct_max": report.max_by_identity()["kill=full_product"]}))
    else:
        checks.append(_residual_check(
            "stationarity shortcut coincides (constant kill)", worst, tol))
    return _finish(CheckReport(suite="factorization", model_name=model_name,
                               checks=tuple(checks)))


# ---------------------------------------------------------------------------
# Monte Carlo suites
# ---------------------------------------------------------------------------

def _phase_blocks(model, seed, code, i, n_paths, threads, **kw):
    sub = rng.derive_seed(seed, code, i)
    return iter_summaries(model, sub, i, n_paths, threads=threads, **kw)


def verify_mc(model: MapModel, n_paths: int, seed: int, *, targets=None,
              betas=None, z_max: float = Z_MAX_DEFAULT, threads: int = 1,
              model_name: str = "model") -> CheckReport:
    """Closed-form transform matrices against their empirical counterparts.

    One simulation per start phase serves every requested target; entrywise
    z-scores are reported per (target, alpha, beta) grid point.
    """
    n = model.n
    if targets is None:
        targets = ("zeta", "sup", "inf", "sigma")
    if betas is None:
        betas = [np.zeros(n), np.full(n, 0.3) + 0.4 * np.arange(n)]
    lam0 = det_roots(model).roots.real.min()
    grids = {
        "zeta": [0.6j, 1.5j],
        "sup": [0.0, -1.0],
        "inf": [0.0, 0.45 * lam0],
        "sigma": [0.0],
    }
    funds = {}
    for b in betas:
        funds[tuple(b)] = fundamental(model, np.asarray(b, dtype=float),
                                      check_dual=False)
    accs = {}
    for i in range(n):
        blocks = list(_phase_blocks(model, seed, 11, i, n_paths, threads,
                                    sigma_level=0.0))
        for b in betas:
            bv = np.asarray(b, dtype=float)
            for target in targets:
                if target == "sigma" and not np.all(bv > 0.0):
                    continue
                for alpha in grids[target]:
                    acc = _joint_moments(
                        blocks, lambda blk: target_values(blk, target, alpha, bv), n)
                    accs[(target, complex(alpha), tuple(b), i)] = acc
    checks = []
    for b in betas:
        bv = np.asarray(b, dtype=float)
        fund = funds[tuple(b)]
        btag = ",".join(f"{v:g}" for v in bv)
        for target in targets:
            if target == "sigma" and not np.all(bv > 0.0):
                continue
            for alpha in grids[target]:
                if target == "sigma":
                    ref = last_exit_transform(fund).astype(complex)
                else:
                    kind = {"zeta": "killing", "sup": "sup", "inf": "inf"}[target]
                    ref = wh_factor(fund, kind, alpha).value
                for i in range(n):
                    acc = accs[(target, complex(alpha), tuple(b), i)]
                    mean, se_re, se_im = acc.mean_se()
                    for j in range(n):
                        diff = mean[j] - ref[i, j]
                        z = max(_safe_z(diff.real, se_re[j]),
                                _safe_z(diff.imag, se_im[j]))
                        checks.append(_z_check(
                            f"{target} a={alpha:g} b={btag} [{i},{j}]", z, z_max,
                            analytic_re=float(ref[i, j].real),
                            estimate_re=float(mean[j].real),
                            se=float(max(se_re[j], se_im[j]))))
    return _finish(CheckReport(suite="mc", model_name=model_name,
                               checks=tuple(checks), seed=seed, n_paths=n_paths))


class _PairCov:
    """Paired covariance statistic: for conditioned samples in arrival order,
    D_k = f_2k (g_2k - g_2k+1) has mean cov(f, g) and its sample mean/SE give
    a direct z-test of independence without fourth-moment algebra."""

    def __init__(self):
        self.s1 = 0.0
        self.s2 = 0.0
        self.n = 0
        self._pend = None   # leftover (f, g) crossing block boundaries

    def add(self, f: np.ndarray, g: np.ndarray):
        if self._pend is not None:
            f = np.concatenate(([self._pend[0]], f))
            g = np.concatenate(([self._pend[1]], g))
            self._pend = None
        half = f.size // 2
        if f.size % 2:
            self._pend = (f[-1], g[-1])
        d = f[0:2 * half:2] * (g[0:2 * half:2] - g[1:2 * half:2])
        self.s1 += d.sum()
        self.s2 += (d * d).sum()
        self.n += half

    def z(self) -> tuple[float, float]:
        if self.n < 2:
            return 0.0, 0.0
        mean = self.s1 / self.n
        var = max(self.s2 / self.n - mean ** 2, 1e-300)
        return _safe_z(mean, np.sqrt(var / self.n)), mean


def verify_splitting(model: MapModel, n_paths: int, seed: int, *,
                     z_max: float = Z_MAX_DEFAULT, threads: int = 1,
                     alpha: float = -0.5, beta=None,
                     model_name: str = "model") -> CheckReport:
    """Independence of pre- and post-infimum segments given the infimum
    phase, law equality of post-infimum and post-exit segments, the
    attained/jumped dichotomy, and an independent-by-construction control."""
    n = model.n
    classes = phase_partition(model)
    bv = np.full(n, 0.2) if beta is None else np.asarray(beta, dtype=float)

    pairs = [("pre-time", "post-time"), ("pre-time", "post-level"),
             ("pre-depth", "post-time"), ("pre-depth", "post-level")]
    cov_acc = {(j, p): _PairCov() for j in range(n) for p in pairs}
    control_acc = _PairCov()
    counts = np.zeros(n, dtype=np.int64)
    exit_counts = np.zeros(n, dtype=np.int64)
    dich_viol = 0
    overshoot_bad = 0
    post_acc = {j: _PhaseMoments(n) for j in range(n)}
    exit_acc = {j: _PhaseMoments(n) for j in range(n)}

    for i in range(n):
        for blk in _phase_blocks(model, seed, 21, i, n_paths, threads,
                                 sigma_level=0.0):
            up_like = np.array([classes[int(p)] is not PhaseClass.DOWN
                                for p in blk.inf_phase])
            dich_viol += int((up_like != blk.inf_attained).sum())
            overshoot_bad += int((~blk.inf_attained & ~blk.inf_at_death
                                  & (blk.inf_overshoot <= 0)).sum())
            fn = {"pre-time": np.exp(-blk.inf_t), "pre-depth": np.exp(blk.inf_x),
                  "post-time": np.exp(-(blk.zeta - blk.inf_t)),
                  "post-level": np.exp(alpha * (blk.x_end - blk.inf_x))}
            post_vals = np.exp(alpha * (blk.x_end - blk.inf_x)
                               - (blk.occ - blk.inf_occ) @ bv)
            exit_vals = np.exp(alpha * blk.x_end - (blk.occ - blk.sigma_occ) @ bv)
            for j in range(n):
                sel = blk.inf_phase == j
                counts[j] += sel.sum()
                for p in pairs:
                    cov_acc[(j, p)].add(fn[p[0]][sel], fn[p[1]][sel])
                post_acc[j].add(np.where(sel, post_vals, 0.0), blk.j_end, sel)
                sel_exit = blk.sigma_cont & ~blk.sigma_at_zeta & (blk.sigma_phase == j)
                exit_counts[j] += sel_exit.sum()
                exit_acc[j].add(np.where(sel_exit, exit_vals, 0.0), blk.j_end, sel_exit)
            # control: pre functional of one path against the post functional
            # of the next path, independent by construction
            control_acc.add(fn["pre-depth"], np.roll(fn["post-level"], -1))

    checks = [Check(name="attained/jumped dichotomy violations", kind="count",
                    value=float(dich_viol), threshold=0.0, passed=dich_viol == 0),
              Check(name="jumped-off-infimum overshoot positive", kind="count",
                    value=float(overshoot_bad), threshold=0.0,
                    passed=overshoot_bad == 0)]
    for j in range(n):
        if counts[j] == 0:
            continue
        if counts[j] < MIN_CONDITION_SAMPLES:
            raise InsufficientSamplesError(
                f"only {int(counts[j])} paths with infimum phase {j}")
        for p in pairs:
            z, cov = cov_acc[(j, p)].z()
            checks.append(_z_check(
                f"pre/post independence {p[0]}~{p[1]} | infimum phase {j}",
                z, z_max, cov=cov, samples=int(counts[j])))
        if classes[j] is not PhaseClass.DOWN:
            if exit_counts[j] < MIN_CONDITION_SAMPLES:
                raise InsufficientSamplesError(
                    f"only {int(exit_counts[j])} continuous exits in phase {j}")
            post_mean, post_se, _ = post_acc[j].mean_se(int(counts[j]))
            exit_mean, exit_se, _ = exit_acc[j].mean_se(int(exit_counts[j]))
            for k in range(n):
                z = _safe_z(post_mean[k].real - exit_mean[k].real,
                            float(np.hypot(post_se[k], exit_se[k])))
                checks.append(_z_check(
                    f"post-infimum = post-exit law | phase {j} -> {k}", z, z_max,
                    post=float(post_mean[k].real), exit=float(exit_mean[k].real)))
    z, cov = control_acc.z()
    checks.append(_z_check("independent-control covariance", z, z_max, cov=cov))
    return _finish(CheckReport(suite="splitting", model_name=model_name,
                               checks=tuple(checks), seed=seed, n_paths=n_paths))


def verify_timerev(model: MapModel, t: float, n_paths: int, seed: int, *,
                   alpha: float = -0.3, beta=None, z_max: float = Z_MAX_DEFAULT,
                   threads: int = 1, model_name: str = "model") -> CheckReport:
    """Stationarity-weighted reversal identities at a fixed time and at the
    killing time: the model's transform matrix must be the dual's transpose,
    both sides estimated on their own simulations."""
    if t <= 0.0:
        raise DomainError("the fixed reversal time must be positive")
    n = model.n
    bv = np.full(n, 0.2) if beta is None else np.asarray(beta, dtype=float)
    dm = dual(model)
    pi = stationary(model)
    q = model.kill

    def collect(mdl, code):
        fix = [_PhaseMoments(n) for _ in range(n)]
        end = [_PhaseMoments(n) for _ in range(n)]
        for i in range(n):
            for blk in _phase_blocks(mdl, seed, code, i, n_paths, threads, t_fix=t):
                vals = np.where(blk.fix_alive,
                                np.exp(alpha * blk.fix_x - blk.fix_occ @ bv), 0.0)
                fix[i].add(vals, blk.fix_phase, blk.fix_alive)
                ve = np.exp(alpha * blk.x_end - blk.occ @ bv)
                end[i].add(ve, blk.j_end, np.ones(len(blk), dtype=bool))
        return fix, end

    fix_m, end_m = collect(model, 31)
    fix_d, end_d = collect(dm, 32)
    checks = []
    for i in range(n):
        mean_m, se_m, _ = fix_m[i].mean_se()
        mean_e, se_e, _ = end_m[i].mean_se()
        for j in range(n):
            mean_dj, se_dj, _ = fix_d[j].mean_se()
            lhs = pi[i] * mean_m[j].real
            rhs = pi[j] * mean_dj[i].real
            z = _safe_z(lhs - rhs, float(np.hypot(pi[i] * se_m[j], pi[j] * se_dj[i])))
            checks.append(_z_check(f"fixed-time reversal t={t:g} [{i},{j}]", z,
                                   z_max, lhs=float(lhs), rhs=float(rhs)))
            mean_ej, se_ej, _ = end_d[j].mean_se()
            lhs = pi[i] * q[i] * mean_e[j].real
            rhs = pi[j] * q[j] * mean_ej[i].real
            z = _safe_z(lhs - rhs, float(np.hypot(pi[i] * q[i] * se_e[j],
                                                  pi[j] * q[j] * se_ej[i])))
            checks.append(_z_check(f"killing-time reversal [{i},{j}]", z, z_max,
                                   lhs=float(lhs), rhs=float(rhs)))
    return _finish(CheckReport(suite="timerev", model_name=model_name,
                               checks=tuple(checks), seed=seed, n_paths=n_paths))


def verify_reversal(model: MapModel, kind: str, n_paths: int, seed: int, *,
                    a: float = 0.0, x: float = 1.0, alpha: float = 0.5,
                    beta=None, z_max: float = Z_MAX_DEFAULT, threads: int = 1,
                    model_name: str = "model") -> CheckReport:
    """Reversal identities at the infimum, the last exit and first passage,
    with the analytic scaling vectors from the factor module.

    ``inf``   kill-weighted infimum transform of the model against the
              conditioned-to-stay-below law sampled as dual post-supremum
              segments, scaled by the dual supremum-phase mass;
    ``last``  creep-mass-weighted last-exit transforms of model and dual;
    ``first`` first-passage transform of the model against the dual
              conditioned-to-stay-positive law up to its last exit, sampled
              as dual post-infimum segments with a per-path exit level.
    """
    if kind not in ("inf", "last", "first"):
        raise DomainError(f"unknown reversal kind {kind!r}")
    n = model.n
    bv = np.full(n, 0.2) if beta is None else np.asarray(beta, dtype=float)
    fund = fundamental(model, check_dual=False)
    pi, q = fund.pi, model.kill
    consts = reversal_constants(fund)
    dm = dual(model)
    checks = []

    if kind == "inf":
        lhs_acc = []
        for i in range(n):
            acc = _joint_moments(
                _phase_blocks(model, seed, 41, i, n_paths, threads),
                lambda blk: (np.exp(alpha * blk.inf_x - blk.inf_occ @ bv),
                             blk.inf_phase, np.ones(len(blk), dtype=bool)), n)
            lhs_acc.append(acc)
        rhs_acc = [_PhaseMoments(n) for _ in range(n)]   # indexed by sup phase
        cond = np.zeros(n, dtype=np.int64)
        mass_mc = np.zeros(n)
        for sp in range(n):
            for blk in _phase_blocks(dm, seed, 42, sp, n_paths, threads):
                post_x = blk.x_end - blk.sup_x
                post_occ = blk.occ - blk.sup_occ
                vals = np.exp(alpha * post_x - post_occ @ bv)
                for j in range(n):
                    sel = blk.sup_phase == j
                    cond[j] += sel.sum()
                    rhs_acc[j].add(np.where(sel, vals, 0.0), blk.j_end, sel)
        for j in range(n):
            mc = sum(pi[i] * q[i] * lhs_acc[i].count[j] / lhs_acc[i].total
                     for i in range(n))
            mass_mc[j] = mc
            z = _safe_z(mc - consts.inf_mass[j],
                        float(np.sqrt(sum((pi[i] * q[i]) ** 2 *
                                          (lhs_acc[i].count[j] / lhs_acc[i].total) *
                                          (1 - lhs_acc[i].count[j] / lhs_acc[i].total)
                                          / lhs_acc[i].total for i in range(n)))))
            checks.append(_z_check(f"infimum-phase mass analytic vs MC [{j}]",
                                   z, z_max, analytic=float(consts.inf_mass[j]),
                                   mc=float(mc)))
        for i in range(n):
            mean_l, se_l, _ = lhs_acc[i].mean_se()
            for j in range(n):
                if cond[j] < MIN_CONDITION_SAMPLES:
                    raise InsufficientSamplesError(
                        f"only {int(cond[j])} dual paths with supremum phase {j}")
                mean_r, se_r, _ = rhs_acc[j].mean_se(int(cond[j]))
                lhs = pi[i] * q[i] * mean_l[j].real
                rhs = consts.dual_sup_mass[j] * mean_r[i].real
                z = _safe_z(lhs - rhs,
                            float(np.hypot(pi[i] * q[i] * se_l[j],
                                           consts.dual_sup_mass[j] * se_r[i])))
                checks.append(_z_check(f"infimum reversal [{i},{j}]", z, z_max,
                                       lhs=float(lhs), rhs=float(rhs)))

    elif kind == "last":
        def exit_acc(mdl, code):
            accs = []
            for i in range(n):
                acc = _joint_moments(
                    _phase_blocks(mdl, seed, code, i, n_paths, threads,
                                  sigma_level=a),
                    lambda blk: (np.exp(-blk.sigma_occ @ bv), blk.sigma_phase,
                                 blk.sigma_cont & ~blk.sigma_at_zeta), n)
                accs.append(acc)
            return accs
        accs_m = exit_acc(model, 43)
        accs_d = exit_acc(dm, 44)
        for i in range(n):
            mean_m, se_m, _ = accs_m[i].mean_se()
            for j in range(n):
                mean_d, se_d, _ = accs_d[j].mean_se()
                lhs = consts.creep_mass[i] * mean_m[j].real
                rhs = consts.dual_creep_mass[j] * mean_d[i].real
                z = _safe_z(lhs - rhs,
                            float(np.hypot(consts.creep_mass[i] * se_m[j],
                                           consts.dual_creep_mass[j] * se_d[i])))
                checks.append(_z_check(f"last-exit reversal a={a:g} [{i},{j}]", z,
                                       z_max, lhs=float(lhs), rhs=float(rhs)))

    else:  # first
        lhs_acc = []
        for i in range(n):
            acc = _joint_moments(
                _phase_blocks(model, seed, 45, i, n_paths, threads, tau_level=x),
                lambda blk: (np.exp(-blk.tau_occ @ bv), blk.tau_phase,
                             blk.tau_hit & blk.tau_creep), n)
            lhs_acc.append(acc)
        rhs_acc = [_PhaseMoments(n) for _ in range(n)]   # indexed by infimum phase
        cond = np.zeros(n, dtype=np.int64)
        for sp in range(n):
            sub = rng.derive_seed(seed, 46, sp)
            first_pass = list(iter_summaries(dm, sub, sp, n_paths, threads=threads))
            for b1 in first_pass:
                # replay the same paths, now tracking the per-path exit level
                b2 = simulate_block(dm, sub, sp, len(b1),
                                    path_offset=int(b1.pids[0]),
                                    sigma_level=b1.inf_x + x)
                ok = b2.sigma_cont & ~b2.sigma_at_zeta
                vals = np.exp(-(b2.sigma_occ - b1.inf_occ) @ bv)
                for j in range(n):
                    sel = b1.inf_phase == j
                    cond[j] += sel.sum()
                    rhs_acc[j].add(np.where(sel & ok, vals, 0.0), b2.sigma_phase,
                                   sel & ok)
        for i in range(n):
            mean_l, se_l, _ = lhs_acc[i].mean_se()
            for j in range(n):
                if cond[j] < MIN_CONDITION_SAMPLES:
                    raise InsufficientSamplesError(
                        f"only {int(cond[j])} dual paths with infimum phase {j}")
                mean_r, se_r, _ = rhs_acc[j].mean_se(int(cond[j]))
                lhs = consts.creep_mass[i] * mean_l[j].real
                rhs = consts.creep_mass[j] * mean_r[i].real
                z = _safe_z(lhs - rhs,
                            float(np.hypot(consts.creep_mass[i] * se_l[j],
                                           consts.creep_mass[j] * se_r[i])))
                checks.append(_z_check(f"first-passage reversal x={x:g} [{i},{j}]",
                                       z, z_max, lhs=float(lhs), rhs=float(rhs)))
    return _finish(CheckReport(suite=f"reversal-{kind}", model_name=model_name,
                               checks=tuple(checks), seed=seed, n_paths=n_paths))


# ---------------------------------------------------------------------------
# Initial-law suites
# ---------------------------------------------------------------------------

def _upward_jump_targets(model: MapModel, phase: int):
    """Target phases reachable from ``phase`` by a jump with positive mass."""
    out = {}
    comp = model.levy[phase]
    if comp.jump_rate > 0.0 and comp.jump_law.has_positive_mass():
        out[phase] = (comp.jump_rate, comp.jump_law)
    for j in range(model.n):
        if j != phase and model.switch_rate[phase, j] > 0.0:
            law = model.switch_jump[(phase, j)]
            if law.has_positive_mass():
                out[j] = (model.switch_rate[phase, j], law)
    return out


def _exp_pos_bin_weight(law: JumpLaw, rate: float, x0: float, x1: float,
                        v_grid, v_vals) -> float:
    """integral over [x0, x1) of v(y) against a positive jump law, rate
    included; v is piecewise linear on its estimation grid."""
    if law.kind == "mixture":
        return sum(w * _exp_pos_bin_weight(c, rate, x0, x1, v_grid, v_vals)
                   for w, c in zip(law.weights, law.components))
    if law.kind == "point":
        if law.value <= 0.0 or not (x0 <= law.value < x1):
            return 0.0
        return rate * float(np.interp(law.value, v_grid, v_vals))
    if law.kind != "exp-pos":
        return 0.0
    # fine trapezoid against the exponential density
    hi = min(x1, v_grid[-1])
    if hi <= x0:
        return 0.0
    ys = np.linspace(x0, hi, 200)
    dens = law.rate * np.exp(-law.rate * ys)
    return rate * float(np.trapz(np.interp(ys, v_grid, v_vals) * dens, ys))


def verify_init_law(model: MapModel, phase: int, n_paths: int, seed: int, *,
                    edges=None, p_min: float = 1e-3,
                    z_max: float = Z_MAX_DEFAULT, threads: int = 1,
                    model_name: str = "model") -> CheckReport:
    """Empirical initial law of the post-infimum process below a downward
    phase against the survival-weighted jump measure.

    The weight v_j(y) (probability that a path from phase j stays above -y)
    is itself estimated on a grid from independent simulations, the
    normaliser is the corresponding quadrature, and the start-level histogram
    is compared by a chi-square test; the immediate-killing atom frequency is
    tested against its predicted share.
    """
    classes = phase_partition(model)
    if classes[phase] is not PhaseClass.DOWN:
        raise DomainError("the initial-law suite conditions on a downward phase")
    n = model.n
    targets = _upward_jump_targets(model, phase)
    if edges is None:
        edges = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, np.inf])
    edges = np.asarray(edges, dtype=float)

    # empirical law of (start level, start phase) of the post-infimum
    # process given the infimum phase, pooled over start phases
    nb = len(edges) - 1
    hist = np.zeros((nb, n), dtype=np.int64)
    deaths = 0
    cond = 0
    for i in range(n):
        for blk in _phase_blocks(model, seed, 51, i, n_paths, threads):
            sel = blk.inf_phase == phase
            cond += int(sel.sum())
            deaths += int((sel & blk.inf_at_death).sum())
            live = sel & ~blk.inf_at_death
            if np.any(live):
                levels = blk.inf_overshoot[live]
                phs = blk.inf_phase_after[live]
                b_idx = np.searchsorted(edges, levels, side="right") - 1
                for bi, pj in zip(b_idx, phs):
                    hist[bi, pj] += 1

    if not targets:
        note = "no upward jumps from this phase: conditioning is killing-only"
        checks = [Check(name="all conditioned paths die at the infimum",
                        kind="count", value=float(cond - deaths), threshold=0.0,
                        passed=(cond - deaths) == 0)]
        return _finish(CheckReport(suite="init-law", model_name=model_name,
                                   checks=tuple(checks), seed=seed,
                                   n_paths=n_paths, note=note))
    if cond < MIN_CONDITION_SAMPLES:
        raise InsufficientSamplesError(
            f"only {cond} paths with infimum phase {phase}")

    # stay-above weights per reachable phase, on a grid
    y_max = float(edges[-2] * 4 + 4.0)
    v_grid = np.linspace(0.0, y_max, 161)
    v_vals = {}
    for j in targets:
        acc_hits = np.zeros(v_grid.size)
        tot = 0
        for blk in _phase_blocks(model, seed, 52, j, n_paths, threads):
            tot += len(blk)
            acc_hits += (blk.inf_x[None, :] > -v_grid[:, None]).sum(axis=1)
        v_vals[j] = acc_hits / tot

    # predicted bin masses and the normaliser
    mass = np.zeros((nb, n))
    for j, (rate, law) in targets.items():
        for b in range(nb):
            mass[b, j] = _exp_pos_bin_weight(law, rate, edges[b], edges[b + 1],
                                             v_grid, v_vals[j])
    c_hat = float(mass.sum())
    q_i = model.kill[phase]
    atom_pred = q_i / (c_hat + q_i)
    atom_obs = deaths / cond
    atom_se = np.sqrt(max(atom_pred * (1 - atom_pred), 1e-300) / cond)
    checks = [_z_check("immediate-killing atom share", _safe_z(atom_obs - atom_pred, atom_se),
                       z_max, observed=atom_obs, predicted=atom_pred)]

    live_total = cond - deaths
    flat_obs = hist.reshape(-1)
    flat_exp = (mass / c_hat * live_total).reshape(-1)
    keep = flat_exp > 5.0
    stat = float((((flat_obs - flat_exp) ** 2) / flat_exp)[keep].sum())
    # leftover cells pooled into one
    rest_obs = flat_obs[~keep].sum()
    rest_exp = flat_exp[~keep].sum()
    dof = int(keep.sum()) - 1
    if rest_exp > 0:
        stat += (rest_obs - rest_exp) ** 2 / rest_exp
        dof += 1
    pval = float(chi2_dist.sf(stat, dof))
    checks.append(Check(name="start-level histogram chi-square", kind="pvalue",
                        value=pval, threshold=p_min, passed=pval > p_min,
                        detail={"stat": stat, "dof": dof, "samples": int(live_total)}))
    return _finish(CheckReport(suite="init-law", model_name=model_name,
                               checks=tuple(checks), seed=seed, n_paths=n_paths))


def verify_cond_down_law(model: MapModel, n_paths: int, seed: int, *,
                         edges=None, z_max: float = Z_MAX_DEFAULT,
                         threads: int = 1,
                         model_name: str = "model") -> CheckReport:
    """Closed-form initial law of the conditioned-to-stay-below process
    against binned post-supremum starts of the dual of a spectrally negative
    model: per-bin frequencies within z_max standard errors, plus the
    immediate-killing atom from the first-passage row identity."""
    dm = dual(model)
    dfund = fundamental(dm, check_dual=False)
    classes = phase_partition(dm)
    n = model.n
    if edges is None:
        edges = np.array([-np.inf, -3.0, -2.0, -1.5, -1.0, -0.75, -0.5, -0.25, 0.0])
    edges = np.asarray(edges, dtype=float)
    nb = len(edges) - 1
    finite_edges = np.where(np.isfinite(edges), edges, -50.0)

    hist = {i: np.zeros((nb, n), dtype=np.int64) for i in range(n)}
    deaths = np.zeros(n, dtype=np.int64)
    cond = np.zeros(n, dtype=np.int64)
    for sp in range(n):
        for blk in _phase_blocks(dm, seed, 53, sp, n_paths, threads):
            for i in range(n):
                sel = blk.sup_phase == i
                cond[i] += int(sel.sum())
                deaths[i] += int((sel & blk.sup_at_death).sum())
                live = sel & ~blk.sup_at_death
                if np.any(live):
                    drops = blk.sup_drop[live]
                    phs = blk.sup_phase_after[live]
                    b_idx = np.searchsorted(edges, drops, side="right") - 1
                    b_idx = np.clip(b_idx, 0, nb - 1)
                    for bi, pj in zip(b_idx, phs):
                        hist[i][bi, pj] += 1

    checks = []
    for i in range(n):
        if classes[i] is not PhaseClass.UP:
            continue
        if cond[i] < MIN_CONDITION_SAMPLES:
            raise InsufficientSamplesError(
                f"only {int(cond[i])} dual paths with supremum phase {i}")
        masses, normaliser, atom = initial_law_bin_masses(dfund, i, finite_edges)
        total_mass = masses.sum()
        atom_obs = deaths[i] / cond[i]
        se = np.sqrt(max(atom * (1 - atom), 1e-300) / cond[i])
        checks.append(_z_check(f"killing atom | supremum phase {i}",
                               _safe_z(atom_obs - atom, se), z_max,
                               observed=float(atom_obs), predicted=float(atom)))
        live = int(cond[i] - deaths[i])
        probs = masses / total_mass
        for b in range(nb):
            for j in range(n):
                pb = probs[b, j]
                obs = hist[i][b, j] / live
                se = np.sqrt(max(pb * (1 - pb), 1e-300) / live)
                if pb < 1e-6 and hist[i][b, j] == 0:
                    continue
                checks.append(_z_check(
                    f"start-level bin {b} -> phase {j} | supremum phase {i}",
                    _safe_z(obs - pb, se), z_max, observed=float(obs),
                    predicted=float(pb)))
        # total non-killed mass must match the closed-form normaliser
        checks.append(_residual_check(
            f"density mass consistency | supremum phase {i}",
            abs(total_mass - (1.0 - atom)), 1e-8))
    return _finish(CheckReport(suite="cond-down-law", model_name=model_name,
                               checks=tuple(checks), seed=seed, n_paths=n_paths))


# ---------------------------------------------------------------------------
# Random admissible models and the suite dispatcher
# ---------------------------------------------------------------------------

def random_spectrally_negative(seed: int, n_phases: int | None = None,
                               bounded_variation: bool = True) -> MapModel:
    """Random irreducible spectrally negative model with positive drifts,
    exponential-family jumps and strictly positive killing."""
    g = np.random.default_rng(seed)
    n = int(n_phases) if n_phases else int(g.integers(2, 4))
    levy = []
    for _ in range(n):
        drift = float(g.uniform(0.5, 3.0))
        sigma2 = 0.0 if bounded_variation else float(g.choice([0.0, g.uniform(0.2, 1.0)]))
        if g.random() < 0.75:
            if g.random() < 0.3:
                law = JumpLaw.mixture(
                    [0.4, 0.6], [JumpLaw.exp_neg(float(g.uniform(0.5, 2.0))),
                                 JumpLaw.exp_neg(float(g.uniform(2.0, 5.0)))])
            else:
                law = JumpLaw.exp_neg(float(g.uniform(0.5, 4.0)))
            levy.append(LevyComponent(drift=drift, sigma2=sigma2,
                                      jump_rate=float(g.uniform(0.3, 2.0)),
                                      jump_law=law))
        else:
            levy.append(LevyComponent(drift=drift, sigma2=sigma2))
    rates = np.zeros((n, n))
    jumps = {}
    for i in range(n):
        for j in range(n):
            if i != j:
                rates[i, j] = float(g.uniform(0.3, 2.0))
                r = g.random()
                if r < 0.4:
                    jumps[(i, j)] = JumpLaw.point(0.0)
                else:
                    jumps[(i, j)] = JumpLaw.exp_neg(float(g.uniform(0.5, 4.0)))
    kill = g.uniform(0.2, 1.0, size=n)
    return MapModel(levy=tuple(levy), switch_rate=rates, switch_jump=jumps,
                    kill=kill)


SUITES = ("identities", "factorization", "mc", "splitting", "timerev",
          "reversal", "init-law")


def run_suite(suite: str, model: MapModel, *, n_paths: int = 100_000,
              seed: int = 1, threads: int = 1, z_max: float = Z_MAX_DEFAULT,
              model_name: str = "model") -> list[CheckReport]:
    """Dispatch one named suite (possibly several reports) on a model."""
    if suite == "identities":
        return [verify_identities(model, model_name=model_name)]
    if suite == "factorization":
        return [verify_factorization(model, model_name=model_name)]
    if suite == "mc":
        return [verify_mc(model, n_paths, seed, threads=threads, z_max=z_max,
                          model_name=model_name)]
    if suite == "splitting":
        return [verify_splitting(model, n_paths, seed, threads=threads,
                                 z_max=z_max, model_name=model_name)]
    if suite == "timerev":
        return [verify_timerev(model, 1.0, n_paths, seed, threads=threads,
                               z_max=z_max, model_name=model_name)]
    if suite == "reversal":
        return [verify_reversal(model, kind, n_paths, seed, threads=threads,
                                z_max=z_max, model_name=model_name)
                for kind in ("inf", "last", "first")]
    if suite == "init-law":
        classes = phase_partition(model)
        reports = []
        for i, c in enumerate(classes):
            if c is PhaseClass.DOWN:
                reports.append(verify_init_law(model, i, n_paths, seed,
                                               threads=threads, z_max=z_max,
                                               model_name=model_name))
        if not reports:
            reports.append(verify_cond_down_law(model, n_paths, seed,
                                                threads=threads, z_max=z_max,
                                                model_name=model_name))
        return reports
    raise DomainError(f"unknown suite {suite!r}; choose from {SUITES}")
