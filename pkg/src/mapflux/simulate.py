"""Exact event-driven simulation of bounded-variation models.

Paths are piecewise linear between events (within-phase jumps, phase
switches, killing), so every functional used by the verification suites --
extrema with their times and phases, occupation vectors, last exit, first
passage -- has a closed form per path and is computed with zero
discretisation error.

Two engines share one counter-based randomness contract (see
:mod:`mapflux.rng`): a scalar engine that materialises
:class:`Path` objects, and a lockstep vectorised engine that computes path
summaries for millions of paths without storing them.  Path ``k`` is
bit-identical under both, regardless of batch size or thread count.

Brownian components are rejected outright: discretised extrema would bias
the identity tests that are this package's reason to exist.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import DomainError, UnsupportedError, ValidationError
from .model import MapModel

DEFAULT_BATCH = 200_000

_LAW_POINT = 0
_LAW_EXP_NEG = 1
_LAW_EXP_POS = 2

_KILL = -1


# ---------------------------------------------------------------------------
# Compiled event tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Compiled:
    n: int
    drift: np.ndarray        # (n,)
    total_rate: np.ndarray   # (n,)
    ev_cum: np.ndarray       # (n, K) cumulative type thresholds, padded > 1
    ev_phase: np.ndarray     # (n, K) next phase, _KILL for killing
    ev_law: np.ndarray       # (n, K) law index or -1
    law_start: np.ndarray    # (L,) slice into component table
    law_len: np.ndarray
    comp_cum: np.ndarray     # (C,) within-law cumulative weights, last == 1
    comp_kind: np.ndarray
    comp_param: np.ndarray
    max_mix: int


def compile_model(model: MapModel) -> _Compiled:
    """Flatten a model into the rate/jump tables both engines consume."""
    if not model.all_bounded_variation():
        raise UnsupportedError(
            "simulation requires sigma2 = 0 in every phase; Brownian extrema "
            "cannot be sampled exactly")
    if not np.any(model.kill > 0.0):
        raise UnsupportedError("simulation requires a killed model (q != 0)")
    n = model.n
    laws = []           # one slice of components per law
    law_rows = []

    def add_law(law):
        comps = law.components if law.kind == "mixture" else (law,)
        weights = law.weights if law.kind == "mixture" else (1.0,)
        cum = np.cumsum(weights)
        cum[-1] = 1.0
        kinds, params = [], []
        for c in comps:
            if c.kind == "point":
                kinds.append(_LAW_POINT)
                params.append(c.value)
            elif c.kind == "exp-neg":
                kinds.append(_LAW_EXP_NEG)
                params.append(c.rate)
            else:
                kinds.append(_LAW_EXP_POS)
                params.append(c.rate)
        laws.append((cum, np.array(kinds), np.array(params)))
        return len(laws) - 1

    events = []         # per phase: list of (rate, next_phase, law_idx)
    for i, comp in enumerate(model.levy):
        row = []
        if comp.jump_rate > 0.0:
            row.append((comp.jump_rate, i, add_law(comp.jump_law)))
        for j in range(n):
            if j != i and model.switch_rate[i, j] > 0.0:
                row.append((model.switch_rate[i, j], j, add_law(model.switch_jump[(i, j)])))
        if model.kill[i] > 0.0:
            row.append((model.kill[i], _KILL, -1))
        if not row:
            raise UnsupportedError(f"phase {i} has no events at all")
        events.append(row)

    K = max(len(r) for r in events)
    ev_cum = np.full((n, K), 2.0)
    ev_phase = np.full((n, K), _KILL, dtype=np.int64)
    ev_law = np.full((n, K), -1, dtype=np.int64)
    total = np.zeros(n)
    for i, row in enumerate(events):
        rates = np.array([r for r, _, _ in row])
        total[i] = rates.sum()
        cum = np.cumsum(rates) / total[i]
        cum[-1] = 1.0
        ev_cum[i, : len(row)] = cum
        ev_phase[i, : len(row)] = [p for _, p, _ in row]
        ev_law[i, : len(row)] = [l for _, _, l in row]

    starts, lens, cums, kinds, params = [], [], [], [], []
    pos = 0
    for cum, kind, param in laws:
        starts.append(pos)
        lens.append(len(cum))
        cums.extend(cum)
        kinds.extend(kind)
        params.extend(param)
        pos += len(cum)
    return _Compiled(
        n=n, drift=model.drift, total_rate=total,
        ev_cum=ev_cum, ev_phase=ev_phase, ev_law=ev_law,
        law_start=np.array(starts, dtype=np.int64),
        law_len=np.array(lens, dtype=np.int64),
        comp_cum=np.array(cums) if cums else np.zeros(0),
        comp_kind=np.array(kinds, dtype=np.int64) if kinds else np.zeros(0, dtype=np.int64),
        comp_param=np.array(params) if params else np.zeros(0),
        max_mix=int(max(lens, default=1)),
    )


def _sample_jump(comp: _Compiled, lidx, u_mix, u_mag):
    """Jump sizes for law indices ``lidx`` (vectorised; lidx >= 0)."""
    idx = comp.law_start[lidx]
    last = comp.law_start[lidx] + comp.law_len[lidx] - 1
    for _ in range(comp.max_mix - 1):
        step = (u_mix > comp.comp_cum[idx]) & (idx < last)
        idx = idx + step
    kind = comp.comp_kind[idx]
    p = comp.comp_param[idx]
    out = np.where(kind == _LAW_POINT, p, 0.0)
    logs = np.log(u_mag)
    out = np.where(kind == _LAW_EXP_NEG, logs / np.where(p > 0, p, 1.0), out)
    out = np.where(kind == _LAW_EXP_POS, -logs / np.where(p > 0, p, 1.0), out)
    return out


# ---------------------------------------------------------------------------
# Vectorised lockstep engine
# ---------------------------------------------------------------------------

@dataclass
class SummaryBlock:
    """Per-path summary arrays for one simulated block.

    Occupation matrices have one column per phase.  Extremum records follow
    the conventions: infimum at its last touch, supremum at its first, phases
    resolved to the side of the touch that the splitting theory needs.
    ``inf_at_death`` marks paths killed while approaching their infimum
    (their post-infimum segment is empty); ``sup_at_death`` likewise.
    """

    pids: np.ndarray
    zeta: np.ndarray
    x_end: np.ndarray
    j_end: np.ndarray
    occ: np.ndarray
    n_events: np.ndarray

    inf_x: np.ndarray
    inf_t: np.ndarray
    inf_occ: np.ndarray
    inf_attained: np.ndarray
    inf_phase: np.ndarray          # phase in which the infimum was achieved
    inf_phase_after: np.ndarray    # phase entered at the infimum time
    inf_overshoot: np.ndarray      # start level of the post-infimum segment
    inf_at_death: np.ndarray

    sup_x: np.ndarray
    sup_t: np.ndarray
    sup_occ: np.ndarray
    sup_phase: np.ndarray
    sup_phase_after: np.ndarray
    sup_drop: np.ndarray           # start level (<= 0) of the post-supremum segment
    sup_at_death: np.ndarray

    sigma_level: np.ndarray | None = None
    sigma_t: np.ndarray | None = None
    sigma_occ: np.ndarray | None = None
    sigma_phase: np.ndarray | None = None
    sigma_cont: np.ndarray | None = None
    sigma_at_zeta: np.ndarray | None = None
    sigma_x: np.ndarray | None = None

    tau_level: np.ndarray | None = None
    tau_hit: np.ndarray | None = None
    tau_t: np.ndarray | None = None
    tau_occ: np.ndarray | None = None
    tau_phase: np.ndarray | None = None
    tau_creep: np.ndarray | None = None
    tau_x: np.ndarray | None = None

    fix_alive: np.ndarray | None = None
    fix_x: np.ndarray | None = None
    fix_occ: np.ndarray | None = None
    fix_phase: np.ndarray | None = None

    def __len__(self):
        return self.zeta.size


def simulate_block(model_or_tables, seed: int, j0: int, n_paths: int, *,
                   path_offset: int = 0, x0: float = 0.0,
                   sigma_level=None, tau_level=None, t_fix=None) -> SummaryBlock:
    """Simulate ``n_paths`` paths in lockstep and summarise them exactly.

    Path identities are ``path_offset .. path_offset + n_paths - 1`` inside
    the stream space of ``seed``; results are independent of how paths are
    grouped into blocks.
    """
    comp = model_or_tables if isinstance(model_or_tables, _Compiled) \
        else compile_model(model_or_tables)
    n = comp.n
    m = int(n_paths)
    state = rng.seed_state(seed)
    pids = np.arange(path_offset, path_offset + m, dtype=np.uint64)

    want_sigma = sigma_level is not None
    want_tau = tau_level is not None
    want_fix = t_fix is not None
    if want_sigma:
        av = np.broadcast_to(np.asarray(sigma_level, dtype=float), (m,)).copy()
    if want_tau:
        xv = np.broadcast_to(np.asarray(tau_level, dtype=float), (m,)).copy()
        if np.any(xv <= x0):
            raise DomainError("first-passage level must lie above the start level")
    if want_fix and not t_fix > 0.0:
        raise DomainError("the fixed observation time must be positive")

    t = np.zeros(m)
    x = np.full(m, float(x0))
    ph = np.full(m, int(j0), dtype=np.int64)
    ctr = np.zeros(m, dtype=np.uint64)
    occ = np.zeros((m, n))

    out = SummaryBlock(
        pids=pids.astype(np.int64),
        zeta=np.zeros(m), x_end=np.zeros(m), j_end=np.full(m, -1, dtype=np.int64),
        occ=occ, n_events=np.zeros(m, dtype=np.int64),
        inf_x=x.copy(), inf_t=np.zeros(m), inf_occ=np.zeros((m, n)),
        inf_attained=np.ones(m, dtype=bool), inf_phase=ph.copy(),
        inf_phase_after=ph.copy(), inf_overshoot=np.zeros(m),
        inf_at_death=np.zeros(m, dtype=bool),
        sup_x=x.copy(), sup_t=np.zeros(m), sup_occ=np.zeros((m, n)),
        sup_phase=ph.copy(), sup_phase_after=ph.copy(), sup_drop=np.zeros(m),
        sup_at_death=np.zeros(m, dtype=bool),
    )
    if want_sigma:
        out.sigma_level = av
        out.sigma_t = np.zeros(m)
        out.sigma_occ = np.zeros((m, n))
        out.sigma_phase = ph.copy()
        out.sigma_cont = np.zeros(m, dtype=bool)
        out.sigma_at_zeta = np.zeros(m, dtype=bool)
        out.sigma_x = x.copy()
    if want_tau:
        out.tau_level = xv
        out.tau_hit = np.zeros(m, dtype=bool)
        out.tau_t = np.zeros(m)
        out.tau_occ = np.zeros((m, n))
        out.tau_phase = np.full(m, -1, dtype=np.int64)
        out.tau_creep = np.zeros(m, dtype=bool)
        out.tau_x = np.zeros(m)
    if want_fix:
        out.fix_alive = np.zeros(m, dtype=bool)
        out.fix_x = np.zeros(m)
        out.fix_occ = np.zeros((m, n))
        out.fix_phase = np.full(m, -1, dtype=np.int64)

    alive = np.arange(m)
    while alive.size:
        p = ph[alive]
        tt = t[alive]
        xx = x[alive]
        cc = ctr[alive]
        gid = pids[alive]
        d = comp.drift[p]
        rate = comp.total_rate[p]

        u_time = rng.uniforms(state, gid, cc, rng.CH_TIME)
        u_type = rng.uniforms(state, gid, cc, rng.CH_TYPE)
        dt = -np.log(u_time) / rate
        eidx = (u_type[:, None] <= comp.ev_cum[p]).argmax(axis=1)
        new_ph = comp.ev_phase[p, eidx]
        lidx = comp.ev_law[p, eidx]
        jump = np.zeros(alive.size)
        has_law = lidx >= 0
        if np.any(has_law):
            u_mix = rng.uniforms(state, gid[has_law], cc[has_law], rng.CH_MIX)
            u_mag = rng.uniforms(state, gid[has_law], cc[has_law], rng.CH_MAG)
            jump[has_law] = _sample_jump(comp, lidx[has_law], u_mix, u_mag)

        t_next = tt + dt
        x_left = xx + d * dt
        is_kill = new_ph == _KILL
        x_new = np.where(is_kill, x_left, x_left + jump)

        def snap_full(sel):
            # occupation including the whole current segment
            s = occ[alive[sel]].copy()
            s[np.arange(sel.sum()), p[sel]] += dt[sel]
            return s

        def snap_at(sel, s_time):
            s = occ[alive[sel]].copy()
            s[np.arange(sel.sum()), p[sel]] += s_time[sel] - tt[sel]
            return s

        if want_fix:
            sel = (tt <= t_fix) & (t_next > t_fix)
            if np.any(sel):
                rows = alive[sel]
                out.fix_alive[rows] = True
                out.fix_x[rows] = xx[sel] + d[sel] * (t_fix - tt[sel])
                out.fix_phase[rows] = p[sel]
                out.fix_occ[rows] = snap_at(sel, np.full(alive.size, t_fix))

        # ---- infimum: last touch wins (<=); left limit first, landing second
        sel = x_left <= out.inf_x[alive]
        if np.any(sel):
            rows = alive[sel]
            out.inf_x[rows] = x_left[sel]
            out.inf_t[rows] = t_next[sel]
            out.inf_occ[rows] = snap_full(sel)
            out.inf_attained[rows] = False
            out.inf_phase[rows] = p[sel]
            out.inf_phase_after[rows] = new_ph[sel]
            out.inf_overshoot[rows] = np.where(is_kill[sel], 0.0, jump[sel])
            out.inf_at_death[rows] = is_kill[sel]
        sel = ~is_kill & (x_new <= out.inf_x[alive])
        if np.any(sel):
            rows = alive[sel]
            out.inf_x[rows] = x_new[sel]
            out.inf_t[rows] = t_next[sel]
            out.inf_occ[rows] = snap_full(sel)
            out.inf_attained[rows] = True
            out.inf_phase[rows] = new_ph[sel]
            out.inf_phase_after[rows] = new_ph[sel]
            out.inf_overshoot[rows] = 0.0
            out.inf_at_death[rows] = False

        # ---- supremum: first touch wins (strict >)
        sel = x_left > out.sup_x[alive]
        if np.any(sel):
            rows = alive[sel]
            out.sup_x[rows] = x_left[sel]
            out.sup_t[rows] = t_next[sel]
            out.sup_occ[rows] = snap_full(sel)
            out.sup_phase[rows] = p[sel]
            out.sup_phase_after[rows] = new_ph[sel]
            out.sup_drop[rows] = np.where(is_kill[sel], 0.0, jump[sel])
            out.sup_at_death[rows] = is_kill[sel]
        sel = ~is_kill & (x_new > out.sup_x[alive])
        if np.any(sel):
            rows = alive[sel]
            out.sup_x[rows] = x_new[sel]
            out.sup_t[rows] = t_next[sel]
            out.sup_occ[rows] = snap_full(sel)
            out.sup_phase[rows] = new_ph[sel]
            out.sup_phase_after[rows] = new_ph[sel]
            out.sup_drop[rows] = 0.0
            out.sup_at_death[rows] = False

        # ---- last exit from (-inf, a]
        if want_sigma:
            lvl = av[alive]
            ends_below = x_left <= lvl
            crosses = (xx <= lvl) & ~ends_below
            if np.any(crosses):
                tstar = np.where(crosses, tt + (lvl - xx) / np.where(d != 0, d, 1.0), 0.0)
                rows = alive[crosses]
                out.sigma_t[rows] = tstar[crosses]
                out.sigma_x[rows] = lvl[crosses]
                out.sigma_cont[rows] = True
                out.sigma_at_zeta[rows] = False
                out.sigma_phase[rows] = p[crosses]
                out.sigma_occ[rows] = snap_at(crosses, tstar)
            leaves = ends_below & (is_kill | (x_new > lvl))
            if np.any(leaves):
                rows = alive[leaves]
                out.sigma_t[rows] = t_next[leaves]
                out.sigma_x[rows] = x_new[leaves]
                out.sigma_cont[rows] = False
                out.sigma_at_zeta[rows] = is_kill[leaves]
                out.sigma_phase[rows] = np.where(is_kill[leaves], -1, new_ph[leaves])
                out.sigma_occ[rows] = snap_full(leaves)

        # ---- first passage above a level
        if want_tau:
            lvl = xv[alive]
            nohit = ~out.tau_hit[alive]
            crosses = nohit & (xx <= lvl) & (x_left > lvl)
            if np.any(crosses):
                tstar = np.where(crosses, tt + (lvl - xx) / np.where(d != 0, d, 1.0), 0.0)
                rows = alive[crosses]
                out.tau_hit[rows] = True
                out.tau_t[rows] = tstar[crosses]
                out.tau_x[rows] = lvl[crosses]
                out.tau_creep[rows] = True
                out.tau_phase[rows] = p[crosses]
                out.tau_occ[rows] = snap_at(crosses, tstar)
            overs = nohit & ~crosses & ~is_kill & (x_new > lvl)
            if np.any(overs):
                rows = alive[overs]
                out.tau_hit[rows] = True
                out.tau_t[rows] = t_next[overs]
                out.tau_x[rows] = x_new[overs]
                out.tau_creep[rows] = False
                out.tau_phase[rows] = new_ph[overs]
                out.tau_occ[rows] = snap_full(overs)

        # ---- bookkeeping and deaths
        occ[alive, p] += dt
        if np.any(is_kill):
            rows = alive[is_kill]
            out.zeta[rows] = t_next[is_kill]
            out.x_end[rows] = x_left[is_kill]
            out.j_end[rows] = p[is_kill]
            out.n_events[rows] = cc[is_kill].astype(np.int64) + 1
        t[alive] = t_next
        x[alive] = x_new
        ctr[alive] = cc + np.uint64(1)
        ph[alive] = np.where(is_kill, p, new_ph)
        if np.any(ctr[alive] >= rng.MAX_EVENTS):
            raise UnsupportedError("a path exceeded the per-path event budget")
        alive = alive[~is_kill]
    return out


def iter_summaries(model: MapModel, seed: int, j0: int, n_paths: int, *,
                   x0: float = 0.0, sigma_level=None, tau_level=None, t_fix=None,
                   batch_size: int = DEFAULT_BATCH, threads: int = 1):
    """Yield :class:`SummaryBlock` objects covering paths 0..n_paths - 1.

    Blocks always have the fixed ``batch_size`` layout and are yielded in
    path order, so any reduction over them is independent of ``threads``.
    """
    comp = compile_model(model)
    offsets = list(range(0, int(n_paths), int(batch_size)))

    def levels(param, off, cnt):
        if param is None or np.ndim(param) == 0:
            return param
        return np.asarray(param)[off:off + cnt]

    def run(off):
        cnt = min(batch_size, n_paths - off)
        return simulate_block(comp, seed, j0, cnt, path_offset=off, x0=x0,
                              sigma_level=levels(sigma_level, off, cnt),
                              tau_level=levels(tau_level, off, cnt), t_fix=t_fix)

    if threads <= 1:
        for off in offsets:
            yield run(off)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for k in range(0, len(offsets), threads):
            group = offsets[k:k + threads]
            for block in pool.map(run, group):
                yield block


def summaries(model: MapModel, seed: int, j0: int, n_paths: int, **kwargs) -> SummaryBlock:
    """Concatenated summary arrays for n_paths paths (convenience wrapper)."""
    blocks = list(iter_summaries(model, seed, j0, n_paths, **kwargs))
    if len(blocks) == 1:
        return blocks[0]
    merged = {}
    for name in vars(blocks[0]):
        vals = [getattr(b, name) for b in blocks]
        if vals[0] is None:
            merged[name] = None
        elif np.ndim(vals[0]) == 0:
            merged[name] = vals[0]
        else:
            merged[name] = np.concatenate(vals)
    return SummaryBlock(**merged)


# ---------------------------------------------------------------------------
# Scalar paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathEvent:
    """One event: the linear segment of length ``dt`` that precedes it, then
    a jump/switch/kill.  ``jump`` is None for killing."""

    dt: float
    kind: str                  # "jump" | "switch" | "kill"
    jump: float | None
    phase_after: int | None


@dataclass(frozen=True)
class Path:
    """Piecewise-linear sample path as an event list.

    Durations are the primitive representation (event times are their
    cumulative sums), which makes time reversal an exact involution.
    """

    drift: tuple[float, ...]
    x0: float
    j0: int
    events: tuple[PathEvent, ...]

    def __post_init__(self):
        if not self.events or self.events[-1].kind != "kill":
            raise ValidationError("a path must end with its killing event")

    @property
    def zeta(self) -> float:
        return math.fsum(e.dt for e in self.events)

    def records(self):
        """Yield (time, phase_before, phase_after, jump) per event; the
        killing event carries phase_after None."""
        t, phase = 0.0, self.j0
        for e in self.events:
            t = t + e.dt
            yield (t, phase, e.phase_after, e.jump)
            if e.kind != "kill":
                phase = e.phase_after

    def value_at(self, s: float) -> float:
        """X_s for 0 <= s < zeta (exact piecewise-linear evaluation)."""
        t, xcur, phase = 0.0, self.x0, self.j0
        for e in self.events:
            if s < t + e.dt:
                return xcur + self.drift[phase] * (s - t)
            t = t + e.dt
            xcur = xcur + self.drift[phase] * e.dt
            if e.kind == "kill":
                break
            xcur += e.jump
            phase = e.phase_after
        raise DomainError("evaluation time at or beyond the killing time")

    def occupations(self, n: int) -> np.ndarray:
        occ = [[] for _ in range(n)]
        phase = self.j0
        for e in self.events:
            occ[phase].append(e.dt)
            if e.kind != "kill":
                phase = e.phase_after
        return np.array([math.fsum(v) for v in occ])


def simulate_path(model: MapModel, seed: int, path_index: int = 0,
                  j0: int = 0, x0: float = 0.0) -> Path:
    """Simulate one path; draws agree bit-for-bit with the block engine's
    path of the same index under the same seed."""
    comp = compile_model(model)
    state = rng.seed_state(seed)
    pid = np.uint64(path_index)
    phase = int(j0)
    events = []
    for c in range(rng.MAX_EVENTS):
        cc = np.uint64(c)
        u_time = rng.uniforms(state, pid, cc, rng.CH_TIME)
        u_type = rng.uniforms(state, pid, cc, rng.CH_TYPE)
        dt = float(-np.log(u_time) / comp.total_rate[phase])
        eidx = int(np.argmax(u_type <= comp.ev_cum[phase]))
        new_ph = int(comp.ev_phase[phase, eidx])
        lidx = int(comp.ev_law[phase, eidx])
        if new_ph == _KILL:
            events.append(PathEvent(dt=dt, kind="kill", jump=None, phase_after=None))
            return Path(drift=tuple(comp.drift), x0=float(x0), j0=int(j0),
                        events=tuple(events))
        u_mix = rng.uniforms(state, pid, cc, rng.CH_MIX)
        u_mag = rng.uniforms(state, pid, cc, rng.CH_MAG)
        jump = float(_sample_jump(comp, np.array([lidx]), u_mix, u_mag)[0])
        kind = "jump" if new_ph == phase and lidx >= 0 and eidx == 0 and \
            model.levy[phase].jump_rate > 0.0 else "switch"
        events.append(PathEvent(dt=dt, kind=kind, jump=jump, phase_after=new_ph))
        phase = new_ph
    raise UnsupportedError("a path exceeded the per-path event budget")


# ---------------------------------------------------------------------------
# Path functionals (scalar mirror of the lockstep rules)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtremeRecord:
    value: float
    time: float
    occupations: np.ndarray
    phase: int                 # phase in which the extremum was achieved
    attained: bool             # path value at the time equals the extremum
    phase_after: int | None    # phase entered there (None when killed)
    offset: float              # start level of the post-extremum segment
    at_death: bool


@dataclass(frozen=True)
class ExitRecord:
    level: float
    time: float
    occupations: np.ndarray
    phase: int | None
    continuous: bool
    at_zeta: bool
    value: float


@dataclass(frozen=True)
class PassageRecord:
    level: float
    hit: bool
    time: float
    occupations: np.ndarray
    phase: int | None
    creep: bool
    value: float


@dataclass(frozen=True)
class PathSummary:
    zeta: float
    x_end: float
    j_end: int
    occupations: np.ndarray
    infimum: ExtremeRecord
    supremum: ExtremeRecord
    last_exit: ExitRecord | None
    first_passage: PassageRecord | None


def path_summary(path: Path, a: float | None = None, x: float | None = None,
                 n_phases: int | None = None) -> PathSummary:
    """Exact functionals of a piecewise-linear path.

    ``a`` is the last-exit level, ``x`` the first-passage level; either may
    be omitted.  The update rules are the scalar mirror of the lockstep
    engine, so summaries of simulated paths match it bitwise.
    """
    n = n_phases if n_phases is not None else len(path.drift)
    occ = np.zeros(n)
    t = 0.0
    xcur = path.x0
    phase = path.j0

    inf = dict(value=path.x0, time=0.0, occ=occ.copy(), phase=path.j0, attained=True,
               phase_after=path.j0, offset=0.0, at_death=False)
    sup = dict(value=path.x0, time=0.0, occ=occ.copy(), phase=path.j0, attained=True,
               phase_after=path.j0, offset=0.0, at_death=False)
    sig = None
    if a is not None:
        sig = dict(time=0.0, occ=occ.copy(), phase=path.j0, cont=False,
                   at_zeta=False, value=path.x0)
    tau = None
    if x is not None:
        if x <= path.x0:
            raise DomainError("first-passage level must lie above the start level")
        tau = dict(hit=False, time=0.0, occ=occ.copy(), phase=None, creep=False, value=0.0)

    for e in path.events:
        d = path.drift[phase]
        dt = e.dt
        t_next = t + dt
        x_left = xcur + d * dt
        is_kill = e.kind == "kill"
        x_new = x_left if is_kill else x_left + e.jump

        def occ_full():
            # exact mirror of the lockstep engine: add dt itself, not t_next - t
            s = occ.copy()
            s[phase] += dt
            return s

        def occ_at(s_time):
            s = occ.copy()
            s[phase] += s_time - t
            return s

        if x_left <= inf["value"]:
            inf.update(value=x_left, time=t_next, occ=occ_full(), attained=False,
                       phase=phase, phase_after=None if is_kill else e.phase_after,
                       offset=0.0 if is_kill else e.jump, at_death=is_kill)
        if not is_kill and x_new <= inf["value"]:
            inf.update(value=x_new, time=t_next, occ=occ_full(), attained=True,
                       phase=e.phase_after, phase_after=e.phase_after,
                       offset=0.0, at_death=False)
        if x_left > sup["value"]:
            sup.update(value=x_left, time=t_next, occ=occ_full(), attained=True,
                       phase=phase, phase_after=None if is_kill else e.phase_after,
                       offset=0.0 if is_kill else e.jump, at_death=is_kill)
        if not is_kill and x_new > sup["value"]:
            sup.update(value=x_new, time=t_next, occ=occ_full(), attained=True,
                       phase=e.phase_after, phase_after=e.phase_after,
                       offset=0.0, at_death=False)
        if sig is not None:
            ends_below = x_left <= a
            if (xcur <= a) and not ends_below:
                tstar = t + (a - xcur) / d
                sig.update(time=tstar, occ=occ_at(tstar), phase=phase, cont=True,
                           at_zeta=False, value=a)
            elif ends_below and (is_kill or x_new > a):
                sig.update(time=t_next, occ=occ_full(),
                           phase=None if is_kill else e.phase_after, cont=False,
                           at_zeta=is_kill, value=x_new)
        if tau is not None and not tau["hit"]:
            if xcur <= x and x_left > x:
                tstar = t + (x - xcur) / d
                tau.update(hit=True, time=tstar, occ=occ_at(tstar), phase=phase,
                           creep=True, value=x)
            elif not is_kill and x_new > x:
                tau.update(hit=True, time=t_next, occ=occ_full(),
                           phase=e.phase_after, creep=False, value=x_new)

        occ[phase] += dt
        t = t_next
        xcur = x_new
        if not is_kill:
            phase = e.phase_after

    def extreme(rec, is_inf):
        attained = rec["attained"]
        return ExtremeRecord(
            value=rec["value"], time=rec["time"], occupations=rec["occ"],
            phase=rec["phase"], attained=attained,
            phase_after=rec["phase_after"], offset=rec["offset"],
            at_death=rec["at_death"])

    return PathSummary(
        zeta=t, x_end=x_left, j_end=phase, occupations=occ,
        infimum=extreme(inf, True), supremum=extreme(sup, False),
        last_exit=None if sig is None else ExitRecord(
            level=a, time=sig["time"], occupations=sig["occ"], phase=sig["phase"],
            continuous=sig["cont"], at_zeta=sig["at_zeta"], value=sig["value"]),
        first_passage=None if tau is None else PassageRecord(
            level=x, hit=tau["hit"], time=tau["time"], occupations=tau["occ"],
            phase=tau["phase"], creep=tau["creep"], value=tau["value"]),
    )


# ---------------------------------------------------------------------------
# Reversal and splitting operators
# ---------------------------------------------------------------------------

def _dead_path(path: Path, phase: int) -> Path:
    return Path(drift=path.drift, x0=0.0, j0=phase,
                events=(PathEvent(dt=0.0, kind="kill", jump=None, phase_after=None),))


def reverse_path(path: Path, at: str = "zeta", level: float | None = None) -> Path:
    """Time-and-space reversal.

    ``at`` is one of ``zeta`` (the killing time, final jump ignored),
    ``infimum`` (at the infimum time when the infimum is attained, just
    before it when the path jumped off its infimum), ``sigma`` (a continuous
    last exit from ``level``) or ``tau`` (a continuous first passage over
    ``level``).  The reversed path runs the pre-T segments backwards with
    unchanged durations, phases and jump sizes; a jump landing exactly at an
    attained infimum becomes the reversed path's starting level.  Reversing
    twice at the killing time reproduces the original event list exactly.
    """
    fold_jump = 0.0
    if at == "zeta":
        kept = list(path.events[:-1])
        final_dt = path.events[-1].dt
    else:
        if at == "infimum":
            rec = path_summary(path).infimum
            if rec.at_death:
                return reverse_path(path, "zeta")
            T = rec.time
            if T == 0.0:
                return _dead_path(path, path.j0)
        elif at == "sigma":
            rec = path_summary(path, a=level).last_exit
            if rec.at_zeta or not rec.continuous:
                raise DomainError("reversal at the last exit requires a continuous exit")
            T = rec.time
        elif at == "tau":
            rec = path_summary(path, x=level).first_passage
            if not rec.hit or not rec.creep:
                raise DomainError("reversal at first passage requires continuous passage")
            T = rec.time
        else:
            raise DomainError(f"unknown reversal time {at!r}")
        kept, t, last_t = [], 0.0, 0.0
        for e in path.events:
            t_next = t + e.dt
            if e.kind == "kill" or t_next > T:
                break
            if t_next == T:
                # an event exactly at the infimum: a landing there is folded
                # into the reversed start, a jump off it is ignored
                if at == "infimum" and rec.attained:
                    fold_jump = e.jump
                break
            kept.append(e)
            last_t = t_next
            t = t_next
        final_dt = T - last_t
    seg_phases = [path.j0] + [e.phase_after for e in kept]
    rev_events = []
    dur = final_dt
    for k in range(len(kept) - 1, -1, -1):
        rev_events.append(PathEvent(dt=dur, kind=kept[k].kind, jump=kept[k].jump,
                                    phase_after=seg_phases[k]))
        dur = kept[k].dt
    rev_events.append(PathEvent(dt=dur, kind="kill", jump=None, phase_after=None))
    return Path(drift=path.drift, x0=fold_jump, j0=seg_phases[-1],
                events=tuple(rev_events))


def extract_segment(path: Path, origin: str = "post_infimum",
                    a: float = 0.0) -> Path:
    """Sub-path after the infimum or after the last exit from level ``a``,
    shifted to start at time 0 and level measured from the reference.

    The post-infimum segment starts at the overshoot height (0 when the
    infimum is attained, the empty path when the path was killed there); the
    post-exit segment requires a continuous exit.
    """
    if origin == "post_infimum":
        rec = path_summary(path).infimum
        if rec.at_death:
            return _dead_path(path, rec.phase)
        T, start_level, start_phase = rec.time, rec.offset, rec.phase_after
    elif origin == "post_sigma":
        rec = path_summary(path, a=a).last_exit
        if rec.at_zeta:
            raise DomainError("no post-exit segment: the path ends below the level")
        if not rec.continuous:
            raise DomainError("post-exit segment requires a continuous exit")
        T, start_level, start_phase = rec.time, 0.0, rec.phase
    else:
        raise DomainError(f"unknown segment origin {origin!r}")
    events = []
    t = 0.0
    for e in path.events:
        t_next = t + e.dt
        if t_next > T:
            dt = t_next - T if not events else e.dt
            events.append(PathEvent(dt=dt, kind=e.kind, jump=e.jump,
                                    phase_after=e.phase_after))
        t = t_next
    return Path(drift=path.drift, x0=start_level, j0=start_phase, events=tuple(events))


# ---------------------------------------------------------------------------
# Monte Carlo transforms
# ---------------------------------------------------------------------------

TARGETS = ("zeta", "sup", "inf", "sigma", "tau")


@dataclass(frozen=True)
class McEstimate:
    """Empirical transform matrix with entrywise standard errors (real and
    imaginary parts separately)."""

    target: str
    alpha: complex
    beta: np.ndarray
    value: np.ndarray
    se_re: np.ndarray
    se_im: np.ndarray
    n_paths: int

    def z_scores(self, reference: np.ndarray) -> np.ndarray:
        """Max of the real- and imaginary-part z statistics per entry."""
        diff = self.value - np.asarray(reference, dtype=complex)
        z_re = np.abs(diff.real) / np.where(self.se_re > 0, self.se_re, np.inf)
        z_im = np.abs(diff.imag) / np.where(self.se_im > 0, self.se_im, np.inf)
        z = np.maximum(z_re, z_im)
        exact = (self.se_re == 0) & (self.se_im == 0) & (np.abs(diff) < 1e-12)
        return np.where(exact, 0.0, z)


def target_values(block: SummaryBlock, target: str, alpha: complex, beta: np.ndarray,
                  relative_to: float = 0.0):
    """Per-path transform values, target phases and validity mask for one
    functional."""
    a = complex(alpha)
    if target == "zeta":
        if abs(a.real) > 1e-12:
            raise DomainError("killing-time transform sampled on the imaginary axis only")
        vals = np.exp(a * (block.x_end - relative_to) - block.occ @ beta)
        return vals, block.j_end, np.ones(len(block), dtype=bool)
    if target == "sup":
        if a.real > 1e-12:
            raise DomainError("supremum transform requires Re(alpha) <= 0")
        vals = np.exp(a * (block.sup_x - relative_to) - block.sup_occ @ beta)
        return vals, block.sup_phase, np.ones(len(block), dtype=bool)
    if target == "inf":
        if a.real < -1e-12:
            raise DomainError("infimum transform requires Re(alpha) >= 0")
        vals = np.exp(a * (block.inf_x - relative_to) - block.inf_occ @ beta)
        return vals, block.inf_phase, np.ones(len(block), dtype=bool)
    if target == "sigma":
        if block.sigma_t is None:
            raise DomainError("block was simulated without a last-exit level")
        valid = block.sigma_cont & ~block.sigma_at_zeta
        vals = np.exp(-block.sigma_occ @ beta)
        return vals, block.sigma_phase, valid
    if target == "tau":
        if block.tau_t is None:
            raise DomainError("block was simulated without a passage level")
        valid = block.tau_hit & block.tau_creep
        vals = np.exp(a * block.tau_x - block.tau_occ @ beta)
        return vals, block.tau_phase, valid
    raise DomainError(f"unknown target {target!r}")


def mc_transform(model: MapModel, target: str, alpha: complex, beta, n_paths: int,
                 seed: int, *, a: float = 0.0, x: float = 1.0,
                 batch_size: int = DEFAULT_BATCH, threads: int = 1) -> McEstimate:
    """Empirical counterpart of a transform matrix.

    Entry (i, j) averages exp(alpha X - <beta, occupations>) 1{phase = j}
    over ``n_paths`` paths started in phase i, for the requested functional.
    Reproducible to the byte for fixed (seed, n_paths): each (start phase,
    path index) owns a private stream.
    """
    if n_paths < 1000:
        raise DomainError("transform estimation needs at least 1000 paths")
    if target not in TARGETS:
        raise DomainError(f"unknown target {target!r}")
    n = model.n
    b = np.asarray(beta, dtype=float) * np.ones(n)
    value = np.zeros((n, n), dtype=complex)
    se_re = np.zeros((n, n))
    se_im = np.zeros((n, n))
    for i in range(n):
        sub = rng.derive_seed(seed, 101, i)
        s1 = np.zeros(n, dtype=complex)
        s2r = np.zeros(n)
        s2i = np.zeros(n)
        for block in iter_summaries(model, sub, i, n_paths,
                                    sigma_level=a if target == "sigma" else None,
                                    tau_level=x if target == "tau" else None,
                                    batch_size=batch_size, threads=threads):
            vals, phases, valid = target_values(block, target, alpha, b)
            for j in range(n):
                sel = valid & (phases == j)
                v = np.where(sel, vals, 0.0)
                s1[j] += v.sum()
                s2r[j] += (v.real ** 2).sum()
                s2i[j] += (v.imag ** 2).sum()
        mean = s1 / n_paths
        var_re = np.maximum(s2r / n_paths - mean.real ** 2, 0.0)
        var_im = np.maximum(s2i / n_paths - mean.imag ** 2, 0.0)
        value[i] = mean
        se_re[i] = np.sqrt(var_re / n_paths)
        se_im[i] = np.sqrt(var_im / n_paths)
    return McEstimate(target=target, alpha=complex(alpha), beta=b, value=value,
                      se_re=se_re, se_im=se_im, n_paths=n_paths)
