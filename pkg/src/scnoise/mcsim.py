"""Monte-Carlo transient-noise simulation of switched-capacitor circuits.

Each clock phase is a linear network of capacitors, closed-switch
conductances and OTA transconductances, driven by white noise currents
(one-sided PSD 4*kB*T*Gon per closed switch, 4*kB*T*gamma*Gm per OTA).
States are node voltages, advanced by unconditionally stable backward Euler:

    (C/dt + G) v' = (C/dt) v + i_n

with each noise source drawing an independent zero-mean Gaussian current of
variance PSD/(2*dt) per step. Opening a switch simply removes its
conductance, freezing charge; closing one hands settling to the Gon
dynamics, as in the physical circuit. Runs use independent, reproducible
RNG streams derived from (seed, run index), so results are deterministic
regardless of execution order or batching.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .bode import K_BOLTZMANN
from .netlist import phase_view

__all__ = [
    "SimulationError",
    "SettlingWarning",
    "McConfig",
    "PhaseSystem",
    "TraceEnsemble",
    "compile_phase",
    "step",
    "run",
    "compare",
    "ComparisonRow",
    "Comparison",
]

_CHUNK_VALUES = 6_000_000  # noise values per run-batch; result-invariant batching


class SimulationError(RuntimeError):
    pass


class SettlingWarning(UserWarning):
    """A phase does not settle to DC within its half-period."""


@dataclass(frozen=True)
class McConfig:
    runs: int = 1000
    periods: int = 20
    dt: float = None  # seconds; None selects 1/(20 * fastest pole)
    seed: int = 1
    temperature: float = None  # kelvin; None uses the circuit's
    record: int = 0  # samples between recorded points; 0 = phase ends only

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.periods < 1:
            raise ValueError("periods must be >= 1")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass(frozen=True)
class PhaseSystem:
    """Nodal matrices of one clock phase over the circuit's state nodes."""

    phase: str
    nodes: tuple  # state node order (non-ground, non-source)
    cap: np.ndarray  # capacitance matrix, farads
    cond: np.ndarray  # conductance matrix incl. switch and VCCS stamps
    incidence: np.ndarray  # (n_states, n_sources) current injection map
    psd: np.ndarray  # one-sided PSDs, A^2/Hz, per source
    source_names: tuple

    def poles(self):
        """Finite pole magnitudes (1/s) of C v' = -G v, via the (G, C) pencil."""
        if not self.nodes:
            return np.array([])
        vals = scipy.linalg.eigvals(self.cond, self.cap)
        vals = vals[np.isfinite(vals)]
        return np.abs(vals)

    def damped_poles(self):
        """Real parts of the damped (settling) modes, 1/s."""
        if not self.nodes:
            return np.array([])
        vals = scipy.linalg.eigvals(self.cond, self.cap)
        vals = vals[np.isfinite(vals)]
        re = vals.real
        cutoff = 1e-9 * max(np.abs(vals).max(), 1.0) if vals.size else 0.0
        return re[re > cutoff]


def _state_nodes(circuit):
    fixed = {circuit.ground} | {s.node for s in circuit.sources}
    return tuple(sorted(n for n in circuit.nodes if n not in fixed))


def compile_phase(pv, temperature):
    """Assemble the :class:`PhaseSystem` for one phase view."""
    circuit = pv.circuit
    nodes = _state_nodes(circuit)
    idx = {n: i for i, n in enumerate(nodes)}
    fixed = {circuit.ground} | {s.node for s in circuit.sources}
    n = len(nodes)
    kt4 = 4.0 * K_BOLTZMANN * temperature

    cap = np.zeros((n, n))
    for c in circuit.capacitors:
        ia, ib = idx.get(c.a), idx.get(c.b)
        if ia is not None:
            cap[ia, ia] += c.value
        if ib is not None:
            cap[ib, ib] += c.value
        if ia is not None and ib is not None:
            cap[ia, ib] -= c.value
            cap[ib, ia] -= c.value

    cond = np.zeros((n, n))
    cols, psds, names = [], [], []

    def branch(na, nb):
        b = np.zeros(n)
        if na in idx:
            b[idx[na]] += 1.0
        if nb in idx:
            b[idx[nb]] -= 1.0
        return b

    for s in pv.closed:
        ia, ib = idx.get(s.a), idx.get(s.b)
        if ia is not None:
            cond[ia, ia] += s.gon
        if ib is not None:
            cond[ib, ib] += s.gon
        if ia is not None and ib is not None:
            cond[ia, ib] -= s.gon
            cond[ib, ia] -= s.gon
        cols.append(branch(s.a, s.b))
        psds.append(kt4 * s.gon)
        names.append(s.name)

    for o in circuit.otas:
        io, ii = idx.get(o.output), idx.get(o.input)
        if io is not None and ii is not None:
            cond[io, ii] += o.gm  # KCL: gm*v_in flows out of the output node
        cols.append(branch(o.output, circuit.ground))
        psds.append(kt4 * o.gamma * o.gm)
        names.append(o.name)

    # every state must have a capacitive or conductive path to a fixed node
    adj = {node: set() for node in circuit.nodes}

    def link(a, b):
        adj[a].add(b)
        adj[b].add(a)

    for c in circuit.capacitors:
        link(c.a, c.b)
    for s in pv.closed:
        link(s.a, s.b)
    reached = set(fixed)
    stack = list(fixed)
    while stack:
        x = stack.pop()
        for y in adj.get(x, ()):
            if y not in reached:
                reached.add(y)
                stack.append(y)
    lost = [node for node in nodes if node not in reached]
    if lost:
        raise SimulationError(
            f"floating island in phase {pv.phase!r}: node {lost[0]!r} has no "
            "capacitive or conductive path to a fixed node"
        )

    incidence = np.column_stack(cols) if cols else np.zeros((n, 0))
    return PhaseSystem(
        phase=pv.phase,
        nodes=nodes,
        cap=cap,
        cond=cond,
        incidence=incidence,
        psd=np.array(psds),
        source_names=tuple(names),
    )


def step(system, v, dt, rng):
    """One backward-Euler update of the node voltages."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    m = system.cap / dt + system.cond
    eta = rng.standard_normal(len(system.psd)) if len(system.psd) else np.array([])
    i_n = system.incidence @ (np.sqrt(system.psd / (2.0 * dt)) * eta)
    try:
        return np.linalg.solve(m, system.cap @ v / dt + i_n)
    except np.linalg.LinAlgError:
        raise SimulationError(
            f"singular system in phase {system.phase!r} (floating island "
            "missed at compile)"
        ) from None


@dataclass(frozen=True)
class TraceEnsemble:
    """Recorded readout voltages of a simulated ensemble."""

    circuit: str
    readout: tuple  # (phase, (nodeA, nodeB))
    times: np.ndarray  # recorded time grid, seconds
    samples: np.ndarray  # (runs, n_points) readout voltage per run
    readout_times: np.ndarray  # end of the readout phase, one per period
    readout_samples: np.ndarray  # (runs, periods)
    dt: float
    seed: int
    runs: int
    periods: int
    temperature: float

    @property
    def rms(self):
        """Ensemble RMS per recorded time point."""
        return np.sqrt(np.mean(self.samples ** 2, axis=0))

    @property
    def readout_rms(self):
        """Ensemble RMS at each readout instant."""
        return np.sqrt(np.mean(self.readout_samples ** 2, axis=0))

    @property
    def readout_se(self):
        """Standard error of the readout RMS, ~ RMS * sqrt(1/(2*runs))."""
        return self.readout_rms * math.sqrt(1.0 / (2.0 * self.runs))

    def write_csv(self, path, per_run=False):
        """Write the trace: ``time_s,rms_v`` or ``time_s,run,node_v`` rows."""
        with open(path, "w") as f:
            if per_run:
                f.write("time_s,run,node_v\n")
                for r in range(self.runs):
                    for t, v in zip(self.times, self.samples[r]):
                        f.write(f"{t:.9e},{r},{v:.9e}\n")
            else:
                f.write("time_s,rms_v\n")
                for t, v in zip(self.times, self.rms):
                    f.write(f"{t:.9e},{v:.9e}\n")


def _auto_dt(systems):
    fmax = 0.0
    for s in systems:
        p = s.poles()
        if p.size:
            fmax = max(fmax, float(p.max()))
    if fmax <= 0.0:
        return None
    return 1.0 / (20.0 * fmax)


def _check_settling(systems, half_period, strict):
    need = math.log(1e3)  # settle to 0.1 %
    for s in systems:
        damped = s.damped_poles()
        if damped.size and damped.min() * half_period < need:
            tau = 1.0 / damped.min()
            msg = (
                f"phase {s.phase!r} settles with tau = {tau:.3g} s against a "
                f"half-period of {half_period:.3g} s; Ron*C or Ceq/Gm is not "
                "<< T/2 and sampled-noise results may be biased"
            )
            if strict:
                raise SimulationError(msg)
            warnings.warn(msg, SettlingWarning, stacklevel=3)


def run(circuit, cfg, strict=False):
    """Simulate the ensemble and record readout voltages.

    Deterministic for a fixed (seed, runs, dt): every run owns an RNG stream
    spawned from the seed, independent of batching or execution order.
    """
    if circuit.fs <= 0:
        raise SimulationError("circuit must declare a sampling frequency fs")
    if circuit.readout is None:
        raise SimulationError("circuit declares no readout")
    temperature = cfg.temperature if cfg.temperature is not None else circuit.temperature

    systems = [compile_phase(phase_view(circuit, ph), temperature) for ph in circuit.phases]
    nodes = systems[0].nodes
    idx = {n: i for i, n in enumerate(nodes)}
    period = 1.0 / circuit.fs
    phase_dur = period / len(circuit.phases)
    _check_settling(systems, phase_dur, strict)

    dt = cfg.dt if cfg.dt is not None else _auto_dt(systems)
    if dt is None:
        dt = phase_dur / 100.0

    ro_phase, (ro_a, ro_b) = circuit.readout
    ia = idx.get(ro_a)
    ib = idx.get(ro_b)

    # per-phase exact-duration stepping and precomputed update operators;
    # zero-PSD sources contribute nothing and draw no randomness, and a phase
    # with no conductance and no live noise holds every charge exactly
    plans = []
    for s in systems:
        steps = max(1, math.ceil(phase_dur / dt - 1e-9))
        dtp = phase_dur / steps
        live = np.nonzero(s.psd > 0.0)[0]
        if not live.size and not s.cond.any():
            plans.append((s, steps, dtp, None, None))
            continue
        m = s.cap / dtp + s.cond
        try:
            k1 = np.linalg.solve(m, s.cap / dtp)
            k2 = None
            if live.size:
                scale = np.sqrt(s.psd[live] / (2.0 * dtp))
                k2 = np.linalg.solve(m, s.incidence[:, live] * scale)
        except np.linalg.LinAlgError:
            raise SimulationError(
                f"singular system in phase {s.phase!r} (floating island missed "
                "at compile)"
            ) from None
        k2 = k2.astype(np.float32) if k2 is not None else None
        plans.append((s, steps, dtp, k1, k2))

    rngs = [
        np.random.Generator(np.random.SFC64(ss))
        for ss in np.random.SeedSequence(cfg.seed).spawn(cfg.runs)
    ]

    v = np.zeros((len(nodes), cfg.runs))
    times, recorded = [], []
    ro_times, ro_samples = [], []
    t = 0.0

    def readout_of(vmat):
        out = vmat[ia] if ia is not None else np.zeros(cfg.runs)
        if ib is not None:
            out = out - vmat[ib]
        return out.copy()

    tmp = np.empty_like(v)
    nstates = len(nodes)
    for _ in range(cfg.periods):
        for s, steps, dtp, k1, k2 in plans:
            if k1 is None:
                # charge-holding phase: voltages frozen exactly
                if cfg.record:
                    for step_no in range(cfg.record, steps, cfg.record):
                        times.append(t + step_no * dtp)
                        recorded.append(readout_of(v))
                t += phase_dur
                times.append(t)
                recorded.append(readout_of(v))
                if s.phase == ro_phase:
                    ro_times.append(t)
                    ro_samples.append(recorded[-1])
                continue
            nsrc = k2.shape[1] if k2 is not None else 0
            done = 0
            while done < steps:
                chunk = steps - done
                if nsrc:
                    chunk = min(chunk, max(1, _CHUNK_VALUES // (nsrc * cfg.runs)))
                w = None
                if nsrc:
                    # per-run streams: each run draws its (chunk, nsrc) block
                    # in row-major order, so batching cannot change results
                    block = np.empty((cfg.runs, chunk, nsrc), dtype=np.float32)
                    for r in range(cfg.runs):
                        rngs[r].standard_normal(out=block[r], dtype=np.float32)
                    flat = block.reshape(cfg.runs * chunk, nsrc) @ k2.T
                    w = np.ascontiguousarray(
                        flat.reshape(cfg.runs, chunk, nstates).transpose(1, 2, 0)
                    )
                for j in range(chunk):
                    np.matmul(k1, v, out=tmp)
                    if w is not None:
                        tmp += w[j]
                    v, tmp = tmp, v
                    step_no = done + j + 1
                    if cfg.record and (step_no % cfg.record == 0) and step_no != steps:
                        times.append(t + step_no * dtp)
                        recorded.append(readout_of(v))
                done += chunk
            t += phase_dur
            times.append(t)
            recorded.append(readout_of(v))
            if s.phase == ro_phase:
                ro_times.append(t)
                ro_samples.append(recorded[-1])

    samples = np.array(recorded).T if recorded else np.zeros((cfg.runs, 0))
    return TraceEnsemble(
        circuit=circuit.name,
        readout=circuit.readout,
        times=np.array(times),
        samples=samples,
        readout_times=np.array(ro_times),
        readout_samples=np.array(ro_samples).T,
        dt=dt,
        seed=cfg.seed,
        runs=cfg.runs,
        periods=cfg.periods,
        temperature=temperature,
    )


# ---------------------------------------------------------------------------
# analytic-vs-simulated comparison


@dataclass(frozen=True)
class ComparisonRow:
    period: int
    analytic_rms: float
    mc_rms: float
    rel_err: float
    mc_se: float
    passed: bool


@dataclass(frozen=True)
class Comparison:
    rows: tuple
    passed: bool

    def failures(self):
        return [r for r in self.rows if not r.passed]


def compare(analytic, mc):
    """Per-period analytic vs Monte-Carlo readout RMS.

    The readout of period n happens before that period's injection, so it is
    matched against sampled noise after n-1 periods plus the direct noise.
    A row passes when |analytic - mc| <= max(3 * SE, 5 % of analytic).
    """
    if analytic.periods < mc.periods:
        raise ValueError(
            f"analytic report covers {analytic.periods} periods, MC has {mc.periods}"
        )
    mem2 = analytic.recursion.mem_cap ** 2
    from .noiseplan import evolve  # local import to avoid a cycle

    rows = []
    rms = mc.readout_rms
    se = mc.readout_se
    for k in range(mc.periods):
        n = k + 1
        a_var = evolve(analytic.recursion, n - 1) / mem2 + analytic.direct_var
        a_rms = math.sqrt(a_var)
        m_rms = float(rms[k])
        err = abs(a_rms - m_rms)
        tol = max(3.0 * float(se[k]), 0.05 * a_rms)
        rel = err / a_rms if a_rms > 0 else 0.0
        rows.append(
            ComparisonRow(
                period=n,
                analytic_rms=a_rms,
                mc_rms=m_rms,
                rel_err=rel,
                mc_se=float(se[k]),
                passed=err <= tol,
            )
        )
    return Comparison(tuple(rows), all(r.passed for r in rows))
