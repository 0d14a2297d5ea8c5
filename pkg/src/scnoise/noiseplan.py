"""Per-period noise bookkeeping: injections, recursion, and output reports.

Each clock period injects a noise charge onto the memory (integrating)
capacitor. The injected variance per period is the sum over plan entries of

    prop_coeff^2 * conv_cap^2 * V^2(phase, port)

with the port variances from the capacitance-extraction engine; phases are
uncorrelated. The memory capacitor retains a fraction ``lambda`` of its
charge per period, giving the recursion

    Q^2(n+1) = lambda^2 * Q^2(n) + Q_inj^2

whose closed form is evaluated by :func:`evolve`. Total output noise during
the readout phase is the sampled part plus the OTA's direct noise there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import bode, capnet
from .bode import K_BOLTZMANN, BodeCaps, Variance
from .netlist import phase_view

__all__ = [
    "PlanError",
    "Injection",
    "Recursion",
    "NoisePlan",
    "NoiseReport",
    "detect_memory",
    "build_plan",
    "period_injection",
    "evolve",
    "report",
    "frequency_meta",
    "recognize",
]

_LAMBDA_UNITY_TOL = 1e-9  # |lambda - 1| below this is the divergent case


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Injection:
    """One per-period noise-charge contribution."""

    phase: str
    port: tuple  # node pair whose voltage variance converts to charge
    conv_cap: float  # farads, converts V^2 to Q^2
    prop_coeff: float  # fraction of the charge reaching the memory cap
    cap: str = None  # name of the sampling capacitor


@dataclass(frozen=True)
class Recursion:
    lam: float  # per-period retention factor of the memory cap, in [0, 1]
    inj_var: float  # coulombs^2 injected per period
    mem_cap: float  # farads

    @property
    def divergent(self):
        return self.lam >= 1.0

    def steady_state(self):
        """Q^2 as n -> inf, or None when divergent."""
        if self.divergent:
            return None
        return self.inj_var / (1.0 - self.lam ** 2)


@dataclass(frozen=True)
class NoisePlan:
    injections: tuple
    recursion: Recursion
    memory: str  # capacitor name


def detect_memory(circuit):
    """The memory capacitor: declared, or the unique OTA in-out bridge."""
    if circuit.memory is not None:
        return circuit.capacitor(circuit.memory)
    bridges = [
        c
        for c in circuit.capacitors
        for o in circuit.otas
        if {c.a, c.b} == {o.input, o.output}
    ]
    if len(bridges) == 1:
        return bridges[0]
    if not bridges:
        raise PlanError(
            "no memory capacitor found: declare one with a 'memory' statement"
        )
    names = ", ".join(c.name for c in bridges)
    raise PlanError(f"ambiguous memory capacitor ({names}): declare one explicitly")


def _chain_prop(circuit, start_cap, phases):
    """Signed fraction of a unit charge on start_cap reaching the memory cap
    after redistribution through the given phases, per capacitor name."""
    q = {start_cap: 1.0}
    for ph in phases:
        q = capnet.redistribute(phase_view(circuit, ph), q)
    return q


def retention(circuit, memory):
    """Per-period charge retention factor of the memory capacitor."""
    q = _chain_prop(circuit, memory.name, circuit.phases)
    lam = q[memory.name]
    if abs(lam - 1.0) < _LAMBDA_UNITY_TOL:
        return 1.0
    if lam < -1e-9 or lam > 1.0:
        raise PlanError(f"memory retention factor {lam:.6g} outside [0, 1]")
    return max(lam, 0.0)


def _fixed_nodes(circuit):
    return {circuit.ground} | {s.node for s in circuit.sources}


def is_switched_cap(circuit, cap):
    """A capacitor whose plates attach to the rest only through switches.

    Each terminal is either a fixed node (ground or a source) or a node whose
    other attachments are exclusively switches. Such a capacitor freezes an
    independent noise sample whenever its switches open; permanently connected
    capacitors (OTA input or load capacitance) never do - their end-of-phase
    charges telescope across periods instead of accumulating.
    """
    fixed = _fixed_nodes(circuit)
    for node in (cap.a, cap.b):
        if node in fixed:
            continue
        for c in circuit.capacitors:
            if c.name != cap.name and node in (c.a, c.b):
                return False
        for o in circuit.otas:
            if node in (o.input, o.output):
                return False
    return True


def _opens_at_end(circuit, cap, phase):
    """A switch on the cap's own (non-fixed) terminals opens at `phase` end."""
    fixed = _fixed_nodes(circuit)
    own = {cap.a, cap.b} - fixed
    i = circuit.phases.index(phase)
    nxt = circuit.phases[(i + 1) % len(circuit.phases)]
    for s in circuit.switches:
        if phase in s.closed_in and nxt not in s.closed_in:
            if {s.a, s.b} & own:
                return True
    return False


def _deficit_on_memory(circuit, pv, cap, memory):
    """True if the cap's end-of-phase charge is a charge deficit on the memory
    capacitor: one plate merged into an OTA-input (virtual ground) supernode
    shared with the memory cap, the other at a fixed-0 supernode."""
    shorts = [(s.node, circuit.ground) for s in circuit.sources]
    net = capnet.build(
        circuit.capacitors,
        shorts=shorts + list(pv.closed_edges),
        ground=circuit.ground,
        nodes=circuit.nodes,
    )
    fixed_rows = {net.ground} | {net.row_of(s.node) for s in circuit.sources}
    vg_rows = {net.row_of(o.input) for o in circuit.otas} - fixed_rows
    mem_rows = {net.row_of(memory.a), net.row_of(memory.b)}
    ra, rb = net.row_of(cap.a), net.row_of(cap.b)
    for vg, other in ((ra, rb), (rb, ra)):
        if vg in vg_rows and vg in mem_rows and other in fixed_rows:
            return True
    return False


def _remaining_phases(circuit, phase):
    i = circuit.phases.index(phase)
    return circuit.phases[i + 1 :]


def build_plan(circuit):
    """Derive the per-period injection plan and memory recursion.

    Auto-generation follows the standard two-phase recipe: in the phase where
    the memory capacitor itself samples switch noise, its own port captures
    everything landing on it (one entry, prop 1); in other phases every
    switched capacitor with nonzero port variance contributes, with the
    propagated fraction obtained by charge redistribution through the rest of
    the period. A pure accumulator (retention factor 1) instead books both
    phases on the sampling capacitor's port: the transfer-phase entry is the
    charge-deficit left behind, which lands on the memory cap in full.
    Explicit ``inject`` directives override auto-generation entirely.
    """
    if len(circuit.otas) > 1:
        raise PlanError("auto noise plan supports at most one OTA")
    memory = detect_memory(circuit)
    lam = retention(circuit, memory)
    temperature = circuit.temperature

    def port_caps(phase, port):
        return bode.extract(circuit, phase, port)

    def is_active(bcaps, conv):
        v = bode.variance(bcaps, temperature)
        if v.is_unbounded:
            return True
        return v.value > 1e-9 * K_BOLTZMANN * temperature / conv

    injections = []

    def sampling_caps(phase):
        """Switched caps that freeze an independent sample at this phase end."""
        out = []
        for cap in circuit.capacitors:
            if cap.name == memory.name or not is_switched_cap(circuit, cap):
                continue
            if not _opens_at_end(circuit, cap, phase):
                continue
            if is_active(port_caps(phase, (cap.a, cap.b)), cap.value):
                out.append(cap)
        return out

    if circuit.injections:
        for d in circuit.injections:
            cap = circuit.capacitor(d.cap)
            rest = _remaining_phases(circuit, d.phase)
            if rest:
                prop = _chain_prop(circuit, cap.name, rest).get(memory.name, 0.0)
            elif cap.name == memory.name:
                prop = 1.0
            elif _deficit_on_memory(circuit, phase_view(circuit, d.phase), cap, memory):
                prop = 1.0
            else:
                prop = 0.0
            injections.append(
                Injection(d.phase, tuple(d.port), cap.value, prop, cap=cap.name)
            )
    elif lam >= 1.0:
        # pure accumulator: the switched caps inject in every phase; final-
        # phase samples are charge deficits landing on the memory cap in full
        for ph in circuit.phases:
            rest = _remaining_phases(circuit, ph)
            for cap in sampling_caps(ph):
                if rest:
                    prop = _chain_prop(circuit, cap.name, rest).get(memory.name, 0.0)
                elif _deficit_on_memory(circuit, phase_view(circuit, ph), cap, memory):
                    prop = 1.0
                else:
                    prop = 0.0
                if abs(prop) < 1e-12:
                    continue
                injections.append(Injection(ph, (cap.a, cap.b), cap.value, prop, cap.name))
    else:
        mem_phases = []
        for ph in circuit.phases:
            b = port_caps(ph, (memory.a, memory.b))
            sw = b.switch_bracket()
            if sw > 1e-9 * b.c_inf.reciprocal():
                mem_phases.append(ph)
        if len(mem_phases) != 1:
            raise PlanError(
                "ambiguous auto plan: the memory capacitor samples switch noise "
                f"in {len(mem_phases)} phases; use explicit inject directives"
            )
        (mem_phase,) = mem_phases
        injections.append(
            Injection(mem_phase, (memory.a, memory.b), memory.value, 1.0, memory.name)
        )
        for ph in circuit.phases:
            if ph == mem_phase:
                continue
            rest = _remaining_phases(circuit, ph)
            for cap in sampling_caps(ph):
                if rest:
                    prop = _chain_prop(circuit, cap.name, rest).get(memory.name, 0.0)
                else:
                    prop = 0.0
                if abs(prop) < 1e-12:
                    continue
                injections.append(Injection(ph, (cap.a, cap.b), cap.value, prop, cap.name))

    for inj in injections:
        if abs(inj.prop_coeff) > 1.0 + 1e-9:
            raise PlanError(
                f"propagation coefficient {inj.prop_coeff:.6g} of {inj.cap!r} "
                "exceeds 1"
            )

    inj_var = _injection_variance(circuit, injections, temperature)
    rec = Recursion(lam=lam, inj_var=inj_var, mem_cap=memory.value)
    return NoisePlan(tuple(injections), rec, memory.name)


def _injection_variance(circuit, injections, temperature):
    total = 0.0
    for inj in injections:
        v = bode.variance(bode.extract(circuit, inj.phase, inj.port), temperature)
        if v.is_unbounded:
            return math.inf
        total += inj.prop_coeff ** 2 * inj.conv_cap ** 2 * v.value
    return total


def period_injection(circuit, plan, temperature=None):
    """Injected charge variance per period, coulombs^2 (inf when unbounded)."""
    if temperature is None:
        temperature = circuit.temperature
    return _injection_variance(circuit, plan.injections, temperature)


def evolve(recursion, n):
    """Charge variance on the memory capacitor after n periods (Q^2(0) = 0)."""
    if n < 0:
        raise ValueError("period count must be >= 0")
    if math.isinf(recursion.inj_var):
        return 0.0 if n == 0 else math.inf
    if recursion.divergent:
        return n * recursion.inj_var
    q_inf = recursion.steady_state()
    return q_inf * (1.0 - recursion.lam ** (2 * n))


@dataclass(frozen=True)
class InjectionDetail:
    injection: Injection
    caps: BodeCaps
    voltage_var: Variance
    charge_var: float  # prop^2 * conv^2 * V^2, coulombs^2


@dataclass(frozen=True)
class NoiseReport:
    circuit: str
    temperature: float
    periods: int
    memory: str
    details: tuple  # InjectionDetail per plan entry
    recursion: Recursion
    sampled_var: float  # volts^2 at period n
    steady_var: float  # volts^2, None when divergent
    direct_var: float  # volts^2
    direct_caps: BodeCaps
    total_var: float
    rms: float
    divergent: bool
    unbounded: bool
    readout: tuple
    pattern: object = None  # Pattern, when the topology is recognized
    plan: NoisePlan = None

    def sampled_series(self, n=None):
        """[(period, sampled volts^2)] staircase up to period n."""
        n = self.periods if n is None else n
        mem2 = self.recursion.mem_cap ** 2
        return [(k, evolve(self.recursion, k) / mem2) for k in range(n + 1)]


def report(circuit, n, temperature=None):
    """Full analytic noise report after n periods at the readout port."""
    if circuit.readout is None:
        raise PlanError("circuit declares no readout")
    if temperature is None:
        temperature = circuit.temperature
    plan = build_plan(circuit)
    inj_var = period_injection(circuit, plan, temperature)
    rec = Recursion(plan.recursion.lam, inj_var, plan.recursion.mem_cap)

    unbounded = math.isinf(inj_var)
    mem2 = rec.mem_cap ** 2
    sampled = evolve(rec, n) / mem2
    steady = None
    if not rec.divergent and not unbounded:
        steady = rec.steady_state() / mem2

    ro_phase, ro_port = circuit.readout
    direct_caps = bode.extract(circuit, ro_phase, ro_port)
    direct = bode.variance(direct_caps, temperature)
    if direct.is_unbounded:
        unbounded = True
    direct_var = math.inf if direct.is_unbounded else direct.value

    total = sampled + direct_var
    details = []
    for inj in plan.injections:
        b = bode.extract(circuit, inj.phase, inj.port)
        v = bode.variance(b, temperature)
        q2 = math.inf if v.is_unbounded else inj.prop_coeff ** 2 * inj.conv_cap ** 2 * v.value
        details.append(InjectionDetail(inj, b, v, q2))

    return NoiseReport(
        circuit=circuit.name,
        temperature=temperature,
        periods=n,
        memory=plan.memory,
        details=tuple(details),
        recursion=rec,
        sampled_var=sampled,
        steady_var=steady,
        direct_var=direct_var,
        direct_caps=direct_caps,
        total_var=total,
        rms=math.sqrt(total) if not math.isinf(total) else math.inf,
        divergent=rec.divergent,
        unbounded=unbounded,
        readout=circuit.readout,
        pattern=recognize(circuit),
        plan=plan,
    )


# ---------------------------------------------------------------------------
# stage-pattern recognition (first-order LP stages and the plain integrator)


@dataclass(frozen=True)
class Pattern:
    kind: str  # "passive-lp" | "integrator" | "active-lp"
    alpha: float  # switched-cap ratio (C2/C for the active LP)
    alpha_in: float  # OTA input cap ratio C_in/C
    alpha_l: float  # load cap ratio C_L/C
    gamma: float
    mem_cap: float
    alpha1: float = None  # input-cap ratio C1/C of the active LP

    def coefficients(self):
        """The usual small-ratio coefficient set (approximate forms)."""
        a, ai, al, g = self.alpha, self.alpha_in, self.alpha_l, self.gamma
        if self.kind == "passive-lp":
            return {"theta_sw": 1.0, "theta_ota": 0.0, "theta_direct": 0.0}
        theta_direct = 1.0 / (al + ai) if al + ai > 0 else math.inf
        if self.kind == "integrator":
            slope = 1.0 + (al + ai + g * a) / (al + a + ai)
            return {
                "slope_coeff": slope,  # per-period Q^2 in units kB*T*alpha*C
                "theta_direct": theta_direct,
            }
        theta_sw2 = 0.5 * (
            1.0 + al ** 2 / ((al + ai) * (al + a + ai)) if al + ai > 0 else 1.0
        )
        return {
            "theta_sw1": 1.0,
            "theta_sw2": theta_sw2,
            "theta_sw": 1.0 + theta_sw2,
            "theta_ota": (a + ai) ** 2 / (2 * a * (al + a + ai)),
            "theta_direct": theta_direct,
        }

    def approx_total_var(self, temperature):
        """Approximate steady-state output variance, volts^2 (None if n/a)."""
        kt_over_c = K_BOLTZMANN * temperature / self.mem_cap
        co = self.coefficients()
        if self.kind == "passive-lp":
            return kt_over_c
        if self.kind == "integrator":
            return None  # divergent; only slope + direct are meaningful
        return kt_over_c * (
            self.gamma * (co["theta_ota"] + co["theta_direct"]) + co["theta_sw"]
        )

    def approx_direct_var(self, temperature):
        """Approximate direct-noise variance gamma*kB*T/(C_L + C_in), volts^2."""
        if self.kind == "passive-lp" or self.gamma == 0.0:
            return 0.0
        cl = self.alpha_l * self.mem_cap
        cin = self.alpha_in * self.mem_cap
        if cl + cin <= 0:
            return math.inf
        return self.gamma * K_BOLTZMANN * temperature / (cl + cin)


def _direct_cap_sum(circuit, node_a, node_b):
    return sum(
        c.value for c in circuit.capacitors if {c.a, c.b} == {node_a, node_b}
    )


def recognize(circuit):
    """Identify one of the three supported first-order stage shapes."""
    try:
        memory = detect_memory(circuit)
    except PlanError:
        return None
    if len(circuit.phases) != 2 or len(circuit.otas) > 1:
        return None
    others = [c for c in circuit.capacitors if c.name != memory.name]

    if not circuit.otas:
        if len(others) != 1:
            return None
        try:
            lam = retention(circuit, memory)
        except (PlanError, capnet.CapNetError):
            return None
        if lam >= 1.0:
            return None
        return Pattern(
            kind="passive-lp",
            alpha=others[0].value / memory.value,
            alpha_in=0.0,
            alpha_l=0.0,
            gamma=0.0,
            mem_cap=memory.value,
        )

    (ota,) = circuit.otas
    if {memory.a, memory.b} != {ota.input, ota.output}:
        return None
    cin = _direct_cap_sum(circuit, ota.input, circuit.ground)
    cl = _direct_cap_sum(circuit, ota.output, circuit.ground)
    switched = [
        c
        for c in others
        if {c.a, c.b} != {ota.input, circuit.ground}
        and {c.a, c.b} != {ota.output, circuit.ground}
    ]
    try:
        lam = retention(circuit, memory)
    except (PlanError, capnet.CapNetError):
        return None

    if lam >= 1.0 and len(switched) == 1:
        return Pattern(
            kind="integrator",
            alpha=switched[0].value / memory.value,
            alpha_in=cin / memory.value,
            alpha_l=cl / memory.value,
            gamma=ota.gamma,
            mem_cap=memory.value,
        )

    if lam < 1.0 and len(switched) == 2:
        # the resharing cap C2 spans (virtual ground, output) in the phase
        # where the memory cap samples; the input cap C1 spans (ground, vg)
        c1 = c2 = None
        for ph in circuit.phases:
            pv = phase_view(circuit, ph)
            shorts = [(s.node, circuit.ground) for s in circuit.sources]
            net = capnet.build(
                circuit.capacitors,
                shorts=shorts + list(pv.closed_edges),
                ground=circuit.ground,
                nodes=circuit.nodes,
            )
            vg, out = net.row_of(ota.input), net.row_of(ota.output)
            gnd = net.ground
            for c in switched:
                rows = {net.row_of(c.a), net.row_of(c.b)}
                if rows == {vg, out}:
                    c2 = c
                elif rows == {gnd, vg}:
                    c1 = c
        if c1 is None or c2 is None:
            return None
        return Pattern(
            kind="active-lp",
            alpha=c2.value / memory.value,
            alpha_in=cin / memory.value,
            alpha_l=cl / memory.value,
            gamma=ota.gamma,
            mem_cap=memory.value,
            alpha1=c1.value / memory.value,
        )
    return None


@dataclass(frozen=True)
class FrequencyMeta:
    numerator: tuple  # H(z) numerator coefficients in powers of z^-1
    denominator: tuple
    fc: float  # cutoff frequency in hertz, None for the integrator


def frequency_meta(circuit):
    """z-domain transfer function and cutoff for recognized stage shapes."""
    p = recognize(circuit)
    if p is None:
        return None
    fs = circuit.fs
    if p.kind == "passive-lp":
        a = p.alpha
        return FrequencyMeta((0.0, a), (1.0 + a, -1.0), a / (1.0 + a) * fs / (2 * math.pi))
    if p.kind == "integrator":
        return FrequencyMeta((p.alpha,), (1.0, -1.0), None)
    a1 = p.alpha1 if p.alpha1 is not None else p.alpha
    return FrequencyMeta((0.0, a1), (1.0 + p.alpha, -1.0), p.alpha * fs / (2 * math.pi))
