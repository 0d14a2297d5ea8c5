"""Port noise variances of a switched-capacitor phase by capacitance extraction.

For a (phase, port) pair three capacitor-only equivalent networks are built:

* ``c_inf``   - every switch branch open, every OTA deleted;
* ``c_inf_prime`` - switches closed in the phase shorted, open ones removed,
  OTAs deleted;
* ``c_zero``  - as above, plus every OTA output shorted to ground.

Together with the capacitive feedback gain ``hfb`` from the coupled OTA's
output back to its input, the thermal noise voltage variance of the port is

    V^2 = kB*T * [ 1/c_inf + (gamma/hfb - 1)/c_inf_prime - (gamma/hfb)/c_zero ]

which splits into a switch part kB*T*(1/c_inf - 1/c_inf_prime) and an OTA
part kB*T*(gamma/hfb)*(1/c_inf_prime - 1/c_zero). Voltage sources are AC
grounds and are merged with the ground node in all three networks.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import capnet
from .capnet import CapNetError, ExtCap
from .netlist import phase_view

__all__ = [
    "K_BOLTZMANN",
    "ExtractionError",
    "BodeCaps",
    "Variance",
    "UNBOUNDED",
    "extract",
    "variance",
    "direct_noise",
]

K_BOLTZMANN = 1.380649e-23  # J/K, exact SI


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class Variance:
    """A noise voltage variance in volts^2, or the unbounded variant."""

    value: float = None  # None encodes UNBOUNDED

    @property
    def is_unbounded(self):
        return self.value is None

    def rms(self):
        return None if self.is_unbounded else self.value ** 0.5

    def __repr__(self):
        return "Variance(UNBOUNDED)" if self.is_unbounded else f"Variance({self.value!r})"


UNBOUNDED = Variance(None)


@dataclass(frozen=True)
class BodeCaps:
    """Extracted port capacitances and feedback gain for one (phase, port)."""

    c_inf: ExtCap
    c_inf_prime: ExtCap
    c_zero: ExtCap
    hfb: float  # capacitive feedback gain, 1.0 when no OTA participates
    gamma_eff: float  # noise excess factor of the coupled OTA, 0 if none
    port: tuple
    phase: str
    ota: str = None  # name of the coupled OTA
    input_gains: dict = None  # exact divider gains source node -> virtual ground

    def switch_bracket(self):
        """1/c_inf - 1/c_inf_prime, the switch-noise coefficient in 1/F."""
        return self.c_inf.reciprocal() - self.c_inf_prime.reciprocal()

    def ota_bracket(self):
        """(1/hfb)*(1/c_inf_prime - 1/c_zero), gamma's coefficient in 1/F."""
        return (self.c_inf_prime.reciprocal() - self.c_zero.reciprocal()) / self.hfb


def _source_shorts(circuit):
    return [(s.node, circuit.ground) for s in circuit.sources]


def extract(circuit, phase, port):
    """Extract :class:`BodeCaps` for a node-pair port in one clock phase."""
    k, l = port
    nodes = circuit.nodes
    for n in (k, l):
        if n not in nodes:
            raise ExtractionError(f"port node {n!r} not declared")
    pv = phase_view(circuit, phase)
    caps = circuit.capacitors
    src = _source_shorts(circuit)

    net_inf = capnet.build(caps, shorts=src, ground=circuit.ground, nodes=nodes)
    closed = src + list(pv.closed_edges)
    net_prime = capnet.build(caps, shorts=closed, ground=circuit.ground, nodes=nodes)
    grounded_out = closed + [(o.output, circuit.ground) for o in circuit.otas]
    net_zero = capnet.build(caps, shorts=grounded_out, ground=circuit.ground, nodes=nodes)

    c_inf = capnet.equivalent_capacitance(net_inf, k, l)
    c_inf_prime = capnet.equivalent_capacitance(net_prime, k, l)
    c_zero = capnet.equivalent_capacitance(net_zero, k, l)

    # the coupled OTA is the one with a capacitive path to the port in the
    # closed-switch network; the AC-ground supernode is a cut vertex (noise
    # cannot couple through it), and an OTA whose output sits at AC ground
    # is inert
    port_rows = {net_prime.row_of(k), net_prime.row_of(l)}
    gnd = net_prime.ground
    adj = {}
    mat = net_prime.matrix
    for i in range(net_prime.n):
        if i == gnd:
            continue
        adj[i] = [
            int(j)
            for j in (mat[i] != 0).nonzero()[0]
            if j != i and j != gnd
        ]
    comp_rows = set(port_rows)
    stack = [r for r in port_rows if r != gnd]
    seen = set(stack)
    while stack:
        i = stack.pop()
        comp_rows.add(i)
        for j in adj.get(i, ()):
            if j not in seen:
                seen.add(j)
                stack.append(j)
    coupled = []
    for o in circuit.otas:
        orow = net_prime.row_of(o.output)
        if orow == gnd:
            continue
        if orow in comp_rows or net_prime.row_of(o.input) in comp_rows:
            coupled.append(o)
    if len(coupled) > 1:
        names = ", ".join(o.name for o in coupled)
        raise ExtractionError(
            f"multi-OTA port unsupported: port {port} couples to {names} in phase {phase!r}"
        )

    hfb, gamma_eff, ota_name, input_gains = 1.0, 0.0, None, None
    if coupled:
        (o,) = coupled
        irow, orow = net_prime.row_of(o.input), net_prime.row_of(o.output)
        if irow == net_prime.ground:
            raise ExtractionError(f"ota {o.name!r} input is at AC ground in phase {phase!r}")
        if irow == orow:
            raise ExtractionError(f"ota {o.name!r} feedback is shorted in phase {phase!r}")
        try:
            hfb = capnet.transfer_gain(net_prime, {o.output: 1.0}, o.input)
        except CapNetError as e:
            raise ExtractionError(f"cannot derive feedback gain of {o.name!r}: {e}") from e
        if not 0.0 < hfb <= 1.0 + 1e-12:
            raise ExtractionError(
                f"feedback gain of {o.name!r} is {hfb:.6g}, outside (0, 1]"
            )
        hfb = min(hfb, 1.0)
        gamma_eff = o.gamma
        ota_name = o.name
        # exact divider gains from each source node (the terms the
        # frequency-independent feedback approximation drops)
        gains = {}
        net_div = capnet.build(
            caps, shorts=list(pv.closed_edges), ground=circuit.ground, nodes=nodes
        )
        for s in circuit.sources:
            drive = {o.output: 0.0, s.node: 1.0}
            for other in circuit.sources:
                if other.name != s.name:
                    drive.setdefault(other.node, 0.0)
            try:
                gains[s.node] = capnet.transfer_gain(net_div, drive, o.input)
            except CapNetError:
                pass
        input_gains = gains or None

    return BodeCaps(
        c_inf=c_inf,
        c_inf_prime=c_inf_prime,
        c_zero=c_zero,
        hfb=hfb,
        gamma_eff=gamma_eff,
        port=(k, l),
        phase=phase,
        ota=ota_name,
        input_gains=input_gains,
    )


def variance(b, temperature):
    """Thermal noise voltage variance of the extracted port at T kelvin."""
    if not b.c_inf.is_infinite and b.c_inf.value == 0.0:
        return UNBOUNDED
    kt = K_BOLTZMANN * temperature
    val = kt * (b.switch_bracket() + b.gamma_eff * b.ota_bracket())
    floor = kt * max(b.c_inf.reciprocal(), b.c_inf_prime.reciprocal())
    if val < -1e-9 * floor:
        raise ExtractionError(
            f"inconsistent extraction at port {b.port} in phase {b.phase!r}: "
            f"negative variance {val:.3e} V^2"
        )
    return Variance(max(val, 0.0))


def direct_noise(circuit, phase, out_port, temperature):
    """Continuous-time OTA noise at the readout port during the readout phase."""
    return variance(extract(circuit, phase, out_port), temperature)
