"""Netlist parsing for two-phase (or n-phase) switched-capacitor circuits.

The format is line-oriented and SPICE-inspired, one statement per line,
``#`` starts a comment. Statements::

    circuit <name>
    temp <kelvin>
    fs <hertz>
    phases <id> <id> ...
    ground <node>
    cap <name> <a> <b> <farads>
    switch <name> <a> <b> phase=<id>[,<id>] [gon=<siemens>]
    ota <name> in=<node> out=<node> gm=<siemens> gamma=<x>
    vsrc <name> <node> <volts>
    readout <nodeA> <nodeB> phase=<id>
    memory <capname>
    inject phase=<id> port=<nodeA>,<nodeB> cap=<capname>

Values accept engineering suffixes f, p, n, u, m, k, meg (case-insensitive;
``f`` is femto, not Farad). Toggle (SPDT) switches are written as two SPST
switches with complementary phase sets. Nodes are declared implicitly by
element terminals; ``readout``/``inject``/``ota`` lines must reference nodes
some element uses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

__all__ = [
    "NetlistError",
    "Capacitor",
    "Switch",
    "Ota",
    "Source",
    "InjectDirective",
    "Circuit",
    "PhaseView",
    "parse",
    "serialize",
    "phase_view",
    "builtin_examples",
    "builtin_circuit",
]

DEFAULT_GON = 1e-3  # siemens, assumes fast switch settling
DEFAULT_TEMPERATURE = 300.0  # kelvin

_SUFFIXES = {
    "meg": 1e6,
    "k": 1e3,
    "m": 1e-3,
    "u": 1e-6,
    "n": 1e-9,
    "p": 1e-12,
    "f": 1e-15,
}

_VALUE_RE = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|[fpnumk])?$", re.IGNORECASE
)


class NetlistError(ValueError):
    """Raised for syntax or validation errors, carrying source position."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            message = f"{where}: {message}"
        super().__init__(message)


def parse_value(text, line=None, column=None):
    """Parse a number with an optional engineering suffix into a float."""
    m = _VALUE_RE.match(text)
    if not m:
        raise NetlistError(f"malformed value {text!r}", line, column)
    num, suffix = m.groups()
    scale = _SUFFIXES[suffix.lower()] if suffix else 1.0
    return float(num) * scale


@dataclass(frozen=True)
class Capacitor:
    name: str
    a: str
    b: str
    value: float  # farads


@dataclass(frozen=True)
class Switch:
    name: str
    a: str
    b: str
    closed_in: frozenset  # phase ids
    gon: float = DEFAULT_GON  # siemens


@dataclass(frozen=True)
class Ota:
    name: str
    input: str  # virtual ground node
    output: str
    gm: float  # siemens
    gamma: float  # noise excess factor, dimensionless


@dataclass(frozen=True)
class Source:
    name: str
    node: str
    dc: float = 0.0  # volts, zeroed during noise analysis


@dataclass(frozen=True)
class InjectDirective:
    phase: str
    port: tuple  # (nodeA, nodeB)
    cap: str


@dataclass(frozen=True)
class Circuit:
    """A validated switched-capacitor circuit."""

    name: str
    phases: tuple
    ground: str
    capacitors: tuple = ()
    switches: tuple = ()
    otas: tuple = ()
    sources: tuple = ()
    temperature: float = DEFAULT_TEMPERATURE
    fs: float = 0.0  # sampling frequency, hertz
    readout: tuple = None  # (phase, (nodeA, nodeB))
    memory: str = None  # capacitor name, optional
    injections: tuple = ()  # explicit InjectDirective overrides

    @property
    def nodes(self):
        """All declared nodes (implicitly declared by element terminals)."""
        ns = {self.ground}
        for c in self.capacitors:
            ns.update((c.a, c.b))
        for s in self.switches:
            ns.update((s.a, s.b))
        for o in self.otas:
            ns.update((o.input, o.output))
        for src in self.sources:
            ns.add(src.node)
        return ns

    def capacitor(self, name):
        for c in self.capacitors:
            if c.name == name:
                return c
        raise KeyError(f"no capacitor named {name!r}")

    def with_gamma(self, gamma):
        """Copy of the circuit with every OTA's noise excess factor replaced."""
        otas = tuple(replace(o, gamma=float(gamma)) for o in self.otas)
        return replace(self, otas=otas)

    def validate(self):
        names = set()
        for elems in (self.capacitors, self.switches, self.otas, self.sources):
            for e in elems:
                if e.name in names:
                    raise NetlistError(f"duplicate element name {e.name!r}")
                names.add(e.name)
        if not self.phases:
            raise NetlistError("no phases declared")
        if len(set(self.phases)) != len(self.phases):
            raise NetlistError("duplicate phase id")
        for c in self.capacitors:
            if c.value <= 0:
                raise NetlistError(f"capacitor {c.name!r} value must be > 0")
            if c.a == c.b:
                raise NetlistError(f"capacitor {c.name!r} terminals identical")
        for s in self.switches:
            if s.gon <= 0:
                raise NetlistError(f"switch {s.name!r} gon must be > 0")
            if s.a == s.b:
                raise NetlistError(f"switch {s.name!r} terminals identical")
            bad = set(s.closed_in) - set(self.phases)
            if bad:
                raise NetlistError(
                    f"switch {s.name!r} references unknown phase {sorted(bad)[0]!r}"
                )
        for o in self.otas:
            if o.gm <= 0:
                raise NetlistError(f"ota {o.name!r} gm must be > 0")
            if o.gamma < 0:
                raise NetlistError(f"ota {o.name!r} gamma must be >= 0")
            if o.input == o.output:
                raise NetlistError(f"ota {o.name!r} input and output identical")
        nodes = self.nodes
        if self.readout is not None:
            ph, (na, nb) = self.readout
            if ph not in self.phases:
                raise NetlistError(f"readout references unknown phase {ph!r}")
            for n in (na, nb):
                if n not in nodes:
                    raise NetlistError(f"readout references undeclared node {n!r}")
        if self.memory is not None:
            if all(c.name != self.memory for c in self.capacitors):
                raise NetlistError(f"memory references unknown capacitor {self.memory!r}")
        cap_names = {c.name for c in self.capacitors}
        for inj in self.injections:
            if inj.phase not in self.phases:
                raise NetlistError(f"inject references unknown phase {inj.phase!r}")
            for n in inj.port:
                if n not in nodes:
                    raise NetlistError(f"inject references undeclared node {n!r}")
            if inj.cap not in cap_names:
                raise NetlistError(f"inject references unknown capacitor {inj.cap!r}")
        if self.temperature <= 0:
            raise NetlistError("temperature must be > 0")
        return self


@dataclass(frozen=True)
class PhaseView:
    """Switch partition of a circuit for one clock phase."""

    circuit: Circuit
    phase: str
    closed: tuple  # switches closed in this phase
    open: tuple  # switches open in this phase

    @property
    def closed_edges(self):
        return tuple((s.a, s.b) for s in self.closed)


def phase_view(circuit, phase):
    """Partition the circuit's switches into closed/open for one phase."""
    if phase not in circuit.phases:
        raise NetlistError(f"unknown phase {phase!r}")
    closed = tuple(s for s in circuit.switches if phase in s.closed_in)
    opened = tuple(s for s in circuit.switches if phase not in s.closed_in)
    return PhaseView(circuit, phase, closed, opened)


# ---------------------------------------------------------------------------
# parsing


def _split_fields(line):
    """Split a statement line into (token, column) pairs, 1-based columns."""
    out = []
    for m in re.finditer(r"\S+", line):
        out.append((m.group(0), m.start() + 1))
    return out


def _kwargs(tokens, lineno, allowed):
    kw = {}
    for tok, col in tokens:
        if "=" not in tok:
            raise NetlistError(f"expected key=value, got {tok!r}", lineno, col)
        key, _, val = tok.partition("=")
        if key not in allowed:
            raise NetlistError(f"unknown option {key!r}", lineno, col)
        if key in kw:
            raise NetlistError(f"duplicate option {key!r}", lineno, col)
        kw[key] = (val, col)
    return kw


def parse(text):
    """Parse netlist source text into a validated :class:`Circuit`."""
    name = "untitled"
    temperature = DEFAULT_TEMPERATURE
    fs = 0.0
    phases = ()
    ground = None
    caps, switches, otas, sources = [], [], [], []
    readout = None
    memory = None
    injections = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        fields = _split_fields(line)
        if not fields:
            continue
        (kw, col0), rest = fields[0], fields[1:]
        kw = kw.lower()

        def need(n, what):
            if len(rest) < n:
                raise NetlistError(f"{kw!r} needs {what}", lineno, col0)
            return rest[:n]

        if kw == "circuit":
            (nm, _), = need(1, "a name")
            name = nm
        elif kw == "temp":
            (v, c), = need(1, "a value in kelvin")
            temperature = parse_value(v, lineno, c)
        elif kw == "fs":
            (v, c), = need(1, "a frequency in hertz")
            fs = parse_value(v, lineno, c)
        elif kw == "phases":
            if not rest:
                raise NetlistError("'phases' needs at least one id", lineno, col0)
            phases = tuple(tok for tok, _ in rest)
        elif kw == "ground":
            (g, _), = need(1, "a node")
            ground = g
        elif kw == "cap":
            (nm, _), (a, _), (b, _), (v, vc) = need(4, "name, two nodes, value")
            caps.append(Capacitor(nm, a, b, parse_value(v, lineno, vc)))
        elif kw == "switch":
            (nm, _), (a, _), (b, _) = need(3, "name and two nodes")
            kwargs = _kwargs(rest[3:], lineno, {"phase", "gon"})
            if "phase" not in kwargs:
                raise NetlistError(f"switch {nm!r} needs phase=", lineno, col0)
            pv, _ = kwargs["phase"]
            closed = frozenset(pv.split(","))
            gon = DEFAULT_GON
            if "gon" in kwargs:
                gv, gc = kwargs["gon"]
                gon = parse_value(gv, lineno, gc)
            switches.append(Switch(nm, a, b, closed, gon))
        elif kw == "ota":
            (nm, _), = need(1, "a name")
            kwargs = _kwargs(rest[1:], lineno, {"in", "out", "gm", "gamma"})
            for req in ("in", "out", "gm", "gamma"):
                if req not in kwargs:
                    raise NetlistError(f"ota {nm!r} needs {req}=", lineno, col0)
            gm = parse_value(*(kwargs["gm"][0], lineno, kwargs["gm"][1]))
            gamma = parse_value(*(kwargs["gamma"][0], lineno, kwargs["gamma"][1]))
            otas.append(Ota(nm, kwargs["in"][0], kwargs["out"][0], gm, gamma))
        elif kw == "vsrc":
            (nm, _), (node, _), (v, vc) = need(3, "name, node, value")
            sources.append(Source(nm, node, parse_value(v, lineno, vc)))
        elif kw == "readout":
            (a, _), (b, _) = need(2, "two nodes")
            kwargs = _kwargs(rest[2:], lineno, {"phase"})
            if "phase" not in kwargs:
                raise NetlistError("readout needs phase=", lineno, col0)
            readout = (kwargs["phase"][0], (a, b))
        elif kw == "memory":
            (nm, _), = need(1, "a capacitor name")
            memory = nm
        elif kw == "inject":
            kwargs = _kwargs(rest, lineno, {"phase", "port", "cap"})
            for req in ("phase", "port", "cap"):
                if req not in kwargs:
                    raise NetlistError(f"inject needs {req}=", lineno, col0)
            port = tuple(kwargs["port"][0].split(","))
            if len(port) != 2:
                raise NetlistError("inject port needs two nodes", lineno, kwargs["port"][1])
            injections.append(InjectDirective(kwargs["phase"][0], port, kwargs["cap"][0]))
        else:
            raise NetlistError(f"unknown statement {kw!r}", lineno, col0)

    if ground is None:
        raise NetlistError("no ground node declared")

    circuit = Circuit(
        name=name,
        phases=phases,
        ground=ground,
        capacitors=tuple(caps),
        switches=tuple(switches),
        otas=tuple(otas),
        sources=tuple(sources),
        temperature=temperature,
        fs=fs,
        readout=readout,
        memory=memory,
        injections=tuple(injections),
    )
    return circuit.validate()


def _fmt(value):
    """Format a value with an engineering suffix where it round-trips."""
    for suffix, scale in (("meg", 1e6), ("k", 1e3)):
        if value != 0 and abs(value) >= scale:
            q = value / scale
            if q == round(q, 9):
                return f"{round(q, 9):g}{suffix}"
    for suffix, scale in (("m", 1e-3), ("u", 1e-6), ("n", 1e-9), ("p", 1e-12), ("f", 1e-15)):
        if value != 0 and abs(value) >= scale and abs(value) < scale * 1e3:
            q = value / scale
            if abs(q - round(q, 9)) < 1e-12 * max(1.0, abs(q)):
                return f"{round(q, 9):g}{suffix}"
    return f"{value:g}"


def serialize(circuit):
    """Render a circuit back into netlist text (a parse fixed point)."""
    lines = [f"circuit {circuit.name}"]
    lines.append(f"temp {_fmt(circuit.temperature)}")
    if circuit.fs:
        lines.append(f"fs {_fmt(circuit.fs)}")
    lines.append("phases " + " ".join(circuit.phases))
    lines.append(f"ground {circuit.ground}")
    for s in circuit.sources:
        lines.append(f"vsrc {s.name} {s.node} {_fmt(s.dc)}")
    for c in circuit.capacitors:
        lines.append(f"cap {c.name} {c.a} {c.b} {_fmt(c.value)}")
    for s in circuit.switches:
        ph = ",".join(sorted(s.closed_in))
        lines.append(f"switch {s.name} {s.a} {s.b} phase={ph} gon={_fmt(s.gon)}")
    for o in circuit.otas:
        lines.append(
            f"ota {o.name} in={o.input} out={o.output} gm={_fmt(o.gm)} gamma={_fmt(o.gamma)}"
        )
    if circuit.readout is not None:
        ph, (a, b) = circuit.readout
        lines.append(f"readout {a} {b} phase={ph}")
    if circuit.memory is not None:
        lines.append(f"memory {circuit.memory}")
    for inj in circuit.injections:
        lines.append(f"inject phase={inj.phase} port={inj.port[0]},{inj.port[1]} cap={inj.cap}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# built-in example circuits (parameters from the validation figures)

_PASSIVE_LP = """\
circuit {name}
temp 300
fs 100k
phases p1 p2
ground 0
vsrc vin in 0
cap ca a 0 {ac}
cap c b 0 {c}
switch s1 in a phase=p1 gon=20u
switch s2 a b phase=p2 gon=20u
readout b 0 phase=p1
memory c
"""

_INTEGRATOR = """\
circuit integrator
temp 300
fs 44.4k
phases p1 p2
ground 0
vsrc vin in 0
cap cs n1 n2 0.5p
cap cin vg 0 20f
cap ci vg out 5p
cap cl out 0 5p
switch s1a in n1 phase=p1 gon=6u
switch s1b n1 0 phase=p2 gon=6u
switch s2a n2 0 phase=p1 gon=6u
switch s2b n2 vg phase=p2 gon=6u
ota ota1 in=vg out=out gm=10u gamma=2
readout out 0 phase=p1
"""

_ACTIVE_LP = """\
circuit {name}
temp 300
fs {fs}
phases p1 p2
ground 0
vsrc vin in 0
cap c1 n1 n2 0.5p
cap c2 m1 m2 0.5p
cap cin vg 0 20f
cap ci vg out 5p
cap cl out 0 {cl}
switch s1a in n1 phase=p1 gon={gon}
switch s1b n1 0 phase=p2 gon={gon}
switch s2a n2 0 phase=p1 gon={gon}
switch s2b n2 vg phase=p2 gon={gon}
switch s3a m1 0 phase=p1 gon={gon}
switch s3b m1 vg phase=p2 gon={gon}
switch s4a m2 0 phase=p1 gon={gon}
switch s4b m2 out phase=p2 gon={gon}
ota ota1 in=vg out=out gm={gm} gamma=2
readout out 0 phase=p1
"""

_BUILTINS = {
    "passive-lp-a1": _PASSIVE_LP.format(name="passive-lp-a1", ac="5p", c="5p"),
    "passive-lp-a4": _PASSIVE_LP.format(name="passive-lp-a4", ac="5p", c="20p"),
    "integrator": _INTEGRATOR,
    "active-lp": _ACTIVE_LP.format(
        name="active-lp", cl="5p", gm="20u", gon="16u", fs="160k"
    ),
    "active-lp-small-cl": _ACTIVE_LP.format(
        name="active-lp-small-cl", cl="0.5p", gm="2u", gon="16u", fs="120k"
    ),
}

BUILTIN_NOTES = {
    "passive-lp-a1": "passive first-order LP, C = alphaC = 5 pF (fast convergence, 28.8 uVrms)",
    "passive-lp-a4": "passive first-order LP, alpha = 1/4, C = 20 pF (slow convergence, 14.4 uVrms)",
    "integrator": "stray-insensitive non-inverting integrator, alpha = 0.1, C = CL = 5 pF, Cin = 20 fF",
    "active-lp": "OTA-based first-order LP, alpha = 0.1, C = CL = 5 pF, Cin = 20 fF (58 uVrms at gamma = 2)",
    "active-lp-small-cl": "OTA-based first-order LP with CL = 0.5 pF (133 uVrms at gamma = 2)",
}


def builtin_source(name):
    """Netlist text of a built-in example."""
    try:
        return _BUILTINS[name]
    except KeyError:
        raise KeyError(f"no built-in circuit named {name!r}") from None


def builtin_circuit(name):
    return parse(builtin_source(name))


def builtin_examples():
    """All built-in example circuits as (name, Circuit) pairs."""
    return [(name, parse(text)) for name, text in _BUILTINS.items()]
