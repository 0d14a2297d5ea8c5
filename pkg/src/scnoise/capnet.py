"""Capacitor-only network algebra.

Node merging under short-circuit edges, two-point equivalent capacitance,
capacitive-divider transfer gains, and settled charge redistribution under
ideal virtual-ground constraints. Capacitances are treated as edge weights
of a graph Laplacian throughout; the two-point equivalent capacitance is the
reciprocal of the effective resistance of that graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "INFINITE",
    "ExtCap",
    "CapMatrix",
    "CapNetError",
    "build",
    "equivalent_capacitance",
    "transfer_gain",
    "redistribute",
]

_RTOL = 1e-12  # relative tolerance of the dense solves


class CapNetError(ValueError):
    pass


@dataclass(frozen=True)
class ExtCap:
    """An extracted capacitance: a finite value in farads, or infinite.

    Infinity is an explicit variant (a shorted port), never a float sentinel;
    ``1/INFINITE`` is 0 in every downstream formula.
    """

    value: float = None  # None encodes the infinite variant

    def __post_init__(self):
        if self.value is not None and self.value < 0:
            raise CapNetError(f"negative capacitance {self.value}")

    @property
    def is_infinite(self):
        return self.value is None

    def reciprocal(self):
        """1/C, with 1/INFINITE == 0."""
        if self.is_infinite:
            return 0.0
        if self.value == 0.0:
            raise ZeroDivisionError("reciprocal of a 0 F port capacitance")
        return 1.0 / self.value

    def __repr__(self):
        return "ExtCap(INFINITE)" if self.is_infinite else f"ExtCap({self.value!r})"

    def __le__(self, other):
        if self.is_infinite:
            return other.is_infinite
        if other.is_infinite:
            return True
        return self.value <= other.value


INFINITE = ExtCap(None)


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        p = self.parent
        root = x
        while p[root] != root:
            root = p[root]
        while p[x] != root:
            p[x], x = root, p[x]
        return root

    def union(self, x, y):
        self.add(x)
        self.add(y)
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[ry] = rx


@dataclass(frozen=True)
class CapMatrix:
    """Nodal capacitance matrix over supernodes (merged node groups).

    ``matrix`` is the graph Laplacian of the capacitor network: diagonal
    entries are sums of incident capacitances, off-diagonal (i, j) entries are
    minus the total capacitance between supernodes i and j; every row sums to
    zero. ``index`` maps each original node to its supernode row.
    """

    index: dict  # node -> supernode row
    supernodes: tuple  # tuple of frozensets of original nodes
    matrix: np.ndarray
    ground: int  # supernode row holding the ground node

    @property
    def n(self):
        return self.matrix.shape[0]

    def row_of(self, node):
        try:
            return self.index[node]
        except KeyError:
            raise CapNetError(f"node {node!r} not in network") from None

    def same_supernode(self, k, l):
        return self.row_of(k) == self.row_of(l)

    def components(self):
        """Connected components (lists of rows) under nonzero capacitance."""
        n = self.n
        seen = [False] * n
        adj = [np.nonzero(self.matrix[i])[0] for i in range(n)]
        comps = []
        for start in range(n):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                i = stack.pop()
                comp.append(i)
                for j in adj[i]:
                    if j != i and not seen[j]:
                        seen[j] = True
                        stack.append(int(j))
            comps.append(comp)
        return comps


def build(caps, shorts=(), ground="0", nodes=()):
    """Assemble a :class:`CapMatrix` from capacitors and short-circuit edges.

    Shorted node pairs are merged (union-find); capacitors whose two terminals
    land in one supernode are dropped. ``nodes`` may list extra nodes to keep
    in the index even if no surviving capacitor touches them.
    """
    uf = _UnionFind()
    uf.add(ground)
    for n in nodes:
        uf.add(n)
    for c in caps:
        uf.add(c.a)
        uf.add(c.b)
    for a, b in shorts:
        uf.union(a, b)

    roots = {}
    for node in uf.parent:
        roots.setdefault(uf.find(node), []).append(node)
    order = sorted(roots, key=lambda r: sorted(roots[r])[0])
    row = {}
    supernodes = []
    for i, r in enumerate(order):
        supernodes.append(frozenset(roots[r]))
        for node in roots[r]:
            row[node] = i

    n = len(order)
    m = np.zeros((n, n))
    for c in caps:
        i, j = row[c.a], row[c.b]
        if i == j:
            continue  # cannot hold a port; shorted out
        m[i, i] += c.value
        m[j, j] += c.value
        m[i, j] -= c.value
        m[j, i] -= c.value

    return CapMatrix(index=row, supernodes=tuple(supernodes), matrix=m, ground=row[ground])


def equivalent_capacitance(m, k, l):
    """Equivalent capacitance between nodes k and l, all other nodes floating.

    Returns INFINITE when k and l were merged by a short, 0 F when they lie in
    disconnected components, and 1/R_eff(k, l) otherwise with capacitances as
    edge conductances.
    """
    i, j = m.row_of(k), m.row_of(l)
    if i == j:
        return INFINITE

    comp = None
    for c in m.components():
        if i in c:
            comp = c
            break
    if j not in comp:
        return ExtCap(0.0)

    idx = {r: p for p, r in enumerate(comp)}
    sub = m.matrix[np.ix_(comp, comp)]
    # solve L x = e_i - e_j on the component, grounding one row to fix
    # the nullspace; R_eff = x_i - x_j
    rhs = np.zeros(len(comp))
    rhs[idx[i]] = 1.0
    rhs[idx[j]] = -1.0
    pin = idx[j]
    keep = [p for p in range(len(comp)) if p != pin]
    x = np.zeros(len(comp))
    x[keep] = np.linalg.solve(sub[np.ix_(keep, keep)], rhs[keep])
    r_eff = x[idx[i]] - x[idx[j]]
    if r_eff <= 0:
        raise CapNetError(f"nonpositive effective resistance between {k!r} and {l!r}")
    return ExtCap(1.0 / r_eff)


def transfer_gain(m, driven, observe):
    """Potential of ``observe`` with ``driven`` nodes pinned, others floating.

    Floating supernodes carry zero total charge (the network is energized from
    an uncharged state), so their potentials solve the capacitive divider.
    The ground supernode is implicitly driven at 0 V.
    """
    volts = {}
    for node, v in driven.items():
        r = m.row_of(node)
        if r in volts and volts[r] != v:
            raise CapNetError(f"conflicting drive on merged node {node!r}")
        volts[r] = float(v)
    volts.setdefault(m.ground, 0.0)

    obs = m.row_of(observe)
    if obs in volts:
        raise CapNetError(f"observe node {observe!r} is driven")

    floating = [r for r in range(m.n) if r not in volts]
    driven_rows = sorted(volts)
    vd = np.array([volts[r] for r in driven_rows])

    lff = m.matrix[np.ix_(floating, floating)]
    lfd = m.matrix[np.ix_(floating, driven_rows)]

    # a floating subnetwork with no capacitive path to any driven node has an
    # indeterminate potential
    for comp in m.components():
        rows = set(comp)
        if obs not in rows:
            continue
        if not rows.intersection(driven_rows):
            some = sorted(m.supernodes[comp[0]])[0]
            raise CapNetError(f"indeterminate node {some!r}: no path to a driven node")

    pos = {r: p for p, r in enumerate(floating)}
    vf = np.full(len(floating), np.nan)
    for comp in m.components():
        frows = [r for r in comp if r in pos]
        if not frows:
            continue
        if not set(comp).intersection(driven_rows):
            if obs in comp:
                raise CapNetError("indeterminate observe node")
            for r in frows:
                vf[pos[r]] = 0.0  # isolated, uncharged: pick the gauge V = 0
            continue
        sel = [pos[r] for r in frows]
        sub = lff[np.ix_(sel, sel)]
        rhs = -(lfd[sel] @ vd)
        vf[sel] = np.linalg.solve(sub, rhs)

    return float(vf[pos[obs]])


def _supernode_charge(names, caps, row, q):
    """Signed plate charge per supernode row from per-capacitor charges."""
    n = len(names)
    out = np.zeros(n)
    for c in caps:
        i, j = row[c.a], row[c.b]
        if i == j:
            continue
        out[i] += q.get(c.name, 0.0)
        out[j] -= q.get(c.name, 0.0)
    return out


def redistribute(pv, q0):
    """Settled end-of-phase charges per capacitor within one clock phase.

    Ground and source nodes sit at 0 V, every OTA input is forced to 0 V by
    infinite-gain feedback (the OTA output supplies whatever charge that
    takes), closed switches merge nodes, and every other floating supernode
    conserves its total plate charge. Charges are keyed by capacitor name and
    signed as the charge on plate ``a``.
    """
    c = pv.circuit
    caps = c.capacitors
    m = build(caps, shorts=pv.closed_edges, ground=c.ground, nodes=c.nodes)
    row, n = m.index, m.n

    fixed = {m.ground}
    for src in c.sources:
        fixed.add(row[src.node])

    in_rows, out_rows = {}, {}
    for o in c.otas:
        ir, orow = row[o.input], row[o.output]
        if ir in fixed:
            raise CapNetError(f"ota {o.name!r} input is tied to a fixed node")
        if orow in fixed or orow == ir:
            raise CapNetError(f"ota {o.name!r} has no usable feedback in phase {pv.phase!r}")
        if ir in in_rows.values() or orow in out_rows.values():
            raise CapNetError("otas sharing a supernode are unsupported")
        in_rows[o.name], out_rows[o.name] = ir, orow

    q_target = _supernode_charge(m.supernodes, caps, row, q0)

    rows, rhs = [], []
    outs = set(out_rows.values())
    ins = set(in_rows.values())
    for r in range(n):
        if r in fixed or r in ins:
            e = np.zeros(n)
            e[r] = 1.0
            rows.append(e)
            rhs.append(0.0)
        if r not in fixed and r not in outs:
            rows.append(m.matrix[r])
            rhs.append(q_target[r])

    a = np.array(rows)
    b = np.array(rhs)
    if a.shape[0] != n:
        raise CapNetError(
            "unbalanced constraint system (an OTA output is merged with a "
            "constrained node)"
        )
    # row equilibration: voltage rows are O(1), charge rows O(C); a floating
    # capacitor group leaves its common-mode voltage undetermined (harmless,
    # charges stay well defined), so solve least-squares and check residuals
    norms = np.abs(a).max(axis=1)
    norms[norms == 0.0] = 1.0
    a_s = a / norms[:, None]
    b_s = b / norms
    v, *_ = np.linalg.lstsq(a_s, b_s, rcond=None)
    resid = a_s @ v - b_s
    scale = max(np.abs(b_s).max(), 1e-30)
    if np.abs(resid).max() > 1e-9 * scale:
        culprit = ", ".join(sorted(in_rows)) or "network"
        raise CapNetError(
            f"inconsistent charge redistribution in phase {pv.phase!r} "
            f"(check feedback of {culprit})"
        )

    return {cap.name: cap.value * (v[row[cap.a]] - v[row[cap.b]]) for cap in caps}
