import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scnoise import bode
from scnoise.bode import K_BOLTZMANN, ExtractionError, extract, variance
from scnoise.netlist import parse

import oracles

KT = K_BOLTZMANN * 300.0


def scale_gon(circuit, factor):
    switches = tuple(replace(s, gon=s.gon * factor) for s in circuit.switches)
    return replace(circuit, switches=switches)


def val(extcap):
    assert not extcap.is_infinite
    return extcap.value


# ---------------------------------------------------------------------------
# extraction triples on the passive stage


def test_passive_phi1_sampling_port(passive_a1):
    b = extract(passive_a1, "p1", ("a", "0"))
    assert val(b.c_inf) == pytest.approx(5e-12, rel=1e-12)
    assert b.c_inf_prime.is_infinite
    assert b.c_zero.is_infinite
    assert b.hfb == 1.0 and b.gamma_eff == 0.0
    v = variance(b, 300.0)
    assert v.value == pytest.approx(KT / 5e-12, rel=1e-12)


def test_passive_phi1_holding_port(passive_a1):
    b = extract(passive_a1, "p1", ("b", "0"))
    assert val(b.c_inf) == pytest.approx(5e-12, rel=1e-12)
    assert val(b.c_inf_prime) == pytest.approx(5e-12, rel=1e-12)
    assert variance(b, 300.0).value == pytest.approx(0.0, abs=1e-20)


def test_passive_phi2_memory_port(passive_a4):
    # alpha = 1/4, C = 20 pF: C0 = alphaC + C, variance kT/C * alpha/(1+alpha)
    b = extract(passive_a4, "p2", ("b", "0"))
    assert val(b.c_inf) == pytest.approx(20e-12, rel=1e-12)
    assert val(b.c_zero) == pytest.approx(25e-12, rel=1e-12)
    assert val(b.c_inf_prime) == val(b.c_zero)  # no OTA: both shorted nets equal
    v = variance(b, 300.0)
    assert v.value == pytest.approx(KT / 20e-12 * 0.25 / 1.25, rel=1e-12)


def test_passive_phi2_switched_port(passive_a1):
    b = extract(passive_a1, "p2", ("a", "0"))
    assert val(b.c_inf) == pytest.approx(5e-12, rel=1e-12)
    assert val(b.c_zero) == pytest.approx(10e-12, rel=1e-12)


# ---------------------------------------------------------------------------
# integrator


def test_integrator_phi1_sampling_cap_decoupled(integrator):
    b = extract(integrator, "p1", ("n1", "n2"))
    assert val(b.c_inf) == pytest.approx(0.5e-12, rel=1e-12)
    assert b.c_inf_prime.is_infinite
    assert b.c_zero.is_infinite
    # the OTA is disconnected from the sampling capacitor in this phase
    assert b.gamma_eff == 0.0 and b.hfb == 1.0 and b.ota is None
    assert variance(b, 300.0).value == pytest.approx(KT / 0.5e-12, rel=1e-12)


def test_integrator_phi1_load_port(integrator):
    c, cin, cl = 5e-12, 20e-15, 5e-12
    b = extract(integrator, "p1", ("out", "0"))
    want = cl + c * cin / (c + cin)
    assert val(b.c_inf) == pytest.approx(want, rel=1e-12)
    assert val(b.c_inf_prime) == pytest.approx(want, rel=1e-12)
    assert b.c_zero.is_infinite
    assert b.hfb == pytest.approx(c / (c + cin), rel=1e-12)
    assert b.gamma_eff == 2.0 and b.ota == "ota1"


def test_integrator_phi2_sampling_port(integrator):
    ac, c, cin, cl = 0.5e-12, 5e-12, 20e-15, 5e-12
    b = extract(integrator, "p2", ("n1", "n2"))
    assert val(b.c_inf) == pytest.approx(ac, rel=1e-12)
    assert val(b.c_inf_prime) == pytest.approx(ac + cin + c * cl / (c + cl), rel=1e-12)
    assert val(b.c_zero) == pytest.approx(ac + cin + c, rel=1e-12)
    assert b.hfb == pytest.approx(c / (c + ac + cin), rel=1e-12)  # 1/(1+a+ai)


def test_integrator_phi2_variance_closed_form(integrator):
    # kB*T/(alpha*C) * (aL*(1+ai) + ai + gamma*a + a*aL) denominator-complete
    # closed form of the engine's formula, evaluated independently
    a, ai, al = 0.1, 0.004, 1.0
    d2 = a + ai + al * (1.0 + a + ai)
    for gamma in (0.0, 2.0):
        circ = integrator.with_gamma(gamma)
        b = extract(circ, "p2", ("n1", "n2"))
        got = variance(b, 300.0).value
        want = KT / 0.5e-12 * (al * (1 + ai) + ai + gamma * a) / d2
        assert got == pytest.approx(want, rel=1e-12)


def test_integrator_phi2_variance_vs_quadrature(integrator):
    # physical oracle at the fixture's finite Gon/Gm (small excess expected),
    # converging onto the engine value once switches are much faster
    b = extract(integrator, "p2", ("n1", "n2"))
    engine = variance(b, 300.0).value
    truth = oracles.port_variance_quad(integrator, "p2", ("n1", "n2"), 300.0)
    assert truth == pytest.approx(engine, rel=0.03)
    fast = scale_gon(integrator, 50.0)
    truth_fast = oracles.port_variance_quad(fast, "p2", ("n1", "n2"), 300.0)
    assert truth_fast == pytest.approx(engine, rel=1.5e-3)


# ---------------------------------------------------------------------------
# active LP


def test_active_phi1_ports(active_lp):
    for port in (("n1", "n2"), ("m1", "m2")):
        b = extract(active_lp, "p1", port)
        assert val(b.c_inf) == pytest.approx(0.5e-12, rel=1e-12)
        assert b.c_inf_prime.is_infinite
        assert b.c_zero.is_infinite
        assert variance(b, 300.0).value == pytest.approx(KT / 0.5e-12, rel=1e-12)


def test_active_phi2_memory_port_full_network(active_lp):
    c = c_mem = 5e-12
    c1 = c2 = 0.5e-12
    cin, cl = 20e-15, 5e-12
    b = extract(active_lp, "p2", ("vg", "out"))
    assert val(b.c_inf) == pytest.approx(c + cin * cl / (cin + cl), rel=1e-12)
    assert val(b.c_inf_prime) == pytest.approx(
        c + c2 + (c1 + cin) * cl / (c1 + cin + cl), rel=1e-12
    )
    assert val(b.c_zero) == pytest.approx(c + c1 + c2 + cin, rel=1e-12)
    assert b.hfb == pytest.approx((c + c2) / (c + c1 + c2 + cin), rel=1e-12)


def test_active_phi2_caption_forms_without_cin(active_lp):
    # the figure-style identities C_inf = C, C_inf' = C + C2 + C1*CL/(C1+CL),
    # C0 = C + C1 + C2 hold exactly on the Cin = 0 variant
    caps = tuple(c for c in active_lp.capacitors if c.name != "cin")
    circ = replace(active_lp, capacitors=caps)
    c, c1, c2, cl = 5e-12, 0.5e-12, 0.5e-12, 5e-12
    b = extract(circ, "p2", ("vg", "out"))
    assert val(b.c_inf) == pytest.approx(c, rel=1e-12)
    assert val(b.c_inf_prime) == pytest.approx(c + c2 + c1 * cl / (c1 + cl), rel=1e-12)
    assert val(b.c_zero) == pytest.approx(c + c1 + c2, rel=1e-12)
    assert b.hfb == pytest.approx((c + c2) / (c + c1 + c2), rel=1e-12)


def test_active_phi2_variance_vs_quadrature(active_lp):
    for gamma in (0.0, 2.0):
        circ = active_lp.with_gamma(gamma)
        engine = variance(extract(circ, "p2", ("vg", "out")), 300.0).value
        fast = scale_gon(circ, 30.0)
        truth = oracles.port_variance_quad(fast, "p2", ("vg", "out"), 300.0)
        assert truth == pytest.approx(engine, rel=2e-3)


# ---------------------------------------------------------------------------
# direct noise


def test_direct_noise_integrator(integrator):
    # exact value ~40.70 uVrms at gamma = 2 (quoted 40.7)
    ph, port = integrator.readout
    v = bode.direct_noise(integrator, ph, port, 300.0)
    assert math.sqrt(v.value) == pytest.approx(40.70e-6, rel=5e-3)
    ai, al = 0.004, 1.0
    want = 2.0 * KT / 5e-12 * (1 + ai) ** 2 / (al * (1 + ai) + ai)
    assert v.value == pytest.approx(want, rel=1e-12)
    truth = oracles.port_variance_quad(integrator, ph, port, 300.0)
    assert truth == pytest.approx(v.value, rel=2e-3)


def test_direct_noise_gamma_zero(integrator):
    ph, port = integrator.readout
    v = bode.direct_noise(integrator.with_gamma(0.0), ph, port, 300.0)
    assert v.value == pytest.approx(0.0, abs=1e-18)


def test_direct_noise_passive_zero(passive_a1):
    ph, port = passive_a1.readout
    v = bode.direct_noise(passive_a1, ph, port, 300.0)
    assert v.value == pytest.approx(0.0, abs=1e-18)


# ---------------------------------------------------------------------------
# structural properties and errors


def test_no_ota_nets_identical(passive_a1, passive_a4):
    for circ in (passive_a1, passive_a4):
        for ph in circ.phases:
            for cap in circ.capacitors:
                b = extract(circ, ph, (cap.a, cap.b))
                if b.c_inf_prime.is_infinite:
                    assert b.c_zero.is_infinite
                else:
                    assert b.c_inf_prime.value == b.c_zero.value
                assert b.hfb == 1.0


def test_shorting_monotonicity_on_fixtures(integrator, active_lp):
    for circ in (integrator, active_lp):
        for ph in circ.phases:
            for cap in circ.capacitors:
                b = extract(circ, ph, (cap.a, cap.b))
                assert b.c_inf <= b.c_inf_prime


def test_unbounded_for_floating_port():
    c = parse(
        "phases p1 p2\nground 0\ncap cx a b 1p\ncap cy q 0 1p\n"
        "switch s q a phase=p1\n"
    )
    b = extract(c, "p2", ("a", "0"))  # cap pair floats: no limit on the port
    assert b.c_inf.value == 0.0
    assert variance(b, 300.0).is_unbounded


def test_multi_ota_port_rejected():
    c = parse(
        "phases p1\nground 0\n"
        "cap f1 vg1 o1 1p\ncap f2 vg2 o2 1p\ncap link o1 vg2 1p\n"
        "cap port vg1 0 1p\n"
        "ota u1 in=vg1 out=o1 gm=1u gamma=1\n"
        "ota u2 in=vg2 out=o2 gm=1u gamma=1\n"
    )
    with pytest.raises(ExtractionError, match="multi-OTA"):
        extract(c, "p1", ("vg1", "0"))


@given(
    cvals=st.lists(st.floats(0.05, 20.0), min_size=3, max_size=3),
    gamma=st.floats(0.0, 4.0),
    gon_closed=st.booleans(),
)
@settings(max_examples=60, deadline=None)
def test_variance_nonnegative_random_feedback(cvals, gamma, gon_closed):
    # one OTA in capacitive feedback plus a switched input branch
    c1, cf, cl = (v * 1e-12 for v in cvals)
    phase = "p1" if gon_closed else "p2"
    circ = parse(
        "phases p1 p2\nground 0\nvsrc vin in 0\n"
        f"cap c1 in x {c1:.4e}\n"
        f"cap cf vg out {cf:.4e}\n"
        f"cap cl out 0 {cl:.4e}\n"
        "switch s x vg phase=p1\n"
        f"ota o in=vg out=out gm=1u gamma={gamma:.4f}\n"
    )
    for cap in circ.capacitors:
        v = variance(extract(circ, phase, (cap.a, cap.b)), 300.0)
        assert v.is_unbounded or v.value >= 0.0


def test_input_gains_reported(integrator):
    b = extract(integrator, "p2", ("n1", "n2"))
    assert b.input_gains is not None and "in" in b.input_gains
    # the input is disconnected during the transfer phase
    assert b.input_gains["in"] == pytest.approx(0.0, abs=1e-12)
