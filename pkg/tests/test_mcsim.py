import math
from dataclasses import replace

import numpy as np
import pytest
from scnoise import bode, mcsim, noiseplan
from scnoise.bode import K_BOLTZMANN
from scnoise.mcsim import McConfig, SettlingWarning, SimulationError, compile_phase, step
from scnoise.netlist import parse, phase_view

import oracles

KT = K_BOLTZMANN * 300.0

RC_TEXT = """\
circuit rc
temp 300
fs 100k
phases p1 p2
ground 0
vsrc vin in 0
cap c x 0 5p
switch s in x phase=p1,p2 gon=20u
readout x 0 phase=p1
memory c
"""


@pytest.fixture(scope="module")
def rc_circuit():
    return parse(RC_TEXT)


# ---------------------------------------------------------------------------
# compile_phase


def test_rc_compile_pole(rc_circuit):
    s = compile_phase(phase_view(rc_circuit, "p1"), 300.0)
    assert s.nodes == ("x",)
    assert s.cap[0, 0] == pytest.approx(5e-12)
    assert s.cond[0, 0] == pytest.approx(20e-6)
    assert s.poles()[0] == pytest.approx(20e-6 / 5e-12, rel=1e-12)
    assert s.psd[0] == pytest.approx(4 * KT * 20e-6, rel=1e-12)


def test_ota_stamp_and_zero_psd(integrator):
    s = compile_phase(phase_view(integrator, "p2"), 300.0)
    i_vg = s.nodes.index("vg")
    i_out = s.nodes.index("out")
    assert s.cond[i_out, i_vg] == pytest.approx(10e-6)
    z = compile_phase(phase_view(integrator.with_gamma(0.0), "p2"), 300.0)
    assert z.source_names[-1] == "ota1"
    assert z.psd[-1] == 0.0  # stamp present, noiseless source


def test_floating_island_rejected():
    c = parse(
        "phases p1 p2\nground 0\nvsrc vin in 0\n"
        "cap cx a b 1p\nswitch s1 in a phase=p1\nswitch s2 b 0 phase=p1\n"
        "readout a b phase=p2\n"
    )
    with pytest.raises(SimulationError, match="floating island"):
        compile_phase(phase_view(c, "p2"), 300.0)


# ---------------------------------------------------------------------------
# step


def test_step_freezes_without_dynamics(rc_circuit):
    s = compile_phase(phase_view(rc_circuit, "p1"), 300.0)
    frozen = replace(s, cond=np.zeros_like(s.cond), psd=np.zeros_like(s.psd))
    rng = np.random.default_rng(0)
    v = np.array([0.73])
    out = step(frozen, v, 1e-9, rng)
    assert out[0] == pytest.approx(0.73, rel=1e-12)


def test_step_deterministic_decay(rc_circuit):
    s = compile_phase(phase_view(rc_circuit, "p1"), 300.0)
    quiet = replace(s, psd=np.zeros_like(s.psd))
    rng = np.random.default_rng(0)
    dt = 1e-9
    tau = 5e-12 / 20e-6
    v = np.array([1.0])
    v = step(quiet, v, dt, rng)
    assert v[0] == pytest.approx(1.0 / (1.0 + dt / tau), rel=1e-12)


def test_step_rc_equipartition(rc_circuit):
    # ensemble over independent chains reaches kB*T/C (equipartition oracle)
    s = compile_phase(phase_view(rc_circuit, "p1"), 300.0)
    rng = np.random.default_rng(123)
    tau = 5e-12 / 20e-6
    dt = tau / 40
    runs, settle = 700, 300
    vals = np.empty(runs)
    for r in range(runs):
        v = np.zeros(1)
        for _ in range(settle):
            v = step(s, v, dt, rng)
        vals[r] = v[0]
    var = float(np.mean(vals ** 2))
    want = KT / 5e-12
    se = want * math.sqrt(2.0 / runs)
    assert abs(var - want) < 3 * se


# ---------------------------------------------------------------------------
# run


def test_zero_noise_stays_zero(passive_a1):
    cfg = McConfig(runs=50, periods=4, seed=9, temperature=0.0)
    mc = mcsim.run(passive_a1, cfg)
    assert np.all(mc.samples == 0.0)
    assert np.all(mc.readout_rms == 0.0)


def test_charge_freezing_bit_exact():
    # all switches open in p2 and gamma-free: recorded voltages constant
    c = parse(
        "circuit hold\ntemp 300\nfs 100k\nphases p1 p2\nground 0\n"
        "vsrc vin in 0\ncap c x 0 5p\nswitch s in x phase=p1 gon=20u\n"
        "readout x 0 phase=p2\nmemory c\n"
    )
    cfg = McConfig(runs=40, periods=3, seed=3, record=25)
    mc = mcsim.run(c, cfg)
    in_p2 = []
    period = 1.0 / c.fs
    for i, t in enumerate(mc.times):
        frac = (t % period) / period
        if frac > 0.5 or frac == 0.0:
            in_p2.append(i)
    assert len(in_p2) > 2 * cfg.periods
    by_period = {}
    for i in in_p2:
        key = int(mc.times[i] / period - 1e-9)
        by_period.setdefault(key, []).append(mc.samples[:, i])
    for cols in by_period.values():
        for col in cols[1:]:
            assert np.array_equal(col, cols[0])


def test_seed_determinism_byte_exact(passive_a1, tmp_path):
    cfg = McConfig(runs=120, periods=5, seed=77, record=40)
    a = mcsim.run(passive_a1, cfg)
    b = mcsim.run(passive_a1, cfg)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.readout_samples, b.readout_samples)
    fa, fb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_csv(fa)
    b.write_csv(fb)
    assert fa.read_bytes() == fb.read_bytes()


def test_seed_changes_results(passive_a1):
    a = mcsim.run(passive_a1, McConfig(runs=60, periods=3, seed=1))
    b = mcsim.run(passive_a1, McConfig(runs=60, periods=3, seed=2))
    assert not np.array_equal(a.samples, b.samples)


def test_run_equipartition_passive_hold():
    # a single-phase passive network held at equilibrium: every capacitor's
    # variance matches its passive extraction value within 3 SE at 1000 runs
    c = parse(
        "circuit eq\ntemp 300\nfs 200k\nphases p1\nground 0\nvsrc vin in 0\n"
        "cap ca a 0 5p\ncap c b 0 20p\nswitch s2 a b phase=p1 gon=40u\n"
        "readout b 0 phase=p1\nmemory c\n"
    )
    runs = 1000
    base = mcsim.run(c, McConfig(runs=4, periods=1, seed=1))
    mc = mcsim.run(c, McConfig(runs=runs, periods=12, seed=21, dt=base.dt / 2))
    var = float(np.mean(mc.readout_samples[:, -1] ** 2))
    want = bode.variance(bode.extract(c, "p1", ("b", "0")), 300.0).value
    se = want * math.sqrt(2.0 / runs)
    assert abs(var - want) < 3 * se


def test_dt_bias_below_mc_standard_error(passive_a1):
    # deterministic discretization bias of the update law: halving dt at the
    # acceptance operating point moves the steady RMS by less than the MC
    # standard error of a 1000-run ensemble
    rep = noiseplan.report(passive_a1, 12)
    base = mcsim.run(passive_a1, McConfig(runs=4, periods=1, seed=1))
    v1 = oracles.be_steady_readout_variance(passive_a1, base.dt / 2)
    v2 = oracles.be_steady_readout_variance(passive_a1, base.dt / 4)
    rms1, rms2 = math.sqrt(v1), math.sqrt(v2)
    se = math.sqrt(rep.steady_var) * math.sqrt(1.0 / (2.0 * 1000))
    assert abs(rms1 - rms2) < se
    # and the sampler realizes the discrete law (3 SE at 3000 runs)
    mc = mcsim.run(passive_a1, McConfig(runs=2000, periods=10, seed=4, dt=base.dt / 2))
    var = float(np.mean(mc.readout_samples[:, -1] ** 2))
    assert abs(var - v1) < 3 * v1 * math.sqrt(2.0 / 2000)


def test_settling_warning_and_strict(passive_a1):
    slow = replace(
        passive_a1,
        switches=tuple(replace(s, gon=1e-9) for s in passive_a1.switches),
    )
    cfg = McConfig(runs=4, periods=1, seed=1)
    with pytest.warns(SettlingWarning, match="not << T/2"):
        mcsim.run(slow, cfg)
    with pytest.raises(SimulationError, match="not << T/2"):
        mcsim.run(slow, cfg, strict=True)


def test_run_requires_fs_and_readout(passive_a1):
    c = replace(passive_a1, fs=0.0)
    with pytest.raises(SimulationError, match="fs"):
        mcsim.run(c, McConfig(runs=2, periods=1))
    c2 = replace(passive_a1, readout=None)
    with pytest.raises(SimulationError, match="readout"):
        mcsim.run(c2, McConfig(runs=2, periods=1))


def test_auto_dt_matches_pole_rule(passive_a1):
    mc = mcsim.run(passive_a1, McConfig(runs=2, periods=1, seed=1))
    fmax = max(
        float(compile_phase(phase_view(passive_a1, ph), 300.0).poles().max())
        for ph in passive_a1.phases
    )
    assert mc.dt == pytest.approx(1.0 / (20.0 * fmax), rel=1e-12)


def test_mc_against_exact_covariance_oracle(passive_a4):
    # ensemble staircase matches the exact switched-covariance propagation
    runs = 1500
    base = mcsim.run(passive_a4, McConfig(runs=4, periods=1, seed=1))
    mc = mcsim.run(passive_a4, McConfig(runs=runs, periods=25, seed=32, dt=base.dt / 2))
    truth = oracles.readout_variance_series(passive_a4, 25)
    got = np.mean(mc.readout_samples ** 2, axis=0)
    for k in (5, 12, 24):
        want = truth[k]
        se = want * math.sqrt(2.0 / runs)
        assert abs(got[k] - want) < 3 * se


# ---------------------------------------------------------------------------
# compare


def test_compare_determinism(passive_a1):
    rep = noiseplan.report(passive_a1, 6)
    mc = mcsim.run(passive_a1, McConfig(runs=400, periods=6, seed=11))
    c1 = mcsim.compare(rep, mc)
    c2 = mcsim.compare(rep, mcsim.run(passive_a1, McConfig(runs=400, periods=6, seed=11)))
    assert c1 == c2
    assert c1.passed


def test_compare_period_mismatch(passive_a1):
    rep = noiseplan.report(passive_a1, 3)
    mc = mcsim.run(passive_a1, McConfig(runs=20, periods=5, seed=1))
    with pytest.raises(ValueError, match="periods"):
        mcsim.compare(rep, mc)


def test_compare_flags_wrong_analytic(passive_a1):
    rep = noiseplan.report(passive_a1, 8)
    wrong = Rec = rep.recursion
    from dataclasses import replace as drep

    bad = drep(rep, recursion=drep(Rec, inj_var=Rec.inj_var * 4.0))
    mc = mcsim.run(passive_a1, McConfig(runs=600, periods=8, seed=13))
    comp = mcsim.compare(bad, mc)
    assert not comp.passed
    assert comp.failures()[0].period >= 2
