"""Report documents: JSON assembly, human-readable rendering, figures.

JSON output is strict SI (farads, volts^2, hertz); the human renderer speaks
pF and uVrms. Figures are rendered with matplotlib to files next to the
delimited output.
"""

from __future__ import annotations

import json
import math
from importlib import resources

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .bode import K_BOLTZMANN

__all__ = [
    "build_document",
    "schema",
    "render_text",
    "render_report_figure",
    "render_compare_figure",
    "render_sweep_figure",
]

TOOL_NAME = "scnoise"


def _extcap_json(c):
    return "inf" if c.is_infinite else c.value


def _var_json(v):
    return "unbounded" if v.is_unbounded else v.value


def _circuit_json(circuit):
    return {
        "name": circuit.name,
        "temperature_k": circuit.temperature,
        "fs_hz": circuit.fs,
        "phases": list(circuit.phases),
        "ground": circuit.ground,
        "readout": None
        if circuit.readout is None
        else {"phase": circuit.readout[0], "nodes": list(circuit.readout[1])},
        "memory": circuit.memory,
        "capacitors": [
            {"name": c.name, "a": c.a, "b": c.b, "farads": c.value}
            for c in circuit.capacitors
        ],
        "switches": [
            {
                "name": s.name,
                "a": s.a,
                "b": s.b,
                "closed_in": sorted(s.closed_in),
                "gon_s": s.gon,
            }
            for s in circuit.switches
        ],
        "otas": [
            {
                "name": o.name,
                "input": o.input,
                "output": o.output,
                "gm_s": o.gm,
                "gamma": o.gamma,
            }
            for o in circuit.otas
        ],
        "sources": [
            {"name": s.name, "node": s.node, "dc_v": s.dc} for s in circuit.sources
        ],
    }


def _caps_json(b, voltage_var=None):
    out = {
        "port": list(b.port),
        "phase": b.phase,
        "c_inf_f": _extcap_json(b.c_inf),
        "c_inf_prime_f": _extcap_json(b.c_inf_prime),
        "c_zero_f": _extcap_json(b.c_zero),
        "hfb": b.hfb,
        "gamma": b.gamma_eff,
        "ota": b.ota,
    }
    if b.input_gains:
        out["input_gains"] = dict(b.input_gains)
    if voltage_var is not None:
        out["voltage_variance_v2"] = _var_json(voltage_var)
        if not voltage_var.is_unbounded:
            out["rms_v"] = math.sqrt(voltage_var.value)
    return out


def _pattern_exact(rep):
    """Engine-derived coefficient block for a recognized stage shape."""
    p = rep.pattern
    if p is None:
        return None
    kt = K_BOLTZMANN * rep.temperature
    c = rep.recursion.mem_cap
    out = {"lambda": rep.recursion.lam}
    out["theta_direct"] = c * rep.direct_caps.ota_bracket()
    mem_detail = None
    other = []
    for d in rep.details:
        if d.injection.cap == rep.memory:
            mem_detail = d
        else:
            other.append(d)
    if p.kind == "active-lp" and mem_detail is not None:
        out["beta_ota"] = c * mem_detail.caps.ota_bracket()
        out["beta_sw2"] = c * mem_detail.caps.switch_bracket()
        out["beta_sw1"] = sum(
            d.injection.prop_coeff ** 2
            * d.injection.conv_cap ** 2
            * (d.caps.switch_bracket() + d.caps.gamma_eff * d.caps.ota_bracket())
            / c
            for d in other
        )
        lam2 = rep.recursion.lam ** 2
        if lam2 < 1.0:
            f = 1.0 / (1.0 - lam2)
            out["theta_ota"] = out["beta_ota"] * f
            out["theta_sw1"] = out["beta_sw1"] * f
            out["theta_sw2"] = out["beta_sw2"] * f
            out["theta_sw"] = out["theta_sw1"] + out["theta_sw2"]
    if p.kind == "integrator":
        out["slope_coeff"] = rep.recursion.inj_var / (kt * p.alpha * c)
    if rep.steady_var is not None:
        out["steady_total_rms_v"] = math.sqrt(rep.steady_var + rep.direct_var)
    out["direct_rms_v"] = math.sqrt(rep.direct_var)
    return {k: v for k, v in out.items() if math.isfinite(v)}


def _pattern_approx(rep):
    """The small-ratio closed forms carried alongside the exact values."""
    p = rep.pattern
    if p is None:
        return None
    out = dict(p.coefficients())
    out["direct_var_v2"] = p.approx_direct_var(rep.temperature)
    out["direct_rms_v"] = math.sqrt(out["direct_var_v2"])
    total = p.approx_total_var(rep.temperature)
    if total is not None:
        out["steady_total_var_v2"] = total
        out["steady_total_rms_v"] = math.sqrt(total)
    return {k: v for k, v in out.items() if math.isfinite(v)}


def _jsonable(obj):
    """Recursively convert numpy scalars so json.dumps accepts the document."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def build_document(
    circuit, rep, per_period=False, mc=None, comparison=None, sweep=None
):
    """Assemble the machine-readable report document."""
    from . import noiseplan

    doc = {
        "tool": {"name": TOOL_NAME, "version": __version__},
        "circuit": _circuit_json(circuit),
        "phase_tables": [],
        "plan": {
            "memory": rep.memory,
            "mem_cap_f": rep.recursion.mem_cap,
            "lambda": rep.recursion.lam,
            "injection_var_c2": "unbounded"
            if math.isinf(rep.recursion.inj_var)
            else rep.recursion.inj_var,
            "injections": [
                {
                    "phase": d.injection.phase,
                    "port": list(d.injection.port),
                    "cap": d.injection.cap,
                    "conv_cap_f": d.injection.conv_cap,
                    "prop_coeff": d.injection.prop_coeff,
                    "voltage_variance_v2": _var_json(d.voltage_var),
                    "charge_variance_c2": "unbounded"
                    if math.isinf(d.charge_var)
                    else d.charge_var,
                }
                for d in rep.details
            ],
        },
        "noise": {
            "periods": rep.periods,
            "sampled_v2": "unbounded" if math.isinf(rep.sampled_var) else rep.sampled_var,
            "steady_v2": rep.steady_var,
            "direct_v2": "unbounded" if math.isinf(rep.direct_var) else rep.direct_var,
            "total_v2": "unbounded" if math.isinf(rep.total_var) else rep.total_var,
            "rms_v": "unbounded" if math.isinf(rep.rms) else rep.rms,
            "divergent": rep.divergent,
            "unbounded": rep.unbounded,
        },
    }

    by_phase = {}
    for d in rep.details:
        by_phase.setdefault(d.injection.phase, []).append(_caps_json(d.caps, d.voltage_var))
    ro_phase = rep.readout[0]
    from .bode import variance

    by_phase.setdefault(ro_phase, []).append(
        _caps_json(rep.direct_caps, variance(rep.direct_caps, rep.temperature))
    )
    doc["phase_tables"] = [
        {"phase": ph, "ports": ports} for ph, ports in sorted(by_phase.items())
    ]

    if per_period and not rep.unbounded:
        series = []
        for n, sampled in rep.sampled_series():
            total = sampled + rep.direct_var
            series.append(
                {"n": n, "sampled_v2": sampled, "total_v2": total, "rms_v": math.sqrt(total)}
            )
        doc["noise"]["per_period"] = series

    if rep.pattern is not None:
        doc["pattern"] = {
            "kind": rep.pattern.kind,
            "alpha": rep.pattern.alpha,
            "alpha_in": rep.pattern.alpha_in,
            "alpha_l": rep.pattern.alpha_l,
            "gamma": rep.pattern.gamma,
            "exact": _pattern_exact(rep),
            "approx": _pattern_approx(rep),
        }
        if rep.pattern.alpha1 is not None:
            doc["pattern"]["alpha1"] = rep.pattern.alpha1

    meta = noiseplan.frequency_meta(circuit)
    if meta is not None:
        doc["transfer"] = {
            "numerator": list(meta.numerator),
            "denominator": list(meta.denominator),
            "fc_hz": meta.fc,
        }

    if mc is not None:
        doc["mc"] = {
            "runs": mc.runs,
            "periods": mc.periods,
            "dt_s": mc.dt,
            "seed": mc.seed,
            "temperature_k": mc.temperature,
            "readout_rms_v": [float(x) for x in mc.readout_rms],
            "readout_se_v": [float(x) for x in mc.readout_se],
        }
    if comparison is not None:
        doc["comparison"] = {
            "passed": comparison.passed,
            "rows": [
                {
                    "period": r.period,
                    "analytic_rms_v": r.analytic_rms,
                    "mc_rms_v": r.mc_rms,
                    "rel_err": r.rel_err,
                    "mc_se_v": r.mc_se,
                    "passed": r.passed,
                }
                for r in comparison.rows
            ],
        }
    if sweep is not None:
        doc["gamma_sweep"] = sweep
    return _jsonable(doc)


def schema():
    """The shipped JSON schema for report documents."""
    text = resources.files("scnoise").joinpath("schema/report.schema.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# human rendering


def _uv(var):
    """volts^2 -> uVrms string."""
    if var is None:
        return "-"
    if isinstance(var, str) or math.isinf(var):
        return "unbounded"
    return f"{math.sqrt(var) * 1e6:.2f} uVrms"


def _pf(c):
    if c == "inf" or c is None:
        return "inf"
    return f"{c * 1e12:.4g} pF"


def render_text(doc, approx=False):
    lines = []
    c = doc["circuit"]
    lines.append(f"circuit {c['name']}  (T = {c['temperature_k']:g} K, fs = {c['fs_hz']:g} Hz)")
    if doc.get("transfer"):
        t = doc["transfer"]
        fc = t["fc_hz"]
        lines.append(
            "  H(z) num/den (z^-1 powers): "
            f"{[round(x, 6) for x in t['numerator']]} / "
            f"{[round(x, 6) for x in t['denominator']]}"
            + (f", fc = {fc:.4g} Hz" if fc else "")
        )
    lines.append("")
    lines.append("per-phase port capacitances:")
    for tab in doc["phase_tables"]:
        for p in tab["ports"]:
            extra = f" hfb={p['hfb']:.6g} gamma={p['gamma']:g}" if p["ota"] else ""
            lines.append(
                f"  {tab['phase']:>4}  port {p['port'][0]}-{p['port'][1]}: "
                f"Cinf={_pf(p['c_inf_f'])}, Cinf'={_pf(p['c_inf_prime_f'])}, "
                f"C0={_pf(p['c_zero_f'])}{extra}"
                + (
                    f"  -> {_uv(p.get('voltage_variance_v2'))}"
                    if "voltage_variance_v2" in p
                    else ""
                )
            )
    pl = doc["plan"]
    lines.append("")
    lines.append(
        f"plan: memory {pl['memory']} ({_pf(pl['mem_cap_f'])}), lambda = {pl['lambda']:.6g}"
    )
    for i in pl["injections"]:
        lines.append(
            f"  {i['phase']:>4}  port {i['port'][0]}-{i['port'][1]} via {i['cap']}"
            f" (conv {_pf(i['conv_cap_f'])}, prop {i['prop_coeff']:+.6g})"
            f"  -> {_uv(i['voltage_variance_v2'])}"
        )
    nz = doc["noise"]
    lines.append("")
    if nz["divergent"]:
        lines.append(f"sampled noise diverges (~period count); after n = {nz['periods']}:")
    lines.append(
        f"noise at readout after {nz['periods']} periods: sampled {_uv(nz['sampled_v2'])}, "
        f"direct {_uv(nz['direct_v2'])}, total {_uv(nz['total_v2'])}"
    )
    if nz["steady_v2"] is not None:
        steady_tot = nz["steady_v2"] + (
            nz["direct_v2"] if not isinstance(nz["direct_v2"], str) else 0.0
        )
        lines.append(f"steady state: sampled {_uv(nz['steady_v2'])}, total {_uv(steady_tot)}")
    pat = doc.get("pattern")
    if pat:
        ex = pat["exact"]
        lines.append("")
        lines.append(
            f"recognized stage: {pat['kind']} (alpha={pat['alpha']:.4g}, "
            f"alpha_in={pat['alpha_in']:.4g}, alpha_l={pat['alpha_l']:.4g}, "
            f"gamma={pat['gamma']:g})"
        )
        keys = [k for k in ("beta_sw1", "beta_sw2", "beta_ota", "theta_sw", "theta_ota",
                            "theta_direct", "slope_coeff") if k in ex]
        if keys:
            lines.append("  exact:  " + "  ".join(f"{k}={ex[k]:.6g}" for k in keys))
        if approx and pat.get("approx"):
            ap = pat["approx"]
            keys = [k for k in ("theta_sw1", "theta_sw2", "theta_sw", "theta_ota",
                                "theta_direct", "slope_coeff") if k in ap]
            lines.append("  approx: " + "  ".join(f"{k}={ap[k]:.6g}" for k in keys))
            if "steady_total_rms_v" in ap:
                lines.append(
                    f"  approx steady total: {ap['steady_total_rms_v'] * 1e6:.2f} uVrms"
                    f"  (exact: {ex.get('steady_total_rms_v', float('nan')) * 1e6:.2f} uVrms)"
                )
            if "direct_rms_v" in ap and "direct_rms_v" in ex:
                lines.append(
                    f"  approx direct: {ap['direct_rms_v'] * 1e6:.2f} uVrms"
                    f"  (exact: {ex['direct_rms_v'] * 1e6:.2f} uVrms)"
                )
    if doc.get("comparison"):
        comp = doc["comparison"]
        lines.append("")
        lines.append("analytic vs Monte-Carlo readout RMS:")
        lines.append("  period   analytic        mc              rel.err   3*SE")
        rows = comp["rows"]
        shown = rows if len(rows) <= 24 else rows[:12] + rows[-12:]
        prev = None
        for r in shown:
            if prev is not None and r["period"] != prev + 1:
                lines.append("  ...")
            prev = r["period"]
            lines.append(
                f"  {r['period']:>6}   {r['analytic_rms_v'] * 1e6:>9.3f} uV   "
                f"{r['mc_rms_v'] * 1e6:>9.3f} uV   {r['rel_err'] * 100:>6.2f} %   "
                f"{3 * r['mc_se_v'] * 1e6:>6.3f} uV   {'ok' if r['passed'] else 'FAIL'}"
            )
        lines.append(f"  overall: {'PASS' if comp['passed'] else 'FAIL'}")
    if doc.get("gamma_sweep"):
        lines.append("")
        lines.append("gamma sweep (steady readout RMS):")
        lines.append("  gamma   analytic        mc              rel.err")
        for r in doc["gamma_sweep"]["rows"]:
            lines.append(
                f"  {r['gamma']:>5.2f}   {r['analytic_rms_v'] * 1e6:>9.3f} uV   "
                f"{r['mc_rms_v'] * 1e6:>9.3f} uV   {r['rel_err'] * 100:>6.2f} %   "
                f"{'ok' if r['passed'] else 'FAIL'}"
            )
        lines.append(f"  overall: {'PASS' if doc['gamma_sweep']['passed'] else 'FAIL'}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# figures


def _staircase(rep_doc):
    per = rep_doc["noise"].get("per_period")
    if not per:
        return None, None
    n = [row["n"] for row in per]
    rms = [row["rms_v"] for row in per]
    return n, rms


def render_report_figure(doc, path):
    """Analytic per-period RMS staircase."""
    n, rms = _staircase(doc)
    fig, ax = plt.subplots(figsize=(6, 3.6))
    if n is not None:
        ax.step(n, np.array(rms) * 1e6, where="post", label="analytic")
        ax.legend()
    ax.set_xlabel("period n")
    ax.set_ylabel("readout RMS (uV)")
    ax.set_title(doc["circuit"]["name"])
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_compare_figure(doc, mc, path):
    """Simulated ensemble RMS trace with the analytic staircase overlaid."""
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    period = None
    if doc["circuit"]["fs_hz"]:
        period = 1.0 / doc["circuit"]["fs_hz"]
    ax.plot(mc.times * 1e3, mc.rms * 1e6, lw=0.9, label=f"MC ({mc.runs} runs)")
    per = doc["noise"].get("per_period")
    if per and period:
        t = [row["n"] * period * 1e3 for row in per]
        ax.step(t, [row["rms_v"] * 1e6 for row in per], where="post", label="analytic")
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("readout RMS (uV)")
    ax.set_title(doc["circuit"]["name"])
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_sweep_figure(sweep, name, path):
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    g = [r["gamma"] for r in sweep["rows"]]
    ax.plot(g, [r["analytic_rms_v"] * 1e6 for r in sweep["rows"]], "o-", label="analytic")
    ax.plot(g, [r["mc_rms_v"] * 1e6 for r in sweep["rows"]], "s--", label="MC")
    ax.set_xlabel("OTA noise excess factor gamma")
    ax.set_ylabel("readout RMS (uV)")
    ax.set_title(name)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
