"""Command-line front end: analyze, simulate, compare, examples.

Exit codes: 0 success, 1 usage, 2 parse/validation, 3 analysis/simulation,
4 comparison failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, mcsim, netlist, noiseplan, reporting as reportmod
from .bode import ExtractionError
from .capnet import CapNetError
from .mcsim import McConfig, SimulationError
from .netlist import NetlistError
from .noiseplan import PlanError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_ANALYSIS = 3
EXIT_COMPARE = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_circuit(ref, gamma=None, temp=None):
    """Resolve a built-in name or a netlist file path into a Circuit."""
    try:
        text = netlist.builtin_source(ref)
    except KeyError:
        if not os.path.exists(ref):
            raise NetlistError(f"no such file or built-in circuit: {ref!r}")
        with open(ref, "r", encoding="utf-8") as f:
            text = f.read()
    c = netlist.parse(text)
    if gamma is not None:
        c = c.with_gamma(gamma)
    if temp is not None:
        from dataclasses import replace

        c = replace(c, temperature=temp).validate()
    return c


def _add_circuit_args(p):
    p.add_argument("circuit", help="netlist file or built-in example name")
    p.add_argument("--gamma", type=float, default=None,
                   help="override the noise excess factor of every OTA")
    p.add_argument("--temp", type=float, default=None, help="override temperature (K)")


def _add_mc_args(p):
    p.add_argument("--runs", type=int, default=1000, help="ensemble size")
    p.add_argument("--seed", type=int, default=1, help="RNG seed")
    p.add_argument("--dt", type=float, default=None,
                   help="time step in seconds (default: 1/(20 x fastest pole))")
    p.add_argument("--record", type=int, default=0,
                   help="record every K steps inside a phase (0: phase ends only)")
    p.add_argument("--strict", action="store_true",
                   help="escalate settling warnings to errors")


def _default_periods(rep):
    if rep.recursion.divergent:
        return 100
    lam = rep.recursion.lam
    if lam <= 0:
        return 3
    return max(3, math.ceil(math.log(1e-3) / (2.0 * math.log(lam))))


def _emit(doc, args, mc=None):
    text_out = reportmod.render_text(doc, approx=getattr(args, "approx", False))
    if getattr(args, "json", False):
        print(json.dumps(doc, indent=2))
    else:
        print(text_out, end="")
    plot_dir = getattr(args, "plot", None)
    if plot_dir:
        os.makedirs(plot_dir, exist_ok=True)
        name = doc["circuit"]["name"]
        if doc.get("gamma_sweep"):
            reportmod.render_sweep_figure(
                doc["gamma_sweep"], name, os.path.join(plot_dir, f"{name}-gamma-sweep.png")
            )
        elif mc is not None:
            reportmod.render_compare_figure(
                doc, mc, os.path.join(plot_dir, f"{name}-compare.png")
            )
        else:
            reportmod.render_report_figure(
                doc, os.path.join(plot_dir, f"{name}-analytic.png")
            )


def _cmd_analyze(args):
    c = _load_circuit(args.circuit, args.gamma, args.temp)
    rep = noiseplan.report(c, args.periods if args.periods is not None else 0)
    if args.periods is None:
        rep = noiseplan.report(c, _default_periods(rep))
    doc = reportmod.build_document(c, rep, per_period=True)
    _emit(doc, args)
    return EXIT_OK


def _cmd_simulate(args):
    c = _load_circuit(args.circuit, args.gamma, args.temp)
    cfg = McConfig(
        runs=args.runs,
        periods=args.periods,
        dt=args.dt,
        seed=args.seed,
        temperature=args.temp,
        record=args.record,
    )
    mc = mcsim.run(c, cfg, strict=args.strict)
    if args.csv:
        mc.write_csv(args.csv, per_run=args.per_run)
    if args.json:
        doc = {
            "tool": {"name": reportmod.TOOL_NAME, "version": __version__},
            "circuit": {"name": c.name},
            "mc": {
                "runs": mc.runs,
                "periods": mc.periods,
                "dt_s": mc.dt,
                "seed": mc.seed,
                "readout_rms_v": [float(x) for x in mc.readout_rms],
                "readout_se_v": [float(x) for x in mc.readout_se],
            },
        }
        print(json.dumps(doc, indent=2))
    else:
        rms = mc.readout_rms
        se = mc.readout_se
        print(f"{c.name}: {mc.runs} runs, {mc.periods} periods, dt = {mc.dt:.4g} s")
        print("readout RMS per period (uV):")
        for i in range(len(rms)):
            print(f"  {i + 1:>4}  {rms[i] * 1e6:>9.3f} +- {se[i] * 1e6:.3f}")
    if args.plot:
        os.makedirs(args.plot, exist_ok=True)
        rep = noiseplan.report(c, args.periods)
        doc = reportmod.build_document(c, rep, per_period=True, mc=mc)
        reportmod.render_compare_figure(
            doc, mc, os.path.join(args.plot, f"{c.name}-trace.png")
        )
    return EXIT_OK


def _parse_sweep(text):
    try:
        start, stop, count = text.split(":")
        start, stop, count = float(start), float(stop), int(count)
        if count < 1:
            raise ValueError
    except ValueError:
        raise _UsageError(f"bad --gamma-sweep {text!r}, expected start:stop:count")
    return np.linspace(start, stop, count)


def _tail_rms_pair(rep, mc):
    """Tail-averaged MC readout RMS and the analytic RMS over the same periods."""
    k = max(1, mc.periods // 3)
    tail = mc.readout_samples[:, -k:]
    m_rms = float(np.sqrt(np.mean(tail ** 2)))
    mem2 = rep.recursion.mem_cap ** 2
    a_var = np.mean(
        [
            noiseplan.evolve(rep.recursion, n) / mem2 + rep.direct_var
            for n in range(mc.periods - k, mc.periods)
        ]
    )
    return m_rms, math.sqrt(float(a_var))


def _cmd_compare(args):
    c = _load_circuit(args.circuit, args.gamma, args.temp)

    if args.gamma_sweep:
        gammas = _parse_sweep(args.gamma_sweep)
        rows = []
        for g in gammas:
            cg = c.with_gamma(float(g))
            rep = noiseplan.report(cg, args.periods)
            if rep.divergent or rep.steady_var is None:
                raise PlanError("gamma sweep needs a convergent (lambda < 1) circuit")
            cfg = McConfig(runs=args.runs, periods=args.periods, dt=args.dt,
                           seed=args.seed, temperature=args.temp)
            mc = mcsim.run(cg, cfg, strict=args.strict)
            m_rms, a_rms = _tail_rms_pair(rep, mc)
            se = m_rms * math.sqrt(1.0 / (2.0 * args.runs))
            err = abs(a_rms - m_rms)
            rows.append({
                "gamma": float(g),
                "analytic_rms_v": a_rms,
                "mc_rms_v": m_rms,
                "rel_err": err / a_rms if a_rms else 0.0,
                "mc_se_v": se,
                "passed": err <= max(3.0 * se, 0.05 * a_rms),
            })
        sweep = {"rows": rows, "passed": all(r["passed"] for r in rows)}
        rep = noiseplan.report(c, args.periods)
        doc = reportmod.build_document(c, rep, sweep=sweep)
        _emit(doc, args)
        if args.csv:
            with open(args.csv, "w") as f:
                f.write("gamma,analytic_rms_v,mc_rms_v,rel_err,passed\n")
                for r in rows:
                    f.write(
                        f"{r['gamma']:.6g},{r['analytic_rms_v']:.9e},"
                        f"{r['mc_rms_v']:.9e},{r['rel_err']:.6g},{int(r['passed'])}\n"
                    )
        return EXIT_OK if sweep["passed"] else EXIT_COMPARE

    rep = noiseplan.report(c, args.periods)
    cfg = McConfig(runs=args.runs, periods=args.periods, dt=args.dt,
                   seed=args.seed, temperature=args.temp, record=args.record)
    mc = mcsim.run(c, cfg, strict=args.strict)
    comp = mcsim.compare(rep, mc)
    doc = reportmod.build_document(c, rep, per_period=True, mc=mc, comparison=comp)
    _emit(doc, args, mc=mc)
    if args.csv:
        mc.write_csv(args.csv, per_run=args.per_run)
    return EXIT_OK if comp.passed else EXIT_COMPARE


def _cmd_examples(args):
    if args.emit:
        try:
            sys.stdout.write(netlist.builtin_source(args.emit))
        except KeyError as e:
            raise _UsageError(str(e))
        return EXIT_OK
    for name, _ in netlist.builtin_examples():
        print(f"{name:<22} {netlist.BUILTIN_NOTES[name]}")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="scnoise", description=__doc__)
    p.add_argument("--version", action="version", version=f"scnoise {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="analytic noise report")
    _add_circuit_args(pa)
    pa.add_argument("--periods", type=int, default=None,
                    help="period count n (default: enough to converge)")
    pa.add_argument("--json", action="store_true", help="machine-readable output")
    pa.add_argument("--approx", action="store_true",
                    help="also print the small-ratio approximate forms")
    pa.add_argument("--exact", action="store_true",
                    help="exact engine values only (the default)")
    pa.add_argument("--plot", metavar="DIR", help="write figures into DIR")
    pa.set_defaults(fn=_cmd_analyze)

    ps = sub.add_parser("simulate", help="Monte-Carlo transient-noise run")
    _add_circuit_args(ps)
    ps.add_argument("--periods", type=int, default=20)
    _add_mc_args(ps)
    ps.add_argument("--csv", metavar="PATH", help="write the trace CSV")
    ps.add_argument("--per-run", action="store_true",
                    help="CSV rows per run instead of aggregated RMS")
    ps.add_argument("--json", action="store_true")
    ps.add_argument("--plot", metavar="DIR", help="write figures into DIR")
    ps.set_defaults(fn=_cmd_simulate)

    pc = sub.add_parser("compare", help="analytic vs Monte-Carlo comparison")
    _add_circuit_args(pc)
    pc.add_argument("--periods", type=int, default=30)
    _add_mc_args(pc)
    pc.add_argument("--gamma-sweep", metavar="A:B:N",
                    help="sweep the OTA noise excess factor over N points")
    pc.add_argument("--csv", metavar="PATH", help="write trace or sweep CSV")
    pc.add_argument("--per-run", action="store_true")
    pc.add_argument("--json", action="store_true")
    pc.add_argument("--plot", metavar="DIR", help="write figures into DIR")
    pc.set_defaults(fn=_cmd_compare)

    pe = sub.add_parser("examples", help="list or emit built-in circuits")
    pe.add_argument("--emit", metavar="NAME", help="print the netlist text of NAME")
    pe.set_defaults(fn=_cmd_examples)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NetlistError as e:
        print(f"netlist error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (PlanError, ExtractionError, CapNetError, SimulationError) as e:
        print(f"analysis error: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
