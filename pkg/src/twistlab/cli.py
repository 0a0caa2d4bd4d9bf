"""Command-line front end: reproducible experiments with CSV/JSON reports.

Every run writes a JSON envelope (schema 1) echoing the full configuration,
plus fixed-schema CSV files per command. Deterministic commands produce
byte-identical outputs for identical configurations, regardless of the
worker-pool size.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, bifurcation, kernel, ring, spectrum
from .errors import DomainError
from .kernel import Params

COMMANDS = ("kernel", "spectrum", "thresholds", "gamma", "branch", "simulate",
            "equilibrium", "stability-map", "iota")

PRESETS = {
    "spectrum": ("fig2",),
    "gamma": ("fig3a", "fig3b"),
    "stability-map": ("fig4",),
    "branch": ("fig5",),
    "simulate": ("fig6",),
    "iota": ("fig7",),
}

EXIT_USAGE = 2
EXIT_DOMAIN = 3
EXIT_IO = 4


@dataclass
class RunConfig:
    command: str
    parameters: dict
    output_dir: Path
    seed: int = 0
    threads: int = 1
    formats: tuple = ("csv", "json")
    gnuplot: bool = False


@dataclass
class ReportEnvelope:
    config: RunConfig
    results: dict
    provenance: list = field(default_factory=list)
    csv_files: dict = field(default_factory=dict)   # name -> (header, rows)
    gnuplot_script: str = ""


def _fmt(x):
    """Shortest round-trip text for floats; plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _resolve_threads(value):
    if value in (None, "auto"):
        env = os.environ.get("TWISTLAB_THREADS", "")
        if env and env != "auto":
            return max(1, int(env))
        return max(1, os.cpu_count() or 1)
    return max(1, int(value))


def _parse_range(text):
    """Parse 'lo:hi:n' into (lo, hi, n)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"expected lo:hi:n, got {text!r}")
    return float(parts[0]), float(parts[1]), int(parts[2])


def _load_config_file(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = val
    return values


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="twistlab",
        description="Twisted states on nonlocally coupled rings: spectra, "
                    "bifurcations, and finite-ring experiments.",
    )
    parser.add_argument("--version", action="version", version=f"twistlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default="twistlab-out", help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="base seed for stochastic commands")
        sp.add_argument("--threads", default=None,
                        help="worker pool size for sweep commands; 'auto' or integer "
                             "(default: TWISTLAB_THREADS or auto)")
        sp.add_argument("--formats", default="csv,json",
                        help="comma subset of {csv,json}; the JSON envelope is always written")
        sp.add_argument("--config", default=None, help="flat key=value config file; flags override")
        sp.add_argument("--gnuplot", action="store_true",
                        help="also emit a gnuplot script for figure presets")

    sp = sub.add_parser("kernel", help="evaluate one kernel-level quantity")
    sp.add_argument("--name", required=True,
                    choices=["w-hat", "c1", "c2", "c3", "c4", "c5", "c6", "tail-limit",
                             "lambda0", "big-h", "cap-x", "iota", "upsilon0"])
    sp.add_argument("--q", type=int, default=None)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--m", type=int, default=None)
    sp.add_argument("--r", type=float, default=None)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.0)
    sp.add_argument("--mu", type=float, default=0.0)
    sp.add_argument("--upsilon", type=float, default=None)
    common(sp)

    sp = sub.add_parser("spectrum", help="eigenvalue listing with a certified supremum")
    sp.add_argument("--q", type=int)
    sp.add_argument("--r", type=float)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.0)
    sp.add_argument("--mu", type=float, default=0.0)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--kmax", default="auto", help="'auto' (certified cutoff) or an integer")
    sp.add_argument("--preset", choices=PRESETS["spectrum"], default=None)
    common(sp)

    sp = sub.add_parser("thresholds", help="threshold coupling radii")
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--kind", required=True, choices=["attractive", "repulsive", "r-star"])
    sp.add_argument("--M", type=int, default=None,
                    help="when given, the finite-size threshold on an M-ring instead")
    common(sp)

    sp = sub.add_parser("gamma", help="pitchfork coefficients along a parameter curve")
    sp.add_argument("--q", type=int)
    sp.add_argument("--ell", type=int, default=None, help="critical mode (default: auto-detect)")
    sp.add_argument("--family", default="r-linear",
                    choices=["r-linear", "lambda-linear", "mixed", "t-family"])
    sp.add_argument("--at", default=None,
                    choices=["attractive-threshold", "repulsive-threshold"],
                    help="place the curve base at a computed threshold radius")
    sp.add_argument("--r0", type=float, default=None, help="explicit base radius")
    sp.add_argument("--lambda", dest="lam", type=float, default=0.0)
    sp.add_argument("--mu", type=float, default=0.0)
    sp.add_argument("--direction", default=None, help="dr,dlam,dmu for --family mixed")
    sp.add_argument("--s0", type=float, default=None,
                    help="curve offset at which to report the branch amplitude")
    sp.add_argument("--t", type=float, default=0.0, help="trade-off index for --family t-family")
    sp.add_argument("--q-max", type=int, default=None, help="sweep q = 2..q-max (ratio table)")
    sp.add_argument("--preset", choices=PRESETS["gamma"], default=None)
    common(sp)

    sp = sub.add_parser("branch", help="bifurcating-branch profiles and Newton refinement")
    sp.add_argument("--q", type=int, default=5)
    sp.add_argument("--s0", type=float, default=-1e-4)
    sp.add_argument("--M", type=int, default=1000)
    sp.add_argument("--grid-size", type=int, default=None, help="profile grid (default: M)")
    sp.add_argument("--error-scaling", action="store_true",
                    help="sweep s over decades and report error slopes")
    sp.add_argument("--preset", choices=PRESETS["branch"], default=None)
    common(sp)

    sp = sub.add_parser("simulate", help="integrate perturbed twisted states to equilibrium")
    sp.add_argument("--M", type=int, default=1000)
    sp.add_argument("--q", type=int, default=5)
    sp.add_argument("--sign", default="attractive", choices=["attractive", "repulsive"])
    sp.add_argument("--r", type=float, default=None)
    sp.add_argument("--s", type=float, default=None,
                    help="offset from the finite-size threshold (when --r is not given)")
    sp.add_argument("--lambda", dest="lam", type=float, default=0.0)
    sp.add_argument("--mu", type=float, default=0.0)
    sp.add_argument("--t-end", type=float, default=2e6)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--amplitude", type=float, default=1e-2)
    sp.add_argument("--n-runs", type=int, default=4)
    sp.add_argument("--samples", type=int, default=0,
                    help="also dump N sampled trajectory states per run")
    sp.add_argument("--preset", choices=PRESETS["simulate"], default=None)
    common(sp)

    sp = sub.add_parser("equilibrium", help="Newton refinement of an equilibrium")
    sp.add_argument("--M", type=int, default=1000)
    sp.add_argument("--q", type=int, default=5)
    sp.add_argument("--sign", default="attractive", choices=["attractive", "repulsive"])
    sp.add_argument("--r", type=float, default=None)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.0)
    sp.add_argument("--mu", type=float, default=0.0)
    sp.add_argument("--init", default="twisted", choices=["twisted", "z1"],
                    help="start from the twisted state or the first-order branch profile")
    sp.add_argument("--s0", type=float, default=-1e-4)
    sp.add_argument("--max-iter", type=int, default=50)
    sp.add_argument("--tol", type=float, default=1e-12)
    common(sp)

    sp = sub.add_parser("stability-map", help="(r, lambda) stability landscape")
    sp.add_argument("--q", type=int, default=8)
    sp.add_argument("--r", default="0.05:0.5:128", help="r range as lo:hi:n")
    sp.add_argument("--lambda", dest="lam", default="-2:2:128", help="lambda range as lo:hi:n")
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--preset", choices=PRESETS["stability-map"], default=None)
    common(sp)

    sp = sub.add_parser("iota", help="tabulate the strength-trade-off scaling function")
    sp.add_argument("--from", dest="lo", type=float, default=0.3)
    sp.add_argument("--to", dest="hi", type=float, default=3.0)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--preset", choices=PRESETS["iota"], default=None)
    common(sp)

    return parser


_PRESET_VALUES = {
    "fig2": {"q": 5, "lam": 0.0, "mu": 0.0},
    "fig3a": {"q_max": 50},
    "fig3b": {"q_max": 30},
    "fig4": {"q": 8, "r": "0.05:0.5:128", "lam": "-2:2:128"},
    "fig5": {"q": 5, "s0": -1e-4, "M": 1000},
    "fig6": {"M": 1000, "q": 5, "sign": "repulsive", "s": -1e-5,
             "amplitude": 1e-2, "n_runs": 4, "t_end": 2e6},
    "fig7": {"lo": 0.05, "hi": 3.0, "steps": 300},
}


def parse_config(argv, parser=None):
    """Parse flags (plus an optional flat config file) into a RunConfig."""
    parser = parser or _build_parser()
    ns = parser.parse_args(argv)
    if getattr(ns, "config", None):
        file_values = _load_config_file(ns.config)
        known = set(vars(ns))
        unknown = [k for k in file_values if k not in known]
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        # flags override the file: re-parse with file values as defaults
        defaults = {}
        for key, val in file_values.items():
            cur = getattr(ns, key)
            if isinstance(cur, bool):
                defaults[key] = val.lower() in ("1", "true", "yes", "on")
            elif isinstance(cur, int) and not isinstance(cur, bool):
                defaults[key] = int(val)
            elif isinstance(cur, float):
                defaults[key] = float(val)
            else:
                defaults[key] = val
        parser.set_defaults(**defaults)
        ns = parser.parse_args(argv)

    preset = getattr(ns, "preset", None)
    if preset:
        explicit = _explicit_flags(argv)
        for key, val in _PRESET_VALUES[preset].items():
            if key not in explicit:
                setattr(ns, key, val)

    formats = tuple(s.strip() for s in ns.formats.split(",") if s.strip())
    bad = [f for f in formats if f not in ("csv", "json")]
    if bad:
        parser.error(f"unknown report formats: {', '.join(bad)}")

    params = {k: v for k, v in vars(ns).items()
              if k not in ("out", "seed", "threads", "formats", "config", "gnuplot", "command")}
    config = RunConfig(
        command=ns.command,
        parameters=params,
        output_dir=Path(ns.out),
        seed=ns.seed,
        threads=_resolve_threads(ns.threads),
        formats=formats,
        gnuplot=ns.gnuplot,
    )
    _validate(config, parser)
    return config


def _explicit_flags(argv):
    """Long-option names explicitly present on the command line (dest form)."""
    out = set()
    for tok in argv:
        if tok.startswith("--"):
            out.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    if "lambda" in out:
        out.add("lam")
    if "from" in out:
        out.add("lo")
    if "to" in out:
        out.add("hi")
    return out


def _validate(config, parser):
    p = config.parameters

    def check_r(val, name="r"):
        if val is not None and not 0.0 < val <= 0.5:
            parser.error(f"--{name} must lie in (0, 1/2], got {val}")

    if config.command in ("spectrum", "simulate", "equilibrium"):
        check_r(p.get("r"))
    if config.command == "kernel":
        check_r(p.get("r"))
        if p["name"] in ("c3", "c4") and p.get("m") is None:
            parser.error(f"--name {p['name']} requires --m")
    if config.command == "spectrum" and p.get("preset") is None:
        if p.get("q") is None or p.get("r") is None:
            parser.error("spectrum requires --q and --r (or --preset fig2)")
        if p.get("tol") is not None and p["tol"] <= 0:
            parser.error("--tol must be positive")
    if config.command == "gamma" and p.get("preset") is None and p.get("q_max") is None:
        if p.get("q") is None:
            parser.error("gamma requires --q (or --preset / --q-max)")
        if p.get("at") is None and p.get("r0") is None:
            parser.error("gamma requires --at or an explicit --r0")
        check_r(p.get("r0"), "r0")
    if config.command == "stability-map":
        try:
            _parse_range(p["r"])
            _parse_range(p["lam"])
        except ValueError as exc:
            parser.error(str(exc))
    if config.command == "simulate":
        if p.get("r") is None and p.get("s") is None and p.get("preset") is None:
            parser.error("simulate requires --r or --s (or --preset fig6)")


# ---------------------------------------------------------------------------
# command implementations


def _provenance_add(prov, quantity, anchor):
    prov.append([quantity, anchor])


def _run_kernel(cfg):
    p = cfg.parameters
    name = p["name"]
    params = Params(p["r"], p["lam"], p["mu"]) if p.get("r") is not None else None
    need = lambda *keys: [k for k in keys if p.get(k) is None]

    if name == "upsilon0":
        value = kernel.upsilon0()
    elif name == "iota":
        if need("upsilon"):
            raise ValueError("--name iota requires --upsilon")
        value = kernel.iota(p["upsilon"])
    elif name == "w-hat":
        if need("r", "k"):
            raise ValueError("--name w-hat requires --r and --k")
        value = kernel.w_hat(p["r"], p["k"])
    elif name == "tail-limit":
        if need("q") or params is None:
            raise ValueError("--name tail-limit requires --q and --r")
        value = kernel.tail_limit(p["q"], params)
    elif name == "lambda0":
        if need("q", "r"):
            raise ValueError("--name lambda0 requires --q and --r")
        value = kernel.lambda0(p["q"], p["r"])
    elif name == "big-h":
        if need("q", "r"):
            raise ValueError("--name big-h requires --q and --r")
        value = kernel.big_H(p["q"], p["r"])
    elif name == "cap-x":
        if need("q", "r"):
            raise ValueError("--name cap-x requires --q and --r")
        value = kernel.cap_X(p["q"], p["r"])
    elif name == "c1":
        if need("q", "k") or params is None:
            raise ValueError("--name c1 requires --q, --k and --r")
        value = kernel.c1(p["q"], p["k"], params)
    else:  # c2..c6
        if need("q", "k") or params is None:
            raise ValueError(f"--name {name} requires --q, --k and --r")
        value = kernel.coefficient(name, p["q"], p["k"], params, m=p.get("m"))

    results = {"name": name, "value": float(value)}
    csvs = {"kernel": ("name,value", [[name, _fmt(value)]])}
    return results, csvs, []


def _run_spectrum(cfg):
    p = cfg.parameters
    prov = []
    if p.get("preset") == "fig2":
        q = p["q"]
        r_values = np.round(np.arange(0.005, 0.2 + 1e-12, 5e-4), 10)
        k_values = list(range(1, 31))
        rows = []
        for r in r_values:
            vals = kernel.c1(q, np.arange(1, 31), Params(float(r)))
            rows.extend([[_fmt(r), str(k), _fmt(v)] for k, v in zip(k_values, vals)])
        r0a = spectrum.threshold(q, spectrum.ATTRACTIVE_R0)
        r0r = spectrum.threshold(q, spectrum.REPULSIVE_R0)
        results = {"q": q, "r0_attractive": r0a, "r0_repulsive": r0r,
                   "n_r": len(r_values), "k_max": 30}
        _provenance_add(prov, "r0_attractive", "fig2")
        _provenance_add(prov, "r0_repulsive", "fig2")
        csvs = {"fig2": ("r,k,c1", rows)}
        return results, csvs, prov

    q, params = p["q"], Params(p["r"], p["lam"], p["mu"])
    rep = spectrum.spectrum_report(q, params, tol=p["tol"])
    ks, values = rep.ks, rep.values
    if p.get("kmax") not in (None, "auto"):
        kmax = int(p["kmax"])
        ks, values = ks[:kmax], values[:kmax]
    rows = [[str(int(k)), _fmt(v)] for k, v in zip(ks, values)]
    results = {
        "q": q, "r": params.r, "lambda": params.lam, "mu": params.mu,
        "sup_value": rep.sup_value,
        "sup_attained_at": rep.sup_attained_at if rep.sup_attained_at is not None else "tail",
        "tail": rep.tail, "truncation_bound": rep.truncation_bound,
        "modes_listed": len(rows),
    }
    return results, {"spectrum": ("k,c1", rows)}, prov


def _run_thresholds(cfg):
    p = cfg.parameters
    kind = p["kind"]
    prov = []
    if p.get("M"):
        value = ring.finite_threshold(p["q"], p["M"],
                                      ring.ATTRACTIVE if kind == "attractive" else ring.REPULSIVE)
        label = f"{kind}_finite_M{p['M']}"
    else:
        kind_map = {"attractive": spectrum.ATTRACTIVE_R0,
                    "repulsive": spectrum.REPULSIVE_R0,
                    "r-star": spectrum.R_STAR}
        value = spectrum.threshold(p["q"], kind_map[kind])
        label = kind
    if p["q"] == 5 and kind in ("attractive", "repulsive"):
        _provenance_add(prov, "r0", "fig2" if not p.get("M") else "fig6")
    results = {"q": p["q"], "kind": label, "r0": value}
    csvs = {"thresholds": ("q,kind,r0", [[str(p["q"]), label, _fmt(value)]])}
    return results, csvs, prov


def _curve_from_gamma_args(p):
    q = p["q"]
    if p["family"] == "t-family":
        r0 = p.get("r0")
        if r0 is None:
            raise ValueError("t-family requires an explicit --r0")
        return bifurcation.t_family_curve(q, r0, p.get("t", 0.0))
    if p.get("at") == "attractive-threshold":
        r0 = spectrum.threshold(q, spectrum.ATTRACTIVE_R0)
        ell = p.get("ell") or 1
    elif p.get("at") == "repulsive-threshold":
        r0 = spectrum.threshold(q, spectrum.REPULSIVE_R0)
        ell = p.get("ell")
        if ell is None:
            rep = spectrum.spectrum_report(q, Params(r0 + 1e-9), tol=1e-6)
            ell = int(rep.ks[np.argmin(rep.values)])
    else:
        r0, ell = p["r0"], p.get("ell")
        if ell is None:
            vals = kernel.c1(q, np.arange(1, spectrum.mode_cutoff(q, 1e-6) + 1),
                             Params(r0, p["lam"], p["mu"]))
            near = np.nonzero(np.abs(vals) < bifurcation.CROSSING_TOL)[0]
            if len(near) == 0:
                raise ValueError("no near-zero eigenvalue at the given base; pass --ell")
            if len(near) > 1:
                raise ValueError(f"multiple near-zero modes {list(near + 1)}; pass --ell")
            ell = int(near[0]) + 1
    base = Params(r0, p["lam"], p["mu"])
    if p["family"] == "r-linear":
        direction = (1.0, 0.0, 0.0)
    elif p["family"] == "lambda-linear":
        direction = (0.0, 1.0, 0.0)
    else:
        if not p.get("direction"):
            raise ValueError("--family mixed requires --direction dr,dlam,dmu")
        direction = tuple(float(s) for s in p["direction"].split(","))
    return bifurcation.linear_curve(q, ell, base, direction)


def _gamma_ratio_row(q, kind):
    if kind == "attractive":
        r0 = spectrum.threshold(q, spectrum.ATTRACTIVE_R0)
        ell = 1
    else:
        r0 = spectrum.threshold(q, spectrum.REPULSIVE_R0)
        rep = spectrum.spectrum_report(q, Params(r0 + 1e-9), tol=1e-6)
        ell = int(rep.ks[np.argmin(rep.values)])
    report = bifurcation.gamma_pair(bifurcation.linear_curve(q, ell, Params(r0), (1.0, 0.0, 0.0)))
    ratio = report.gamma2 / (report.gamma1 * q)
    return [str(q), str(ell), _fmt(r0), _fmt(report.gamma1), _fmt(report.gamma2), _fmt(ratio)]


def _run_gamma(cfg):
    p = cfg.parameters
    prov = []
    preset = p.get("preset")
    if preset in ("fig3a", "fig3b") or p.get("q_max"):
        kind = "repulsive" if preset == "fig3b" else "attractive"
        q_max = p.get("q_max") or (30 if kind == "repulsive" else 50)
        qs = list(range(2, q_max + 1))
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(lambda q: _gamma_ratio_row(q, kind), qs))
        name = preset or f"gamma-ratio-{kind}"
        _provenance_add(prov, "gamma2/(gamma1*q)", preset or "fig3a")
        results = {"kind": kind, "q_values": qs,
                   "ratio_last": float(rows[-1][5])}
        return results, {name: ("q,ell,r0,gamma1,gamma2,ratio", rows)}, prov

    curve = _curve_from_gamma_args(p)
    report = bifurcation.gamma_pair(curve)
    results = {
        "q": report.q, "ell": report.ell,
        "r0": report.p0.r, "lambda0": report.p0.lam, "mu0": report.p0.mu,
        "gamma1": report.gamma1, "gamma2": report.gamma2,
        "criticality": report.criticality, "branch_side": report.branch_side,
        "kappa_at_bifurcation": report.kappa_at_bifurcation,
        "branch_eig_coefficient": report.branch_eig_coefficient,
        "degenerate_crossing": report.degenerate_crossing,
    }
    rows = [["ell", str(report.ell)],
            ["gamma1", _fmt(report.gamma1)],
            ["gamma2", _fmt(report.gamma2)],
            ["criticality", report.criticality],
            ["branch_side", str(report.branch_side)],
            ["kappa_at_bifurcation", _fmt(report.kappa_at_bifurcation)],
            ["branch_eig_coefficient", _fmt(report.branch_eig_coefficient)]]
    if p.get("s0") is not None:
        amp = bifurcation.a_app(report, p["s0"])
        results["s0"], results["a_app"] = p["s0"], amp
        rows.append(["a_app", _fmt(amp)])
    if p.get("at") == "attractive-threshold":
        _provenance_add(prov, "gamma1", "fig5" if p["q"] == 5 else "fig3a")
        _provenance_add(prov, "gamma2", "fig5" if p["q"] == 5 else "fig3a")
        if p.get("s0") is not None and p["q"] == 5:
            _provenance_add(prov, "a_app", "fig5")
    if p.get("at") == "repulsive-threshold" and p["q"] == 5:
        _provenance_add(prov, "gamma1", "fig6")
        _provenance_add(prov, "gamma2", "fig6")
        if p.get("s0") is not None:
            _provenance_add(prov, "a_app", "fig6")
    return results, {"gamma": ("quantity,value", rows)}, prov


def _branch_setup(q, s0, M):
    r0 = spectrum.threshold(q, spectrum.ATTRACTIVE_R0)
    curve = bifurcation.linear_curve(q, 1, Params(r0), (1.0, 0.0, 0.0))
    report = bifurcation.gamma_pair(curve)
    amp = bifurcation.a_app(report, s0)
    r_m = ring.finite_threshold(q, M, ring.ATTRACTIVE)
    return r0, curve, report, amp, r_m


def _branch_errors(curve, report, s0, M, r_m):
    q = curve.q
    amp = bifurcation.a_app(report, s0)
    z1 = bifurcation.branch_profile(curve, amp, 1, M)
    z2 = bifurcation.branch_profile(curve, amp, 2, M)
    weights = ring.build_weights(M, r_m + s0)
    spec = ring.SystemSpec(Params(r_m + s0))
    eq = ring.newton_equilibrium(z1.values.copy(), spec, weights)
    err1 = float(np.max(np.abs(eq.theta - z1.values)))
    err2 = float(np.max(np.abs(eq.theta - z2.values)))
    return z1, z2, eq, err1, err2


def _run_branch(cfg):
    p = cfg.parameters
    q, s0, M = p["q"], p["s0"], p["M"]
    grid = p.get("grid_size") or M
    prov = []
    r0, curve, report, amp, r_m = _branch_setup(q, s0, M)
    results = {
        "q": q, "s0": s0, "M": M, "r0": r0, "r0_finite": r_m,
        "ell": report.ell, "gamma1": report.gamma1, "gamma2": report.gamma2,
        "a_app": amp, "criticality": report.criticality,
    }
    if q == 5 and abs(s0 + 1e-4) < 1e-12 and M == 1000:
        for name in ("gamma1", "gamma2", "a_app"):
            _provenance_add(prov, name, "fig5")

    z1g = bifurcation.branch_profile(curve, amp, 1, grid)
    z2g = bifurcation.branch_profile(curve, amp, 2, grid)
    psi = 2.0 * math.pi * q * z1g.x
    profile_rows = [[_fmt(x), _fmt(a), _fmt(b), _fmt(c)]
                    for x, a, b, c in zip(z1g.x, psi, z1g.values, z2g.values)]
    csvs = {"branch": ("x,psi_q,z1,z2", profile_rows)}

    _, _, eq, err1, err2 = _branch_errors(curve, report, s0, M, r_m)
    results.update({
        "newton_residual": eq.residual_norm,
        "newton_iterations": eq.iterations,
        "err_z1": err1, "err_z2": err2,
        "z2_coefficient": z2g.z2_coefficient,
    })
    x_lattice = np.arange(M) / M
    csvs["equilibrium"] = ("index,x,theta",
                           [[str(i), _fmt(x_lattice[i]), _fmt(v)] for i, v in enumerate(eq.theta)])

    if p.get("error_scaling"):
        s_values = [-1e-5, -3e-5, -1e-4, -3e-4, -1e-3]

        def one(s):
            _, _, _, e1, e2 = _branch_errors(curve, report, s, M, r_m)
            return [s, bifurcation.a_app(report, s), e1, e2]

        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            err_rows = list(pool.map(one, s_values))
        logs = np.log(np.abs(np.array(s_values)))
        slope1 = float(np.polyfit(logs, np.log([r[2] for r in err_rows]), 1)[0])
        slope2 = float(np.polyfit(logs, np.log([r[3] for r in err_rows]), 1)[0])
        results.update({"error_slope_z1": slope1, "error_slope_z2": slope2})
        csvs["error-scaling"] = ("s,a_app,err_z1,err_z2",
                                 [[_fmt(v) for v in row] for row in err_rows])
    return results, csvs, prov


def _mode_amplitudes(theta, q):
    """Fourier amplitudes of the deviation from the q-twisted profile."""
    M = len(theta)
    diff = ring.wrap_to_pi(theta - ring.twisted_state(M, q))
    spec = np.abs(np.fft.rfft(diff)) * 2.0 / M
    spec[0] /= 2.0
    return diff, spec


def _run_simulate(cfg):
    p = cfg.parameters
    M, q = p["M"], p["q"]
    prov = []
    if p.get("r") is not None:
        r = p["r"]
        r_m = None
    else:
        kind = ring.REPULSIVE if p["sign"] == "repulsive" else ring.ATTRACTIVE
        r_m = ring.finite_threshold(q, M, kind)
        r = r_m + p["s"]
    params = Params(r, p["lam"], p["mu"])
    spec = ring.SystemSpec(params, sign=p["sign"])
    weights = ring.build_weights(M, r)
    base = ring.twisted_state(M, q)

    runs = []
    finals = []
    csvs = {}
    x_lattice = np.arange(M) / M
    n_samples = p.get("samples") or 0
    for i in range(p["n_runs"]):
        seed = cfg.seed + i
        theta0 = ring.perturb(base, p["amplitude"], seed)
        out = ring.integrate(theta0, spec, weights, t_end=p["t_end"], tol=p["tol"],
                             n_samples=n_samples)
        diff, amps = _mode_amplitudes(out.theta, q)
        dominant = int(np.argmax(amps))
        finals.append(out.theta)
        runs.append({
            "seed": seed, "stop_reason": out.stop_reason, "t_reached": out.t_reached,
            "dominant_mode": dominant, "dominant_amplitude": float(amps[dominant]),
            "max_deviation": float(np.max(np.abs(diff))),
        })
        csvs[f"state_run{i}"] = (
            "index,x,theta",
            [[str(j), _fmt(x_lattice[j]), _fmt(v)] for j, v in enumerate(out.theta)],
        )
        if out.samples:
            rows = []
            for t, state in out.samples:
                rows.extend([[_fmt(t), str(j), _fmt(x_lattice[j]), _fmt(v)]
                             for j, v in enumerate(state)])
            csvs[f"trajectory_run{i}"] = ("t,index,x,theta", rows)
    shift_relations = []
    for i in range(len(finals)):
        for j in range(i + 1, len(finals)):
            shift, resid = ring.best_shift_residual(finals[i], finals[j])
            shift_relations.append({"run_a": i, "run_b": j,
                                    "shift": shift, "residual": resid})
    results = {
        "M": M, "q": q, "sign": p["sign"], "r": r, "r0_finite": r_m,
        "lambda": p["lam"], "mu": p["mu"],
        "t_end": p["t_end"], "tol": p["tol"], "amplitude": p["amplitude"],
        "weights_sha256": hashlib.sha256(weights.b.tobytes()).hexdigest()[:16],
        "runs": runs,
        "shift_relations": shift_relations,
    }
    if p.get("preset") == "fig6":
        _provenance_add(prov, "dominant_amplitude", "fig6")
        _provenance_add(prov, "r0_finite", "fig6")
    return results, csvs, prov


def _run_equilibrium(cfg):
    p = cfg.parameters
    M, q = p["M"], p["q"]
    if p.get("r") is not None:
        r = p["r"]
    else:
        r = ring.finite_threshold(q, M, ring.ATTRACTIVE) + p["s0"]
    params = Params(r, p["lam"], p["mu"])
    spec = ring.SystemSpec(params, sign=p["sign"])
    weights = ring.build_weights(M, r)
    if p["init"] == "twisted":
        theta0 = ring.twisted_state(M, q)
    else:
        r0 = spectrum.threshold(q, spectrum.ATTRACTIVE_R0)
        curve = bifurcation.linear_curve(q, 1, Params(r0), (1.0, 0.0, 0.0))
        report = bifurcation.gamma_pair(curve)
        amp = bifurcation.a_app(report, p["s0"])
        theta0 = bifurcation.branch_profile(curve, amp, 1, M).values.copy()
    eq = ring.newton_equilibrium(theta0, spec, weights,
                                 max_iter=p["max_iter"], tol=p["tol"])
    x_lattice = np.arange(M) / M
    results = {
        "M": M, "q": q, "r": r, "sign": p["sign"],
        "residual_norm": eq.residual_norm, "iterations": eq.iterations,
        "leading_eigenvalues": [float(v) for v in eq.jacobian_leading_eigs],
    }
    csvs = {"equilibrium": ("index,x,theta",
                            [[str(i), _fmt(x_lattice[i]), _fmt(v)]
                             for i, v in enumerate(eq.theta)])}
    return results, csvs, []


def _run_stability_map(cfg):
    p = cfg.parameters
    q = p["q"]
    r_lo, r_hi, n_r = _parse_range(p["r"])
    l_lo, l_hi, n_l = _parse_range(p["lam"])
    prov = []
    # columns are independent; compute in parallel, merge in input order
    r_values = np.linspace(r_lo, r_hi, n_r)
    lambda_values = np.linspace(l_lo, l_hi, n_l)

    def column(i):
        return bifurcation.stability_column(q, float(r_values[i]), lambda_values,
                                            tol=p["tol"])

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        cols = list(pool.map(column, range(n_r)))

    grid_rows, boundary_rows, flags = [], [], []
    for i, (col, point, flag) in enumerate(cols):
        for j, lam in enumerate(lambda_values):
            grid_rows.append([_fmt(r_values[i]), _fmt(lam), _fmt(col[j])])
        if point is not None:
            boundary_rows.append([_fmt(r_values[i]), _fmt(point.lam), str(point.ell),
                                  point.criticality, _fmt(point.gamma1), _fmt(point.gamma2)])
        if flag is not None:
            flags.append([_fmt(r_values[i]), flag[1]])
    results = {"q": q, "n_r": n_r, "n_lambda": n_l,
               "boundary_points": len(boundary_rows), "flagged_columns": len(flags)}
    if p.get("preset") == "fig4":
        _provenance_add(prov, "boundary", "fig4")
    csvs = {"grid": ("r,lambda,max_eigenvalue", grid_rows),
            "boundary": ("r,lambda0,ell,criticality,gamma1,gamma2", boundary_rows)}
    if flags:
        csvs["flags"] = ("r,reason", flags)
    return results, csvs, prov


def _run_iota(cfg):
    p = cfg.parameters
    u = np.linspace(p["lo"], p["hi"], p["steps"])
    vals = kernel.iota(u)
    rows = [[_fmt(a), _fmt(b)] for a, b in zip(u, vals)]
    u0 = kernel.upsilon0()
    above = vals[u >= u0]
    results = {"from": p["lo"], "to": p["hi"], "steps": p["steps"],
               "upsilon0": u0,
               "min_above_upsilon0": float(above.min()) if len(above) else None,
               "all_positive_above_upsilon0": bool((above > 0).all()) if len(above) else None}
    prov = []
    if p.get("preset") == "fig7":
        _provenance_add(prov, "iota", "fig7")
    return results, {"iota": ("upsilon,iota", rows)}, prov


_RUNNERS = {
    "kernel": _run_kernel,
    "spectrum": _run_spectrum,
    "thresholds": _run_thresholds,
    "gamma": _run_gamma,
    "branch": _run_branch,
    "simulate": _run_simulate,
    "equilibrium": _run_equilibrium,
    "stability-map": _run_stability_map,
    "iota": _run_iota,
}


def _gnuplot_for(cfg, csvs):
    preset = cfg.parameters.get("preset")
    if not preset or not cfg.gnuplot:
        return ""
    name = next(iter(csvs))
    path = f"{name}.csv"
    return "\n".join([
        "set datafile separator ','",
        f"set title '{preset}'",
        "set key off",
        f"plot '{path}' every ::1 using 1:2 with lines",
        "",
    ])


def execute(config):
    """Dispatch a validated RunConfig to its command implementation."""
    results, csvs, prov = _RUNNERS[config.command](config)
    return ReportEnvelope(config=config, results=results, provenance=prov,
                          csv_files=csvs, gnuplot_script=_gnuplot_for(config, csvs))


def _config_echo(cfg):
    params = {}
    for k, v in sorted(cfg.parameters.items()):
        if isinstance(v, Path):
            v = str(v)
        params[k] = v
    return {
        "command": cfg.command,
        "parameters": params,
        "output_dir": str(cfg.output_dir),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "formats": list(cfg.formats),
    }


def write_report(envelope, output_dir=None):
    """Write the JSON envelope (always) and the per-command CSV files."""
    cfg = envelope.config
    out = Path(output_dir) if output_dir is not None else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema": 1,
        "tool_version": __version__,
        "command": cfg.command,
        "config": _config_echo(cfg),
        "results": envelope.results,
        "provenance": envelope.provenance,
    }
    written = []
    json_path = out / f"{cfg.command}.json"
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    written.append(json_path)
    if "csv" in cfg.formats:
        for name, (header, rows) in envelope.csv_files.items():
            path = out / f"{name}.csv"
            lines = [header] + [",".join(row) for row in rows]
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
    if envelope.gnuplot_script:
        gp = out / f"{cfg.parameters.get('preset', cfg.command)}.gp"
        gp.write_text(envelope.gnuplot_script)
        written.append(gp)
    return written


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        config = parse_config(argv, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        envelope = execute(config)
        written = write_report(envelope)
    except DomainError as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
