"""Command line front end: sampling, exact values, and validation reports.

Six subcommands, each a thin veneer over the public operations of one
area of the library:

    sample    coalescent histories and mutation spectra
    exact     closed-form rates, speeds, and classification verdicts
    check     stochastic cross-validation reports (diffusion duality)
    popmodel  finite-population ancestry diagnostics
    spatial   particle systems on the discrete torus
    csbp      branching-process flows, extinction, and paths

Every run is reproducible: the output depends only on the parsed
configuration, so repeating a command gives byte-identical text. The
seed comes from --seed, falling back to the COALKIT_SEED environment
variable, then to zero. Replicated sampling hands substream i to
replicate i, which keeps --threads runs identical to serial ones and
makes the result independent of scheduling.

Reports embed a metadata block recording the package version, the model
string, the seed and stream, the library operation that produced the
numbers, and the numeric tolerances in force. JSON output is sorted by
key; CSV output opens with '# key=value' comment lines and then the
schema header row, which is present even when there are no data rows.
Non-finite floats serialize as the strings "inf", "-inf", and "nan".

Exit codes: 0 on success, 2 for unusable arguments (unknown flags, a
model string the measure grammar rejects, a missing required option, an
unsupported output format), 3 for numeric failures inside the
computation (domain errors, non-convergence, overflow), 4 when the
output path cannot be written.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from . import __version__
from . import lambda_coalescent as lc
from .bolthausen import simulate_bs_rrt
from .csbp import (
    BranchingMechanism,
    extinction_prob,
    feller_mechanism,
    feller_simulate,
    grey_test,
    lamperti_csbp,
    mechanism_from_lambda,
    neveu_mechanism,
    u_t_lambda,
)
from .kingman import simulate_kingman
from .mutation import site_spectrum, throw_mutations
from .numerics import (
    EXACT_TOL,
    IMPROPER_TOL,
    NumericsError,
    RNG_ALGORITHM,
    RngStream,
)
from .partitions import expected_blocks_ewens
from .popmodels import (
    GwSpec,
    cannings_diagnostics,
    duality_check,
    gw_cannings,
    gw_cn_prediction,
    moran_cannings,
    wf_absorption,
    wf_cannings,
)
from .spatial import (
    TorusConfig,
    arratia_dispersion_test,
    origin_escape_count,
    simulate_crw,
)

_MECHANISM_NAMES = ("feller", "neveu")

# Namespace attributes that map onto named RunConfig fields; everything
# else lands in the options dict.
_CORE_ARGS = frozenset(
    {"command", "action", "model", "seed", "stream", "out", "format",
     "n", "N", "reps", "threads", "t"}
)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Parsed invocation: everything a run's output depends on.

    ``format`` is already resolved (never None), ``seed`` fits in 64
    bits, and ``model_spec`` has passed the measure grammar (or names a
    built-in branching mechanism under the csbp command). Extra
    subcommand flags live in ``options``.
    """

    command: str
    action: str
    model_spec: str | None
    n: int | None
    reps: int
    seed: int
    stream: int
    t: float | None
    output_path: str | None
    format: str
    threads: int
    options: dict

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.format not in ("json", "csv"):
            raise ValueError(f"unknown output format {self.format!r}")


@dataclasses.dataclass(frozen=True)
class Report:
    """What a handler hands back: metadata plus both renderings.

    ``body`` extends the JSON payload next to the meta block. CSV
    support is optional; actions without a tabular schema leave
    ``csv_header`` as None.
    """

    meta: dict
    body: dict
    csv_header: str | None = None
    csv_rows: tuple[str, ...] = ()


def _jsonable(value):
    """Recursively coerce to types json.dumps renders deterministically."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _meta_text(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (dict, list, tuple)):
        return json.dumps(_jsonable(value), sort_keys=True, separators=(",", ":"))
    return str(_jsonable(value))


def emit_report(report: Report, fmt: str) -> str:
    """Render a report as JSON text or commented CSV text."""
    if fmt == "json":
        payload = {"meta": _jsonable(report.meta)}
        payload.update(_jsonable(report.body))
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if report.csv_header is None:
        raise ValueError("this report has no CSV rendering")
    lines = [f"# {k}={_meta_text(v)}" for k, v in sorted(report.meta.items())]
    lines.append(report.csv_header)
    lines.extend(report.csv_rows)
    return "\n".join(lines) + "\n"


def _meta(cfg: RunConfig, op: str, stochastic: bool) -> dict:
    meta = {
        "command": f"{cfg.command} {cfg.action}",
        "model": cfg.model_spec if cfg.model_spec else "none",
        "op": op,
        "seed": cfg.seed,
        "stream_id": cfg.stream,
        "tolerances": {"exact": EXACT_TOL, "improper": IMPROPER_TOL},
        "version": __version__,
    }
    if stochastic:
        meta["rng"] = RNG_ALGORITHM
    return meta


# ---------------------------------------------------------------------------
# sample


def _history_sampler(model: str) -> tuple[str, Callable]:
    """Pick the sampler for a model string; returns (op name, draw fn)."""
    m = lc.parse_measure(model)
    if m.spec_string == "kingman":
        return "kingman.simulate_kingman", (
            lambda n, g, tm, info: simulate_kingman(n, g, tm, info)
        )
    if m.spec_string == "bs":
        return "bolthausen.simulate_bs_rrt", (
            lambda n, g, tm, info: simulate_bs_rrt(n, g, tm, info)
        )
    return "lambda_coalescent.simulate_lambda", (
        lambda n, g, tm, info: lc.simulate_lambda(m, n, g, tm, info)
    )


def _run_sample_history(cfg: RunConfig) -> Report:
    op, draw = _history_sampler(cfg.model_spec)
    t_max = math.inf if cfg.t is None else cfg.t
    base = RngStream(cfg.seed, cfg.stream)

    def one(i: int) -> dict:
        sub = base.substream(i)
        info = dict(sub.metadata())
        info["replicate"] = i
        h = draw(cfg.n, sub.generator(), t_max, info)
        return {
            "n": h.n,
            "model": h.model,
            "seed_info": h.seed_info,
            "events": [{"t": e.t, "merge": list(e.merge)} for e in h.events],
        }

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            histories = list(pool.map(one, range(cfg.reps)))
    else:
        histories = [one(i) for i in range(cfg.reps)]
    meta = _meta(cfg, op, True)
    meta["reps"] = cfg.reps
    return Report(meta=meta, body={"histories": histories})


def _run_sample_spectrum(cfg: RunConfig) -> Report:
    op, draw = _history_sampler(cfg.model_spec)
    rho = cfg.options["rho"]
    base = RngStream(cfg.seed, cfg.stream)
    totals = np.zeros(cfg.n + 1, dtype=np.int64)
    for i in range(cfg.reps):
        sub = base.substream(i)
        info = dict(sub.metadata())
        info["replicate"] = i
        g = sub.generator()
        h = draw(cfg.n, g, math.inf, info)
        marks = throw_mutations(h, rho, g)
        totals += np.asarray(site_spectrum(h, marks).M, dtype=np.int64)
    theta = 2.0 * rho
    js = list(range(1, cfg.n + 1))
    expected = [cfg.reps * theta / j for j in js]
    meta = _meta(cfg, op + "+mutation.site_spectrum", True)
    meta["reps"] = cfg.reps
    meta["rho"] = rho
    body = {
        "spectrum": {
            "j": js,
            "M_j": [int(totals[j]) for j in js],
            "expected": expected,
        }
    }
    rows = tuple(
        f"{j},{int(totals[j])},{cfg.reps * theta / j:.10g}" for j in js
    )
    return Report(meta, body, "j,M_j,expected", rows)


# ---------------------------------------------------------------------------
# exact


def _run_exact_rates(cfg: RunConfig) -> Report:
    m = lc.parse_measure(cfg.model_spec)
    b, k = cfg.options["b"], cfg.options["k"]
    value = lc.lambda_bk(m, b, k)
    return Report(_meta(cfg, "lambda_coalescent.lambda_bk", False),
                  {"b": b, "k": k, "value": value})


def _run_exact_speed(cfg: RunConfig) -> Report:
    m = lc.parse_measure(cfg.model_spec)
    value = lc.speed_v(m, cfg.t)
    return Report(_meta(cfg, "lambda_coalescent.speed_v", False),
                  {"t": cfg.t, "value": value})


def _run_exact_psi(cfg: RunConfig) -> Report:
    m = lc.parse_measure(cfg.model_spec)
    q = cfg.options["q"]
    value = lc.psi(m, q)
    return Report(_meta(cfg, "lambda_coalescent.psi", False),
                  {"q": q, "value": value})


def _run_exact_cdi(cfg: RunConfig) -> Report:
    rep = lc.cdi_test(lc.parse_measure(cfg.model_spec))
    body = {
        "verdict": rep.verdict,
        "sum_route": {
            "verdict": rep.sum_route_verdict,
            "partial_sum": rep.sum_route_partial,
        },
        "integral_route": {
            "verdict": rep.integral_route_verdict,
            "value": rep.integral_route.value,
            "diverges": rep.integral_route.diverges,
        },
        "heuristic": rep.heuristic,
    }
    return Report(_meta(cfg, "lambda_coalescent.cdi_test", False), body)


def _run_exact_dust(cfg: RunConfig) -> Report:
    rep = lc.dust_test(lc.parse_measure(cfg.model_spec))
    body = {
        "verdict": rep.verdict,
        "certificate": rep.certificate,
        "integral_value": rep.integral_value,
    }
    return Report(_meta(cfg, "lambda_coalescent.dust_test", False), body)


# ---------------------------------------------------------------------------
# check


def _run_check_duality(cfg: RunConfig) -> Report:
    o = cfg.options
    rng = RngStream(cfg.seed, cfg.stream).generator()
    rows = duality_check(o["p"], cfg.t, cfg.n, cfg.reps, rng, dt=o["dt"])
    meta = _meta(cfg, "popmodels.duality_check", True)
    meta["reps"] = cfg.reps
    meta["dt"] = o["dt"]
    body = {
        "rows": [dataclasses.asdict(r) for r in rows],
        "max_abs_z": max(abs(r.z) for r in rows),
    }
    csv_rows = tuple(
        f"{r.n},{r.lhs:.10g},{r.lhs_se:.10g},{r.rhs:.10g},{r.z:.10g}"
        for r in rows
    )
    return Report(meta, body, "n,lhs,lhs_se,rhs,z", csv_rows)


# ---------------------------------------------------------------------------
# popmodel


def _cannings_report(cfg: RunConfig, spec, prediction: float, op: str) -> Report:
    rng = RngStream(cfg.seed, cfg.stream).generator()
    diag = cannings_diagnostics(spec, cfg.reps, rng)
    meta = _meta(cfg, op, True)
    meta["reps"] = cfg.reps
    body = dataclasses.asdict(diag)
    body["prediction"] = prediction
    row = f"{diag.N},{diag.c_n_hat:.10g},{diag.c_n_se:.10g},{prediction:.10g}"
    return Report(meta, body, "N,c_N_hat,se,prediction", (row,))


def _run_popmodel_cannings(cfg: RunConfig) -> Report:
    family = cfg.options["family"]
    if family == "wf":
        spec, pred = wf_cannings(cfg.n), 1.0 / cfg.n
    else:
        spec, pred = moran_cannings(cfg.n), 2.0 / (cfg.n * (cfg.n - 1))
    rep = _cannings_report(cfg, spec, pred, "popmodels.cannings_diagnostics")
    rep.meta["family"] = family
    return rep


def _run_popmodel_gw(cfg: RunConfig) -> Report:
    o = cfg.options
    spec = GwSpec(N=cfg.n, tail_index=o["alpha"], tail_constant=o["c"],
                  mean=o["mu"])
    constant = gw_cn_prediction(spec)
    pred = constant * cfg.n ** (1.0 - o["alpha"])
    rep = _cannings_report(cfg, gw_cannings(spec),
                           pred, "popmodels.gw_cannings+cannings_diagnostics")
    rep.body["prediction_constant"] = constant
    rep.meta["tail_index"] = o["alpha"]
    return rep


def _run_popmodel_diffusion(cfg: RunConfig) -> Report:
    o = cfg.options
    horizon = 16.0 if cfg.t is None else cfg.t
    rng = RngStream(cfg.seed, cfg.stream).generator()
    t_abs, hit = wf_absorption(o["p0"], o["dt"], cfg.reps, rng, horizon=horizon)
    done = np.isfinite(t_abs)
    n_done = int(done.sum())
    if n_done > 1:
        mean_t = float(np.mean(t_abs[done]))
        se_t = float(np.std(t_abs[done], ddof=1) / math.sqrt(n_done))
        fix = float(np.mean(hit[done]))
        se_fix = math.sqrt(max(fix * (1.0 - fix), 1e-12) / n_done)
    else:
        mean_t = se_t = fix = se_fix = float("nan")
    meta = _meta(cfg, "popmodels.wf_absorption", True)
    meta["reps"] = cfg.reps
    meta["dt"] = o["dt"]
    body = {
        "p0": o["p0"],
        "horizon": horizon,
        "absorbed": n_done,
        "censored": cfg.reps - n_done,
        "mean_absorption_time": mean_t,
        "absorption_time_se": se_t,
        "fixation_fraction": fix,
        "fixation_se": se_fix,
    }
    return Report(meta, body)


# ---------------------------------------------------------------------------
# spatial


def _run_spatial_crw(cfg: RunConfig) -> Report:
    o = cfg.options
    tc = TorusConfig(d=o["d"], L=o["L"], walk_rate=o["rho"])
    rng = RngStream(cfg.seed, cfg.stream).generator()
    series, final = simulate_crw(tc, "full", cfg.t, rng, o["grid_points"])
    meta = _meta(cfg, "spatial.simulate_crw", True)
    body = {
        "config": {"d": tc.d, "L": tc.L, "walk_rate": tc.walk_rate},
        "density": {
            "t": series.times,
            "particle_count": series.counts,
            "density": series.density,
        },
        "final": json.loads(final.to_json()),
    }
    lines = series.to_csv().strip().split("\n")
    return Report(meta, body, lines[0], tuple(lines[1:]))


def _run_spatial_escape(cfg: RunConfig) -> Report:
    o = cfg.options
    m = lc.parse_measure(cfg.model_spec) if cfg.model_spec else None
    # Geometry never enters the count, only the walk rate does.
    tc = TorusConfig(d=1, L=2, walk_rate=o["rho"])
    rng = RngStream(cfg.seed, cfg.stream).generator()
    counts = origin_escape_count(tc, cfg.n, cfg.reps, rng, m)
    mass = m.kingman_mass if m is not None else 1.0
    theta = 2.0 * o["rho"] / mass
    expected = expected_blocks_ewens(cfg.n, theta)
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(cfg.reps))
    meta = _meta(cfg, "spatial.origin_escape_count", True)
    meta["reps"] = cfg.reps
    body = {
        "n": cfg.n,
        "theta": theta,
        "mean": mean,
        "se": se,
        "expected_mean": expected,
        "z": (mean - expected) / se if se > 0.0 else float("nan"),
    }
    return Report(meta, body)


def _run_spatial_disperse(cfg: RunConfig) -> Report:
    o = cfg.options
    tc = TorusConfig(d=o["d"], L=o["L"], walk_rate=o["rho"])
    rng = RngStream(cfg.seed, cfg.stream).generator()
    rep = arratia_dispersion_test(tc, cfg.t, rng)
    meta = _meta(cfg, "spatial.arratia_dispersion_test", True)
    body = {
        "statistic": rep.statistic,
        "dof": rep.dof,
        "dispersion_index": rep.statistic / rep.dof,
        "p_value": rep.p_value,
    }
    return Report(meta, body)


# ---------------------------------------------------------------------------
# csbp


def _mechanism(spec: str) -> BranchingMechanism:
    if spec == "feller":
        return feller_mechanism()
    if spec == "neveu":
        return neveu_mechanism()
    return mechanism_from_lambda(lc.parse_measure(spec))


def _run_csbp_flow(cfg: RunConfig) -> Report:
    o = cfg.options
    mech = _mechanism(cfg.model_spec)
    value = u_t_lambda(mech, cfg.t, o["lam"], route=o["route"])
    meta = _meta(cfg, "csbp.u_t_lambda", False)
    return Report(meta, {"t": cfg.t, "lam": o["lam"], "route": o["route"],
                         "value": value})


def _run_csbp_grey(cfg: RunConfig) -> Report:
    rep = grey_test(_mechanism(cfg.model_spec))
    meta = _meta(cfg, "csbp.grey_test", False)
    return Report(meta, {"verdict": rep.verdict, "certificate": rep.certificate})


def _run_csbp_extinction(cfg: RunConfig) -> Report:
    o = cfg.options
    value = extinction_prob(_mechanism(cfg.model_spec), o["z"], cfg.t)
    meta = _meta(cfg, "csbp.extinction_prob", False)
    return Report(meta, {"z": o["z"], "t": cfg.t, "value": value})


def _run_csbp_simulate(cfg: RunConfig) -> Report:
    o = cfg.options
    rng = RngStream(cfg.seed, cfg.stream).generator()
    if cfg.model_spec == "feller":
        path = feller_simulate(o["z0"], o["dt"], cfg.t, rng)
        op = "csbp.feller_simulate"
    elif cfg.model_spec == "neveu":
        raise ValueError(
            "no exact path sampler for the neveu mechanism; "
            "use feller or a purely atomic measure"
        )
    else:
        m = lc.parse_measure(cfg.model_spec)
        path = lamperti_csbp(m, o["z0"], cfg.t, rng)
        op = "csbp.lamperti_csbp"
    meta = _meta(cfg, op, True)
    meta["z0"] = o["z0"]
    body = {
        "times": path.times,
        "masses": path.masses,
        "extinction_time": path.extinction_time,
    }
    lines = path.to_csv().strip().split("\n")
    return Report(meta, body, lines[0], tuple(lines[1:]))


# ---------------------------------------------------------------------------
# wiring

_ACTIONS: dict[tuple[str, str], tuple[Callable[[RunConfig], Report],
                                      tuple[str, ...], str]] = {
    ("sample", "history"): (_run_sample_history, ("json",), "json"),
    ("sample", "spectrum"): (_run_sample_spectrum, ("json", "csv"), "csv"),
    ("exact", "rates"): (_run_exact_rates, ("json",), "json"),
    ("exact", "speed"): (_run_exact_speed, ("json",), "json"),
    ("exact", "psi"): (_run_exact_psi, ("json",), "json"),
    ("exact", "cdi"): (_run_exact_cdi, ("json",), "json"),
    ("exact", "dust"): (_run_exact_dust, ("json",), "json"),
    ("check", "duality"): (_run_check_duality, ("json", "csv"), "json"),
    ("popmodel", "cannings"): (_run_popmodel_cannings, ("json", "csv"), "csv"),
    ("popmodel", "gw"): (_run_popmodel_gw, ("json", "csv"), "csv"),
    ("popmodel", "diffusion"): (_run_popmodel_diffusion, ("json",), "json"),
    ("spatial", "crw"): (_run_spatial_crw, ("json", "csv"), "csv"),
    ("spatial", "escape"): (_run_spatial_escape, ("json",), "json"),
    ("spatial", "disperse"): (_run_spatial_disperse, ("json",), "json"),
    ("csbp", "flow"): (_run_csbp_flow, ("json",), "json"),
    ("csbp", "grey"): (_run_csbp_grey, ("json",), "json"),
    ("csbp", "extinction"): (_run_csbp_extinction, ("json",), "json"),
    ("csbp", "simulate"): (_run_csbp_simulate, ("json", "csv"), "csv"),
}

_REQUIRED: dict[tuple[str, str], tuple[str, ...]] = {
    ("sample", "history"): ("model", "n"),
    ("sample", "spectrum"): ("model", "n", "rho"),
    ("exact", "rates"): ("model", "b", "k"),
    ("exact", "speed"): ("model", "t"),
    ("exact", "psi"): ("model", "q"),
    ("exact", "cdi"): ("model",),
    ("exact", "dust"): ("model",),
    ("check", "duality"): ("p", "t", "n"),
    ("popmodel", "cannings"): ("family", "N"),
    ("popmodel", "gw"): ("alpha", "N"),
    ("popmodel", "diffusion"): ("p0",),
    ("spatial", "crw"): ("d", "L", "t"),
    ("spatial", "escape"): ("n",),
    ("spatial", "disperse"): ("d", "L", "t"),
    ("csbp", "flow"): ("model", "t", "lam"),
    ("csbp", "grey"): ("model",),
    ("csbp", "extinction"): ("model", "z", "t"),
    ("csbp", "simulate"): ("model", "z0", "t"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coalkit",
        description="Coalescent and branching-process workbench.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add_io(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--seed", type=int, default=None,
                        help="RNG seed; falls back to COALKIT_SEED, then 0")
        sp.add_argument("--stream", type=int, default=0,
                        help="RNG stream id; distinct ids give independent runs")
        sp.add_argument("--out", default=None,
                        help="output path (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default=None,
                        help="output format (default depends on the action)")

    measure_help = ("measure string: kingman | bs | beta:A | dirac:X | "
                    "mix:... | sweep:[(a,s,r),...]")

    sp = sub.add_parser(
        "sample", help="draw coalescent histories or a mutation spectrum")
    sp.add_argument("action", nargs="?", choices=("history", "spectrum"),
                    default="history")
    sp.add_argument("--model", help=measure_help)
    sp.add_argument("--n", type=int, help="number of starting lineages")
    sp.add_argument("--reps", type=int, default=1, help="replicates")
    sp.add_argument("--t", type=float, default=None,
                    help="stop time for histories (spectrum always runs to "
                         "the root)")
    sp.add_argument("--rho", type=float, default=None,
                    help="mutation rate per unit branch length (spectrum)")
    sp.add_argument("--threads", type=int, default=1,
                    help="worker threads over replicates; the output does "
                         "not depend on the count")
    add_io(sp)

    sp = sub.add_parser("exact", help="closed-form values and verdicts")
    sp.add_argument("action", nargs="?", default=None,
                    choices=("rates", "speed", "psi", "cdi", "dust"))
    sp.add_argument("--model", help=measure_help)
    sp.add_argument("--b", type=int, help="current number of blocks (rates)")
    sp.add_argument("--k", type=int, help="merger size (rates)")
    sp.add_argument("--t", type=float, help="time at which to evaluate (speed)")
    sp.add_argument("--q", type=float, help="argument of the mechanism (psi)")
    add_io(sp)

    sp = sub.add_parser(
        "check", help="stochastic cross-validation against exact values")
    sp.add_argument("action", nargs="?", default=None, choices=("duality",))
    sp.add_argument("--p", type=float, help="initial allele frequency")
    sp.add_argument("--t", type=float, help="comparison time")
    sp.add_argument("--n", type=int, help="largest moment order to compare")
    sp.add_argument("--reps", type=int, default=100000,
                    help="diffusion replicates")
    sp.add_argument("--dt", type=float, default=2e-4,
                    help="Euler step; keep the bias below the Monte Carlo "
                         "error at the chosen replicate count")
    add_io(sp)

    sp = sub.add_parser(
        "popmodel", help="finite-population offspring diagnostics")
    sp.add_argument("action", nargs="?", default=None,
                    choices=("cannings", "gw", "diffusion"))
    sp.add_argument("--family", choices=("wf", "moran"),
                    help="exchangeable offspring family (cannings)")
    sp.add_argument("--N", dest="N", type=int, help="population size")
    sp.add_argument("--alpha", type=float,
                    help="offspring tail index in (1, 2] (gw)")
    sp.add_argument("--c", type=float, default=1.0,
                    help="offspring tail constant (gw)")
    sp.add_argument("--mu", type=float, default=2.0,
                    help="offspring mean, above 1 (gw)")
    sp.add_argument("--p0", type=float,
                    help="starting frequency (diffusion)")
    sp.add_argument("--dt", type=float, default=1e-3,
                    help="Euler step (diffusion)")
    sp.add_argument("--t", type=float, default=None,
                    help="horizon before censoring (diffusion; default 16)")
    sp.add_argument("--reps", type=int, default=2000, help="replicates")
    add_io(sp)

    sp = sub.add_parser("spatial", help="particle systems on the torus")
    sp.add_argument("action", nargs="?", default=None,
                    choices=("crw", "escape", "disperse"))
    sp.add_argument("--d", type=int, help="dimension (1, 2, or 3)")
    sp.add_argument("--L", dest="L", type=int, help="side length")
    sp.add_argument("--rho", type=float, default=1.0, help="walk rate")
    sp.add_argument("--t", type=float, help="horizon")
    sp.add_argument("--n", type=int,
                    help="particles started at the origin (escape)")
    sp.add_argument("--model", help="optional pure-kingman measure (escape); "
                                    "scales the pair-merger rate")
    sp.add_argument("--grid-points", dest="grid_points", type=int, default=41,
                    help="density readout points (crw)")
    sp.add_argument("--reps", type=int, default=1000, help="replicates (escape)")
    add_io(sp)

    sp = sub.add_parser(
        "csbp", help="continuous-state branching: flows, extinction, paths")
    sp.add_argument("action", nargs="?", default=None,
                    choices=("flow", "grey", "extinction", "simulate"))
    sp.add_argument("--model",
                    help="mechanism: feller | neveu | " + measure_help)
    sp.add_argument("--t", type=float, help="time horizon")
    sp.add_argument("--lam", type=float, help="initial Laplace argument (flow)")
    sp.add_argument("--route", choices=("auto", "ode", "integral"),
                    default="auto", help="flow solver (flow)")
    sp.add_argument("--z", type=float, help="initial mass (extinction)")
    sp.add_argument("--z0", type=float, help="initial mass (simulate)")
    sp.add_argument("--dt", type=float, default=1e-3,
                    help="Euler step for the feller path (simulate)")
    add_io(sp)

    return parser


def _resolve_seed(value: int | None) -> int:
    if value is None:
        raw = os.environ.get("COALKIT_SEED")
        if raw is None:
            return 0
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"COALKIT_SEED is not an integer: {raw!r}")
    if not 0 <= value < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return value


def _validate_model(command: str, text: str) -> None:
    if command == "csbp" and text in _MECHANISM_NAMES:
        return
    try:
        lc.parse_measure(text)
    except ValueError as exc:
        raise ValueError(f"bad model string {text!r}: {exc}")


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    command = args.command
    action = getattr(args, "action", None)
    if action is None:
        choices = sorted(a for c, a in _ACTIONS if c == command)
        raise ValueError(
            f"{command} needs an action: one of {', '.join(choices)}")
    key = (command, action)
    for name in _REQUIRED[key]:
        if getattr(args, name, None) is None:
            raise ValueError(f"{command} {action} requires --{name}")
    model = getattr(args, "model", None)
    if model is not None:
        _validate_model(command, model)
    _handler, formats, default_format = _ACTIONS[key]
    fmt = args.format if args.format is not None else default_format
    if fmt not in formats:
        raise ValueError(f"{command} {action} does not support {fmt} output")
    n = getattr(args, "n", None)
    if n is None:
        n = getattr(args, "N", None)
    options = {k: v for k, v in vars(args).items() if k not in _CORE_ARGS}
    return RunConfig(
        command=command,
        action=action,
        model_spec=model,
        n=n,
        reps=getattr(args, "reps", 1),
        seed=_resolve_seed(args.seed),
        stream=args.stream,
        t=getattr(args, "t", None),
        output_path=args.out,
        format=fmt,
        threads=getattr(args, "threads", 1),
        options=options,
    )


def _write_text(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def dispatch(cfg: RunConfig) -> int:
    """Run one parsed invocation; returns the process exit status."""
    handler, _formats, _default = _ACTIONS[(cfg.command, cfg.action)]
    try:
        report = handler(cfg)
        text = emit_report(report, cfg.format)
    except (ValueError, ArithmeticError, NumericsError, RuntimeError) as exc:
        print(f"coalkit: numeric failure: {exc}", file=sys.stderr)
        return 3
    try:
        _write_text(text, cfg.output_path)
    except OSError as exc:
        print(f"coalkit: cannot write {cfg.output_path}: {exc}",
              file=sys.stderr)
        return 4
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help.
        code = exc.code if isinstance(exc.code, int) else 2
        return 0 if code == 0 else 2
    try:
        cfg = run_config_from_args(args)
    except ValueError as exc:
        print(f"coalkit: {exc}", file=sys.stderr)
        return 2
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
