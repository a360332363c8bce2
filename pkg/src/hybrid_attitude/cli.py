"""
Command-line entry point.

``hybrid-attitude simulate``, ``gains-check`` and ``iss-study`` all read a
YAML scenario (the bundled noise-free one when ``--config`` is omitted).
Exit codes: 0 success, 2 configuration error, 3 failed check, 4 runtime or
I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .analysis import (
    ConvergenceReport,
    MetricSeries,
    compute_metrics,
    convergence_report,
    iss_study,
    plot_comparison,
)
from .config import OBSERVER_KINDS, ScenarioConfig, bundled_config, load_config
from .csvio import flatten_columns, write_csv
from .exceptions import ConfigError, HybridAttitudeError, Infeasible, KvOutOfRange
from .gains import (
    build_blocks,
    build_q,
    certify_lmi,
    check_lemma3,
    prop3_bound,
    prop3_check,
    real_eigenvalue_range,
    spectral_radius,
    spectral_radius_feasible,
    verify_certificate,
)
from .observers import ContinuousObserver, HybridObserver, HybridTrace, ReducedObserver
from .world import (
    EventLog,
    ImuLog,
    TruthLog,
    emit_events,
    emit_imu,
    generate_schedule,
    propagate_truth,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_RUNTIME = 4

log = logging.getLogger("hybrid_attitude")

_XYZ = ["x", "y", "z"]


def package_version() -> str:
    try:
        return version("hybrid-attitude")
    except PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------------------
# scenario runs


@dataclass
class ObserverRun:
    name: str
    estimator: object
    series: MetricSeries
    report: ConvergenceReport
    seconds: float


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    truth: TruthLog
    imu: ImuLog
    events: EventLog
    dense_events: EventLog | None
    runs: dict = field(default_factory=dict)


def build_observer(name: str, cfg: ScenarioConfig):
    """Estimator for one entry of the observer selection."""
    family, measurement = OBSERVER_KINDS[name]
    g = cfg.gains[family]
    common = dict(
        k_o=g.k_o,
        k_v=g.k_v,
        rho=g.rho,
        g=cfg.consts.g,
        inertial_vectors=cfg.consts.inertial_vectors,
        init_angle=cfg.init_angle,
        init_axis=tuple(cfg.init_axis),
        record_stride=cfg.record_stride,
    )
    if family == "hybrid":
        return HybridObserver(
            k_g=g.k_g, k_r=g.k_r, T_m=cfg.schedule.T_m, T_M=cfg.schedule.T_M, **common
        )
    cls = ContinuousObserver if family == "continuous" else ReducedObserver
    return cls(k_g=g.k_g, measurement=measurement, **common)


def _certificate(cfg: ScenarioConfig):
    gains = cfg.gains.get("hybrid")
    if gains is None:
        return None
    try:
        return certify_lmi(gains, cfg.consts.N, cfg.schedule.T_m, cfg.schedule.T_M)
    except Infeasible:
        return None


def run_scenario(cfg: ScenarioConfig) -> ScenarioRun:
    """
    Generate the sensor streams of `cfg` and run every selected observer.

    Observers with continuous measurements read a measurement on every IMU
    sample; the others share the intermittent stream.
    """
    traj = cfg.trajectory()
    truth = propagate_truth(traj, cfg.duration, cfg.dt)
    imu = emit_imu(truth, traj, cfg.consts, cfg.noise)
    events = emit_events(truth, cfg.consts, generate_schedule(cfg.schedule, cfg.duration), cfg.noise)
    dense = None
    if any(OBSERVER_KINDS[o][1] == "continuous" for o in cfg.observers):
        dense = emit_events(truth, cfg.consts, truth.t, cfg.noise)
    out = ScenarioRun(cfg, truth, imu, events, dense)
    cert = _certificate(cfg)
    for name in cfg.observers:
        est = build_observer(name, cfg)
        t0 = time.perf_counter()
        est.fit(imu, dense if OBSERVER_KINDS[name][1] == "continuous" else events)
        elapsed = time.perf_counter() - t0
        series = compute_metrics(
            est.trace_, truth, cfg.consts, est.gains_,
            cert=cert if OBSERVER_KINDS[name][0] == "hybrid" else None,
        )
        series.observer = name
        report = convergence_report(series, cfg.threshold, cfg.tail_fraction)
        out.runs[name] = ObserverRun(name, est, series, report, elapsed)
        log.info("%s: %.1f s, steady state %.3g", name, elapsed, report.steady_state_error)
    return out


def trace_columns(trace: HybridTrace, series: MetricSeries) -> tuple[list, list]:
    """Estimator state followed by the error metrics, one row per trace sample."""
    header = ["t", "j", "flow_or_jump", "tau"]
    cols = [trace.t, trace.j, trace.kind, trace.tau]
    for i in range(3):
        for k in range(3):
            header.append(f"R_hat_{i + 1}{k + 1}")
            cols.append(trace.R_hat[:, i, k])
    for name, arr in (("v_hat", trace.v_hat), ("g_hat", trace.g_hat)):
        h, c = flatten_columns(name, arr, _XYZ)
        header += h
        cols += c
    for i in range(trace.r_hat.shape[1]):
        h, c = flatten_columns(f"r_hat{i + 1}", trace.r_hat[:, i], _XYZ)
        header += h
        cols += c
    mh, mc = series.columns()
    skip = {"t", "j", "flow_or_jump", "tau"}
    for h, c in zip(mh, mc):
        if h not in skip:
            header.append(h)
            cols.append(c)
    return header, cols


def _json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _finite(x):
    return None if isinstance(x, float) and not np.isfinite(x) else x


def cmd_simulate(cfg: ScenarioConfig, out: Path, config_path: str | None = None) -> dict:
    """
    Run the scenario and write streams, traces, reports, plot and manifest.

    Returns the manifest dictionary.
    """
    t0 = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    return write_scenario(run_scenario(cfg), out, config_path, t0)


def write_scenario(
    result: ScenarioRun, out: Path, config_path: str | None = None, t0: float | None = None
) -> dict:
    """Write the artifacts of a finished run; `t0` starts the wall clock."""
    cfg = result.config
    t0 = time.perf_counter() if t0 is None else t0
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "truth": result.truth.to_csv(out / "truth.csv").name,
        "imu": result.imu.to_csv(out / "imu.csv").name,
        "events": result.events.to_csv(out / "events.csv").name,
    }
    observers = {}
    for name, run in result.runs.items():
        trace_path = write_csv(out / f"trace_{name}.csv", *trace_columns(run.estimator.trace_, run.series))
        report_path = _json(out / f"report_{name}.json", {"observer": name, **run.report.as_dict()})
        observers[name] = {"trace": trace_path.name, "report": report_path.name}
    plot_comparison({n: r.series for n, r in result.runs.items()}, out / "comparison.svg")
    (out / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True, default=float) + "\n")
    manifest = {
        "command": "simulate",
        "config_hash": cfg.digest(),
        "config_source": config_path,
        "config": "config.json",
        "version": package_version(),
        "files": files,
        "observers": observers,
        "plot": "comparison.svg",
        "wall_seconds": time.perf_counter() - t0,
    }
    _json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# gain checks


def gains_report(cfg: ScenarioConfig) -> dict:
    """
    Observability and sampled-data stability checks for the hybrid gains.

    ``passed`` is true iff the observability matrix is positive definite, the
    spectral radius stays below one on the sampling interval and a Lyapunov
    certificate is found and verified. The closed-form sufficient bound is
    reported but not required, since gains outside it can still be stable.
    """
    gains = cfg.gains.get("hybrid")
    if gains is None:
        raise ConfigError("no hybrid gains to check", "gains.hybrid")
    if gains.N != cfg.consts.N:
        raise ConfigError(f"needs {cfg.consts.N + 1} weights", "gains.hybrid.rho")
    T_m, T_M = cfg.schedule.T_m, cfg.schedule.T_M
    q = build_q(gains.rho, cfg.consts.inertial_vectors, cfg.consts.g)
    lemma = check_lemma3(q)
    try:
        bound = prop3_bound(gains.k_v, T_M)
    except KvOutOfRange:
        bound = None
    taus = np.linspace(T_m, T_M, 101)
    radii = spectral_radius(gains, taus)
    radius_ok = spectral_radius_feasible(gains, T_m, T_M)
    cert_info = {"found": False}
    cert_ok = False
    try:
        cert = certify_lmi(gains, cfg.consts.N, T_m, T_M)
        worst = verify_certificate(cert, build_blocks(cfg.consts.N, gains))
        cert_ok = worst <= -0.5 * cert.margin
        cert_info = {
            "found": True,
            "margin": cert.margin,
            "grid_max_eigenvalue": worst,
            "verified": bool(cert_ok),
            "P2": cert.P2.tolist(),
            "p_r": cert.p_r,
        }
    except Infeasible as exc:
        cert_info["reason"] = str(exc)
    report = {
        "gains": {"k_o": gains.k_o, "k_v": gains.k_v, "k_g": gains.k_g, "k_r": gains.k_r, "rho": list(gains.rho)},
        "sampling": {"T_m": T_m, "T_M": T_M},
        "observability": {
            "status": lemma.status,
            "satisfied": lemma.satisfied,
            "min_eigenvalue": lemma.min_eigenvalue,
            "distinct_eigenvalues": lemma.distinct_eigenvalues,
            "eigenvalues": q.eigenvalues.tolist(),
        },
        "closed_form_bound": {
            "k_g_max": _finite(bound),
            "satisfied": prop3_check(gains, T_M),
        },
        "spectral_radius": {
            "min": float(radii.min()),
            "max": float(radii.max()),
            "below_one": radius_ok,
            "real_eigenvalues": real_eigenvalue_range(gains, T_m, T_M),
        },
        "certificate": cert_info,
    }
    report["passed"] = bool(lemma.satisfied and radius_ok and cert_ok)
    return report


def _format_gains(rep: dict) -> str:
    obs, cf, sr, ce = rep["observability"], rep["closed_form_bound"], rep["spectral_radius"], rep["certificate"]
    bound = "n/a (k_v outside (0, 1))" if cf["k_g_max"] is None else f"{cf['k_g_max']:.6g}"
    lines = [
        f"observability      {'PASS' if obs['satisfied'] else 'FAIL'}  {obs['status']}, "
        f"lambda_min(Q_bar) = {obs['min_eigenvalue']:.6g}",
        f"closed-form bound  {'PASS' if cf['satisfied'] else 'FAIL'}  k_g < {bound} (informational)",
        f"spectral radius    {'PASS' if sr['below_one'] else 'FAIL'}  range [{sr['min']:.6g}, {sr['max']:.6g}]",
    ]
    if ce["found"]:
        lines.append(
            f"certificate        {'PASS' if ce['verified'] else 'FAIL'}  margin {ce['margin']:.6g}, "
            f"grid max eigenvalue {ce['grid_max_eigenvalue']:.6g}"
        )
    else:
        lines.append(f"certificate        FAIL  {ce.get('reason', 'not found')}")
    lines.append(f"overall            {'PASS' if rep['passed'] else 'FAIL'}")
    return "\n".join(lines)


def cmd_gains_check(cfg: ScenarioConfig, out: Path | None) -> dict:
    rep = gains_report(cfg)
    print(_format_gains(rep))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _json(out / "gains_check.json", {"config_hash": cfg.digest(), **rep})
    return rep


# ---------------------------------------------------------------------------
# ISS study


def cmd_iss_study(cfg: ScenarioConfig, out: Path) -> dict:
    """Run the input-to-state study on the hybrid attitude gain and weights."""
    t0 = time.perf_counter()
    gains = cfg.gains["hybrid"]
    q = build_q(gains.rho, cfg.consts.inertial_vectors, cfg.consts.g)
    res = iss_study(
        cfg.iss["amplitudes"],
        q,
        gains.k_o,
        horizon=cfg.iss["horizon"],
        seeds=cfg.iss["seeds"],
        dt=cfg.iss["dt"],
        seed=cfg.noise.seed,
    )
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "iss_bounds.csv",
        ["amplitude", "ultimate_bound"],
        [np.asarray(res.input_amplitudes), np.asarray(res.ultimate_bounds)],
    )
    payload = {"config_hash": cfg.digest(), **res.as_dict()}
    _json(out / "iss_study.json", payload)
    _json(
        out / "manifest.json",
        {
            "command": "iss-study",
            "config_hash": cfg.digest(),
            "version": package_version(),
            "files": {"bounds": "iss_bounds.csv", "study": "iss_study.json"},
            "wall_seconds": time.perf_counter() - t0,
        },
    )
    for a, b in zip(res.input_amplitudes, res.ultimate_bounds):
        print(f"amplitude {a:<8g} ultimate bound {b:.3e}")
    print(f"monotone: {res.monotone}")
    return payload


# ---------------------------------------------------------------------------
# argument handling


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybrid-attitude", description=__doc__.strip().splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for verb, text in (
        ("simulate", "run observers on a scenario and write traces"),
        ("gains-check", "check hybrid gain feasibility"),
        ("iss-study", "empirical input-to-state study"),
    ):
        s = sub.add_parser(verb, help=text)
        s.add_argument("--config", metavar="PATH", help="YAML scenario (default: bundled noise-free)")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--seed", type=int, metavar="N", help="override the noise and sampling seeds")
        s.add_argument("--observers", metavar="LIST", help="comma-separated observer names")
    return p


def _load(args) -> ScenarioConfig:
    path = args.config or bundled_config("default")
    cfg = load_config(path)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("must be >= 0", "--seed")
        cfg = cfg.with_seed(args.seed)
    if args.observers:
        cfg = cfg.with_observers([o.strip() for o in args.observers.split(",") if o.strip()])
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else None
    try:
        if args.command == "simulate":
            manifest = cmd_simulate(cfg, out or Path(cfg.output), args.config)
            for name, files in manifest["observers"].items():
                print(f"{name}: {files['trace']}")
            return EXIT_OK
        if args.command == "gains-check":
            rep = cmd_gains_check(cfg, out)
            return EXIT_OK if rep["passed"] else EXIT_CHECK
        payload = cmd_iss_study(cfg, out or Path(cfg.output))
        return EXIT_OK if payload["monotone"] else EXIT_CHECK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, HybridAttitudeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
