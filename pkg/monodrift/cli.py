"""
Command-line interface for monodrift.

Every subcommand reads one TOML config, runs the corresponding computation and
writes CSV tables, a JSON report, optional SVG plots and ``manifest.json`` into
the output directory.
"""

import argparse
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from monodrift import framework_check, ldp_probe, skeleton, spectral, stationary
from monodrift.config import (
    SCHEMA_FILENAME,
    RunConfig,
    config_schema,
    parse_config,
)
from monodrift.file_operations import RunWriter, write_json
from monodrift.integrator import (
    TimeGrid,
    brownian,
    energy_series,
    exponential_report,
    simulate,
)
from monodrift.models import ModelSpec
from monodrift.utils import parallel, rng
from monodrift.utils.error_handling import (
    ConfigurationError,
    MonodriftError,
    UsageError,
    safe_execute,
    setup_logging,
)

logger = logging.getLogger(__name__)

COMMANDS = (
    "check",
    "simulate",
    "estimates",
    "pullback",
    "invariant",
    "rate",
    "quasipotential",
    "probe",
    "schema",
)


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments.

    Args:
        args: Command-line arguments (uses sys.argv if not provided)

    Returns:
        Parsed arguments
    """
    parser = argparse.ArgumentParser(
        description="Spectral-Galerkin and large-deviation toolkit for locally "
        "monotone SPDEs",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS, help="Computation to run")
    parser.add_argument("--config", help="TOML run configuration (or a manifest.json)")
    parser.add_argument("--out", help="Output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="Master seed (overrides seed)")
    parser.add_argument(
        "--workers", type=int, help="Worker threads (overrides workers)"
    )
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    return parser.parse_args(args)


def _resolved(model: ModelSpec, cfg: RunConfig, eps: float):
    return framework_check.resolve_constants(
        model, eps, cfg.audit.n_samples, cfg.audit.radius_h, cfg.seed, cfg.workers
    )


def _state_header(model: ModelSpec) -> List[str]:
    return [f"coeff_{k}" for k in range(model.space.dim)]


def run_check(cfg: RunConfig, writer: RunWriter) -> Dict[str, Any]:
    model, fit = _resolved(cfg.build_model(), cfg, cfg.eps)
    eps0 = cfg.audit.eps0 if cfg.audit.eps0 is not None else cfg.eps
    constants = framework_check.thresholds(model, eps0)
    audits = framework_check.check_all(
        model,
        cfg.eps,
        cfg.audit.conditions,
        cfg.audit.n_samples,
        cfg.audit.radius_h,
        cfg.seed,
        cfg.workers,
    )
    writer.csv(
        "audits.csv",
        ["condition", "samples", "worst_margin", "passed", "witness_line"],
        [
            [
                a.condition,
                a.samples,
                a.worst_margin,
                a.passed,
                a.witness.get("line", ""),
            ]
            for a in audits
        ],
    )
    report = {
        "model": model.describe(),
        "constants": constants.to_dict(),
        "d1": constants.d1,
        "d2": constants.d2,
        "audits": [a.to_dict() for a in audits],
        "c_rho1_fit": None if fit is None else fit.__dict__,
    }
    writer.json("check.json", report)
    return report


def run_simulate(cfg: RunConfig, writer: RunWriter) -> Dict[str, Any]:
    model = cfg.build_model()
    grid = TimeGrid(cfg.grid.t0, cfg.grid.t1, cfg.grid.dt)
    xi = cfg.initial_state(model.space)
    noise = None
    if cfg.eps > 0.0:
        noise = brownian(grid, model.noise_consts.u_dim, cfg.seed)
    path = simulate(model, cfg.eps, xi, grid, noise)
    series = energy_series(model, path)
    writer.csv(
        "trajectory.csv",
        ["t"] + _state_header(model),
        (np.concatenate(([t], x)) for t, x in zip(path.times, path.states)),
    )
    writer.csv(
        "energy.csv",
        ["t", "h_sq", "v_sq_int", "h_beta_v_int", "h_2beta"],
        zip(
            series.times,
            series.h_sq,
            series.v_sq_int,
            series.h_beta_v_int,
            series.h_2beta,
        ),
    )
    writer.plot(
        "energy.svg",
        series.times,
        {"|X|_H^2": series.h_sq},
        "t",
        "energy",
        f"{model.name}, eps={cfg.eps:g}",
    )
    report = {
        "model": model.name,
        "eps": cfg.eps,
        "t0": grid.t0,
        "t1": grid.t1,
        "dt": grid.dt,
        "final_h_sq": float(series.h_sq[-1]),
        "max_h_sq": float(np.max(series.h_sq)),
    }
    writer.json("simulate.json", report)
    return report


def run_estimates(cfg: RunConfig, writer: RunWriter) -> Dict[str, Any]:
    if not cfg.eps > 0.0:
        raise UsageError("estimates need eps > 0")
    model, _ = _resolved(cfg.build_model(), cfg, cfg.eps)
    lam, g0, beta = model.space.lambda1, model.mono.gamma0, model.mono.beta
    gamma = cfg.estimates.gamma or (1.0 + beta) * lam * g0 / 2.0
    delta_max = (1.0 + beta) * lam * g0 / (
        2.0 * (2.0 + beta) ** 2 * model.noise_consts.c_b * cfg.eps
    )
    delta = cfg.estimates.delta or 0.5 * delta_max
    grid = TimeGrid(cfg.grid.t0, cfg.grid.t1, cfg.grid.dt)
    report = exponential_report(
        model,
        cfg.eps,
        cfg.initial_state(model.space),
        grid,
        gamma,
        delta,
        cfg.estimates.n_paths,
        cfg.seed,
        cfg.estimates.slack,
    )
    writer.csv(
        "estimates.csv",
        ["line", "estimate", "stderr", "bound", "passed"],
        [[ln.name, ln.estimate, ln.stderr, ln.bound, ln.passed] for ln in report.lines],
    )
    writer.json("estimates.json", report)
    return report.to_dict()


def run_pullback(cfg: RunConfig, writer: RunWriter) -> Dict[str, Any]:
    model, _ = _resolved(cfg.build_model(), cfg, cfg.eps)
    xi = model.space.zeros() if cfg.grid.xi is None else cfg.initial_state(model.space)
    path, diag = stationary.pullback(
        model, cfg.eps, xi, cfg.pullback_config(), cfg.seed
    )
    schedule = cfg.pullback.n_schedule
    writer.csv(
        "pullback.csv",
        ["n", "pair_distance", "endpoint_gap"],
        zip(schedule[:-1], diag.pair_distances, diag.endpoint_gaps),
    )
    writer.csv(
        "pullback_path.csv",
        ["t"] + _state_header(model),
        (np.concatenate(([t], x)) for t, x in zip(path.times, path.states)),
    )
    writer.plot(
        "pullback.svg",
        schedule[:-1],
        {"d-metric": diag.pair_distances, "endpoint gap": diag.endpoint_gaps},
        "n",
        "distance",
        "pull-back decay",
        logy=True,
    )
    writer.json("pullback.json", diag)
    return diag.to_dict()


def run_invariant(cfg: RunConfig, writer: RunWriter) -> Dict[str, Any]:
    model, _ = _resolved(cfg.build_model(), cfg, cfg.eps)
    pb = cfg.pullback_config()
    samples = stationary.invariant_samples(
        model, cfg.eps, cfg.pullback.n_draws, pb, cfg.seed, workers=cfg.workers
    )
    writer.csv(
        "samples.csv",
        ["draw"] + _state_header(model),
        (np.concatenate(([i], x)) for i, x in enumerate(samples.values)),
    )
    test = stationary.stationarity_test(
        model,
        cfg.eps,
        tuple(cfg.pullback.times),
        cfg.pullback.n_draws,
        cfg.seed,
        pb,
        level=cfg.pullback.level,
        n_permutations=cfg.pullback.n_permutations,
    )
    report: Dict[str, Any] = {
        "n_draws": cfg.pullback.n_draws,
        "eps": cfg.eps,
        "stationarity": test.__dict__,
        "mean_h_sq": float(np.mean(spectral.h_norm_sq(model.space, samples.values))),
    }
    if cfg.pullback.moment_delta is not None:
        report["moment_check"] = stationary.stationary_moment_check(
            model, cfg.eps, cfg.pullback.moment_delta, samples
        )
    evolved = stationary.evolve_samples(
        model, cfg.eps, samples, 1.0, rng.derive_seed(cfg.seed, 1), dt=pb.dt
    )
    report["evolved"] = stationary.two_sample_test(
        samples.values,
        evolved.values,
        cfg.seed,
        level=cfg.pullback.level,
        n_permutations=cfg.pullback.n_permutations,
    ).__dict__
    writer.json("invariant.json", report)
    return report


def run_rate(cfg: RunConfig, writer: RunWriter) -> Dict[str, Any]:
    model = cfg.build_model()
    space = model.space
    target = (
        space.check(cfg.rate.target, "rate.target")
        if cfg.rate.target is not None
        else space.unit(0, cfg.rate.target_scale)
    )
    result = skeleton.rate_endpoint(
        model,
        space.zeros(),
        -cfg.rate.t_back,
        0.0,
        target,
        cfg.rate.options(),
        cfg.rate.dt,
    )
    control = result.control
    times = control.grid.times[:-1]
    writer.csv(
        "control.csv",
        ["t"] + [f"v{k}" for k in range(control.u_dim)],
        (np.concatenate(([t], v)) for t, v in zip(times, control.values)),
    )
    writer.csv("trace.csv", ["iteration", "objective"], enumerate(result.trace))
    writer.plot(
        "trace.svg",
        list(range(len(result.trace))),
        {"J": result.trace},
        "iteration",
        "objective",
        "rate optimisation",
        logy=True,
    )
    report = dict(result.to_dict(), target=target)
    writer.json("rate.json", report)
    return report


def run_quasipotential(cfg: RunConfig, writer: RunWriter) -> Dict[str, Any]:
    model = cfg.build_model()
    space = model.space
    qp = cfg.quasipotential
    if qp.targets is not None:
        targets = [space.check(t, "quasipotential.targets") for t in qp.targets]
    else:
        if qp.n_targets > space.dim:
            raise UsageError(f"n_targets exceeds the {space.dim} available modes")
        targets = [space.unit(k, qp.amplitude) for k in range(qp.n_targets)]
    report = skeleton.quasipotential_crosscheck(
        model, targets, cfg.rate.options(), qp.t_back, qp.dt, cfg.workers
    )
    writer.csv(
        "quasipotential.csv",
        ["index", "rate", "reference", "ratio", "converged", "endpoint_gap"],
        [
            [r["index"], r["rate"], r["reference"], r["ratio"], r["converged"],
             r["endpoint_gap"]]
            for r in report["rows"]
        ],
    )
    writer.json("quasipotential.json", report)
    return report


def run_probe(cfg: RunConfig, writer: RunWriter) -> Dict[str, Any]:
    model = cfg.build_model()
    eps_ref = cfg.eps if cfg.eps > 0.0 else min(cfg.eps_list)
    model, _ = _resolved(model, cfg, eps_ref)
    event = cfg.probe.event()
    reference = cfg.probe.rate_reference
    if reference is None and cfg.probe.compute_reference:
        reference = ldp_probe.event_rate_reference(
            model, event, cfg.rate.options(), cfg.rate.t_back, cfg.rate.dt
        )["value"]
    result = ldp_probe.probe(
        model,
        cfg.eps_list,
        event,
        cfg.probe.n_draws,
        cfg.pullback_config(),
        cfg.seed,
        reference,
        cfg.workers,
    )
    writer.csv(
        "probe.csv",
        ["eps", "p_hat", "stderr", "neg_eps_log_p"],
        [
            [r["eps"], r["p_hat"], r["stderr"], r["neg_eps_log_p"]]
            for r in result.rows()
        ],
    )
    finite = [
        (e, y)
        for e, y in zip(result.eps_list, result.neg_eps_log_p)
        if np.isfinite(y)
    ]
    if finite:
        writer.plot(
            "probe.svg",
            [e for e, _ in finite],
            {"-eps log p": [y for _, y in finite]},
            "eps",
            "-eps log p",
            "LDP scaling",
        )
    report = result.to_dict()
    if cfg.probe.xi_sweep:
        xis = [model.space.check(x, "probe.xi_sweep") for x in cfg.probe.xi_sweep]
        rows = ldp_probe.initial_condition_sweep(
            model, eps_ref, event, xis, cfg.probe.horizon, cfg.probe.n_draws,
            cfg.seed, cfg.grid.dt,
        )
        writer.csv(
            "sweep.csv",
            ["index", "h_norm", "p_hat", "stderr", "hits"],
            [
                [r["index"], r["h_norm"], r["p_hat"], r["stderr"], r["hits"]]
                for r in rows
            ],
        )
        report["xi_sweep"] = rows
    writer.json("probe.json", report)
    return report


HANDLERS: Dict[str, Callable[[RunConfig, RunWriter], Dict[str, Any]]] = {
    "check": run_check,
    "simulate": run_simulate,
    "estimates": run_estimates,
    "pullback": run_pullback,
    "invariant": run_invariant,
    "rate": run_rate,
    "quasipotential": run_quasipotential,
    "probe": run_probe,
}


def run(command: str, cfg: RunConfig) -> Dict[str, Any]:
    """Run one subcommand with a validated config and write its outputs."""
    if cfg.workers is not None:
        parallel.set_default_workers(cfg.workers)
    writer = RunWriter(cfg.output_dir, cfg.plots)
    report = safe_execute(HANDLERS[command], cfg, writer)
    writer.finish(command, cfg.model_dump(mode="json"), cfg.seed)
    return report


def main(args: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI.

    Args:
        args: Command-line arguments (uses sys.argv if not provided)

    Returns:
        Exit code: 0 on success, 1 on a computation error, 2 on a config error
    """
    parsed = parse_args(args)
    setup_logging(parsed.verbose)
    try:
        if parsed.command == "schema":
            path = os.path.join(parsed.out or "results", SCHEMA_FILENAME)
            write_json(path, config_schema())
            logger.info("wrote %s", path)
            return 0
        if not parsed.config:
            raise ConfigurationError(f"{parsed.command} needs --config")
        overrides = {
            key: value
            for key, value in (
                ("seed", parsed.seed),
                ("workers", parsed.workers),
                ("output_dir", parsed.out),
            )
            if value is not None
        }
        cfg = safe_execute(parse_config, parsed.config, overrides=overrides)
        run(parsed.command, cfg)
    except MonodriftError as exc:
        logger.error("%s failed: %s", parsed.command, exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
