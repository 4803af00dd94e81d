"""
Shared command execution for the drlab front end.
Supports: pc, iterate, exponent-sweep, critical, coupling, deviation

Every handler takes an ExperimentConfig and returns a result dict:
    {"status": "pass" | "fail" | "error", "command": ..., "message": ..., ...}
Errors carry "error_type" and "error_message"; run_command never raises.
"""

import logging
from functools import partial
from pathlib import Path

import numpy as np

from analytics.criticality import critical_p, iterate_trace
from analytics.fits import (
    burn_in_window,
    exponent_sweep,
    free_energy_estimate,
    kappa_fit,
    loglog_slope,
    rate_fit,
)
from analytics.monitors import (
    criticality_ceiling,
    delta_recursion_residual,
    escape_time,
    manifold_exit_time,
    mgf_domination_check,
    moment_ratio,
    product_bound_check,
    remark_lower_bound_check,
    residual_allowance,
)
from cli.config import ExperimentConfig, ModelSection
from cli.output import RunManifest, write_rows, write_summary, write_trace
from dist_core.errors import (
    ConfigurationError,
    InequalityViolation,
    NodeBudgetExceeded,
    SupportBudgetExceeded,
    TraceExhausted,
    TruncationTooAggressive,
)
from dist_core.pmf import TruncationPolicy
from open_paths.montecarlo import mc_estimate, open_path_weight
from open_paths.probes import deviation_probe
from open_paths.transform import coupling_check, transform_run
from open_paths.tree import TreeSampler

logger = logging.getLogger(__name__)

SUPPORTED_COMMANDS = ["pc", "iterate", "exponent-sweep", "critical", "coupling", "deviation"]

EXIT_PASS      = 0
EXIT_OTHER     = 1
EXIT_VIOLATION = 2
EXIT_CONFIG    = 3
EXIT_BUDGET    = 4

CEILING_TOLERANCE = 1e-9
SWEEP_STOP        = 1e-300
DEFECT_EXACT      = 1e-14   # below this the δ-recursion residual is held to 1e-9


def _result(command: str, passed: bool, message: str, **extra) -> dict:
    return {"status": "pass" if passed else "fail", "command": command, "message": message, **extra}


def _error(command: str, message: str, exc: BaseException) -> dict:
    return {
        "status": "error",
        "command": command,
        "message": message,
        "error_type": type(exc).__name__,
        "error_message": str(exc),
    }


def _out_dir(config: ExperimentConfig) -> Path:
    directory = Path(config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _manifest(command: str, config: ExperimentConfig, p_c: float) -> RunManifest:
    return RunManifest(command=command, config=config.model_dump(mode="json"), p_c=p_c)


# ── pc ────────────────────────────────────────────────────────────────────────

def cmd_pc(config: ExperimentConfig) -> dict:
    """Critical point of the configured star law and arity."""
    spec = config.model.to_spec()
    message = f"p_c = {spec.p_c:.15g}\nepsilon = {spec.epsilon:.15g}"
    return _result("pc", True, message, p_c=spec.p_c, epsilon=spec.epsilon)


# ── iterate ───────────────────────────────────────────────────────────────────

def _report_rates(trace, window: tuple, manifest: RunManifest, notes: list) -> dict:
    """Survival and mgf-excess rates on the kappa window; reported only."""
    rates = {}
    for observable in ("survival", "mgf_excess"):
        try:
            fit = rate_fit(trace, window, observable)
        except TraceExhausted as e:
            notes.append(f"no {observable} rate: {e}")
            continue
        rates[fit.kind] = fit.value
        manifest.fits.append(fit.as_dict())
    return rates


def cmd_iterate(config: ExperimentConfig) -> dict:
    """
    Exact trace to run.n_max, with the checks that apply to its regime.
    Supercritical traces end once E(X_n) passes run.escape.
    """
    spec = config.model.to_spec()
    policy = config.run.policy()
    n_max = config.run.n_max
    notes = []
    escaped = None
    if spec.regime == "supercritical":
        escaped = escape_time(spec, n_max, config.run.escape, policy)
        if escaped is not None:
            n_max = escaped
            notes.append(f"E(X_n) passed {config.run.escape:g} at n={escaped}; trace ends there")

    trace = iterate_trace(spec, n_max, policy)
    directory = _out_dir(config)
    manifest = _manifest("iterate", config, spec.p_c)

    trace_file = write_trace(trace, directory, config.output.format)
    manifest.files.append(trace_file.name)
    manifest.defect_summary("trace", trace)

    free_energy = None
    if len(trace) >= 2:
        fit = free_energy_estimate(trace)
        manifest.fits.append(fit.as_dict())
        free_energy = fit.value
    kappa_hat = window = None
    rates = {}

    if len(trace) >= 2 and spec.regime == "subcritical":
        residual = delta_recursion_residual(trace)
        exact = trace.column("defect")[:-1] < DEFECT_EXACT
        over = np.flatnonzero(exact & (np.abs(residual) > residual_allowance(trace)))
        if over.size:
            raise InequalityViolation(
                f"delta recursion residual {residual[over[0]]!r} at n={int(over[0])}"
            )
        product_bound_check(trace)
        mgf_domination_check(trace)
        remark_lower_bound_check(spec, trace)
        try:
            window = config.fit.window or burn_in_window(trace)
            fit = kappa_fit(trace, window)
            kappa_hat = fit.value
            manifest.fits.append(fit.as_dict())
        except (TraceExhausted, ConfigurationError) as e:
            notes.append(f"no kappa fit: {e}")
            window = None
        if window is not None:
            rates = _report_rates(trace, window, manifest, notes)

    write_summary(directory, p_c=spec.p_c, epsilon=spec.epsilon, kappa_hat=kappa_hat,
                  window=window, free_energy=free_energy, rates=rates,
                  escape_time=escaped, manifold_exit=manifold_exit_time(trace),
                  notes=notes, **{"pass": True})
    manifest.write(directory)
    return _result("iterate", True, f"wrote {len(trace)} generations to {trace_file}",
                   p_c=spec.p_c, epsilon=spec.epsilon, kappa_hat=kappa_hat,
                   escape_time=escaped)


# ── exponent-sweep ────────────────────────────────────────────────────────────

def _sweep_trace(model: ModelSection, n_max: int, policy: TruncationPolicy,
                 directory: Path, fmt: str, epsilon: float):
    trace = iterate_trace(model.to_spec(epsilon), n_max, policy, stop_below=SWEEP_STOP)
    write_trace(trace, directory, fmt, stem=f"trace_eps_{epsilon!r}")
    return trace


def cmd_exponent_sweep(config: ExperimentConfig) -> dict:
    """κ̂ per ε and the log-log slope of κ̂ against ε."""
    epsilons = sorted(config.sweep.epsilons)
    if len(epsilons) < 2:
        raise ConfigurationError("need ≥ 2 points for an exponent sweep")
    p_c = critical_p(config.model.star_law(), config.model.m)
    directory = _out_dir(config)
    manifest = _manifest("exponent-sweep", config, p_c)

    trace_for_epsilon = partial(_sweep_trace, config.model, config.sweep.n_max,
                                config.run.policy(), directory, config.output.format)
    sweep = exponent_sweep(epsilons, trace_for_epsilon, config.fit.band, config.mc.workers)

    ext = "json" if config.output.format == "json" else "csv"
    manifest.files.extend(f"trace_eps_{r.epsilon!r}.{ext}" for r in sweep.rows)
    manifest.fits.extend({"epsilon": r.epsilon, **r.fit.as_dict()} for r in sweep.rows if r.fit)
    if sweep.slope_fit is not None:
        manifest.fits.append(sweep.slope_fit.as_dict())

    write_summary(
        directory,
        p_c=p_c,
        epsilon=[r.epsilon for r in sweep.rows],
        kappa_hat=[r.kappa_hat for r in sweep.rows],
        slope=sweep.slope_fit.slope if sweep.slope_fit else None,
        window=[list(r.fit.window) if r.fit else None for r in sweep.rows],
        band=list(sweep.band),
        monotone=sweep.monotone,
        status=[r.status for r in sweep.rows],
        **{"pass": sweep.passed},
    )
    manifest.write(directory)
    return _result("exponent-sweep", sweep.passed, sweep.message,
                   slope=sweep.slope_fit.slope if sweep.slope_fit else None)


# ── critical ──────────────────────────────────────────────────────────────────

def _window_slope(values: np.ndarray, window: tuple):
    n_lo, n_hi = window
    ns = np.arange(n_lo, n_hi + 1, dtype=np.float64)
    return loglog_slope(ns, values[n_lo:n_hi + 1])


def cmd_critical(config: ExperimentConfig) -> dict:
    """Criticality ceiling, product/n² spread and the power-law decay slopes."""
    spec = config.model.to_spec(0.0)
    policy = config.run.policy()
    n_max = config.run.n_max
    directory = _out_dir(config)
    manifest = _manifest("critical", config, spec.p_c)
    crit = config.critical
    failures = []
    moments = []

    def record_moment(n, law):
        if n > 0:
            moments.append((n, moment_ratio(law, n, spec.m, crit.moment_c)))

    trace = iterate_trace(spec, n_max, policy, on_law=record_moment)
    manifest.files.append(write_trace(trace, directory, config.output.format).name)
    manifest.files.append(write_rows(directory / "moments.csv", ("n", "moment_ratio"), moments).name)
    manifest.defect_summary("trace", trace)

    h_sup, ceiling = criticality_ceiling(trace)
    if h_sup > ceiling + CEILING_TOLERANCE:
        failures.append(f"sup H_n(m) = {h_sup!r} above m^(1/(m-1)) = {ceiling!r}")

    product_window = (crit.product_window[0], min(crit.product_window[1], n_max))
    spread = None
    if product_window[0] < product_window[1]:
        products = product_bound_check(trace, product_window)
        spread = products.spread
        if spread is None or spread > crit.spread_limit:
            failures.append(f"product/n^2 spread {spread} above {crit.spread_limit}")

    zero = transform_run(spec, 0.0, n_max, policy)
    no_open = zero.no_open_path()
    manifest.files.append(write_rows(directory / "open_paths.csv", ("n", "p_open"),
                                     zip(range(n_max + 1), no_open)).name)

    window = (crit.window[0], min(crit.window[1], n_max))
    slopes = {}
    if window[1] - window[0] >= 1:
        series = {"mean": trace.column("mean"), "survival": trace.column("survival"),
                  "open_paths": no_open}
        for name, values in series.items():
            fit = _window_slope(values, window)
            slopes[name] = fit.slope
            manifest.fits.append({"series": name, **fit.as_dict()})
        lo, hi = crit.slope_band
        for name, slope in slopes.items():
            if not lo <= slope <= hi:
                failures.append(f"{name} slope {slope:.4g} outside [{lo}, {hi}]")
    else:
        failures.append(f"run.n_max={n_max} too short for slope window {crit.window}")

    passed = not failures
    write_summary(directory, p_c=spec.p_c, epsilon=0.0, slope=slopes.get("open_paths"),
                  slopes=slopes, window=list(window), h_sup=h_sup, ceiling=ceiling,
                  product_spread=spread, moment_ratio_max=max((r[1] for r in moments), default=None),
                  failures=failures, **{"pass": passed})
    manifest.write(directory)
    message = "critical checks passed" if passed else "; ".join(failures)
    return _result("critical", passed, message, slopes=slopes, h_sup=h_sup)


# ── coupling ──────────────────────────────────────────────────────────────────

def cmd_coupling(config: ExperimentConfig) -> dict:
    """Per-generation coupling margins, optionally cross-checked by sampling."""
    spec = config.model.to_spec()
    policy = config.run.policy()
    n_max = config.run.n_max
    directory = _out_dir(config)
    manifest = _manifest("coupling", config, spec.p_c)

    report = coupling_check(spec, n_max, policy, strict=False)
    manifest.files.append(write_rows(directory / "margins.csv",
                                     ("n", "lhs", "rhs", "margin", "allowance"), report.rows).name)
    passed = report.passed
    notes = []

    if config.coupling.mc_check:
        mc = config.mc
        sampler = TreeSampler(spec.critical(), n_max, False, mc.node_budget)
        estimate = mc_estimate(sampler, partial(open_path_weight, theta=spec.theta),
                               mc.count, mc.seed, mc.workers)
        exact = report.rows[-1][2]
        gap = abs(estimate.mean - exact)
        agrees = gap <= 4.0 * estimate.std_error + 1e-12
        notes.append(f"MC {estimate.mean:.6g} ± {estimate.std_error:.2g} vs exact {exact:.6g}")
        manifest.fits.append({"kind": "mc_cross_check", **estimate.as_dict(), "exact": exact})
        passed = passed and agrees

    margins = [r[3] for r in report.rows]
    write_summary(directory, p_c=spec.p_c, epsilon=spec.epsilon, margins=margins,
                  window=[0, n_max], notes=notes, **{"pass": passed})
    manifest.write(directory)
    message = f"min margin {report.min_margin:.6g} over n <= {n_max}"
    return _result("coupling", passed, "; ".join([message, *notes]), min_margin=report.min_margin)


# ── deviation ─────────────────────────────────────────────────────────────────

def cmd_deviation(config: ExperimentConfig) -> dict:
    """Probability of a high Y_n carried by few open paths, against its ceiling."""
    spec = config.model.to_spec()
    mc, probe = config.mc, config.probe
    directory = _out_dir(config)
    manifest = _manifest("deviation", config, spec.p_c)

    report = deviation_probe(spec, probe.n, probe.j, mc.count, mc.seed, mc.workers,
                             mc.node_budget, probe.alphas, config.run.policy(), strict=False,
                             ell=probe.ell, rho=probe.rho)
    write_summary(directory, p_c=spec.p_c, epsilon=spec.epsilon, probe=report.as_dict(),
                  **{"pass": report.passed})
    manifest.fits.append({"kind": "deviation", **report.estimate.as_dict()})
    manifest.write(directory)
    message = (f"estimate {report.estimate.mean:.6g} ± {report.estimate.std_error:.2g}, "
               f"ceiling {report.allowed:.6g}")
    return _result("deviation", report.passed, message, estimate=report.estimate.mean,
                   ceiling=report.allowed)


HANDLERS = {
    "pc": cmd_pc,
    "iterate": cmd_iterate,
    "exponent-sweep": cmd_exponent_sweep,
    "critical": cmd_critical,
    "coupling": cmd_coupling,
    "deviation": cmd_deviation,
}


def run_command(name: str, config: ExperimentConfig) -> dict:
    """Dispatch a command by name and convert failures into result dicts."""
    if name not in HANDLERS:
        return {
            "status": "error",
            "command": name,
            "message": f"Unknown command. Supported: {', '.join(SUPPORTED_COMMANDS)}",
            "error_type": "ConfigurationError",
            "error_message": f"unknown command '{name}'",
        }
    try:
        return HANDLERS[name](config)
    except InequalityViolation as e:
        logger.warning("%s: %s", name, e)
        return {**_error(name, "Inequality violated", e), "status": "fail"}
    except ConfigurationError as e:
        return _error(name, "Invalid configuration", e)
    except (NodeBudgetExceeded, SupportBudgetExceeded, TruncationTooAggressive) as e:
        return _error(name, "Resource budget exceeded", e)
    except Exception as e:
        return _error(name, "Command failed", e)


def exit_code(result: dict) -> int:
    status = result.get("status")
    if status == "pass":
        return EXIT_PASS
    if status == "fail":
        return EXIT_VIOLATION
    error_type = result.get("error_type")
    if error_type in ("ConfigurationError", "DegenerateStarLaw", "ValidationError"):
        return EXIT_CONFIG
    if error_type in ("NodeBudgetExceeded", "SupportBudgetExceeded", "TruncationTooAggressive"):
        return EXIT_BUDGET
    return EXIT_OTHER
