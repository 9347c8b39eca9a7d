"""Command-line entry point.

Each subcommand takes an optional ``--config`` JSON file shaped like
``{"subcommand": ..., "scenario": ..., "params": {...}, "seed": ..., "output": ..., "format": ...}``.
Flags given on the command line override the file. Every artifact carries a
provenance block with the tool version, the resolved config and the seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__, divergence, dmeqsp, harness, schurwss
from .statemodel import SensingScenario, StateError, random_scenario

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_UNREACHABLE = 0, 1, 2, 3
SUBCOMMANDS = ("divergence", "complexity", "wss", "qsp", "scan", "twirl-check")


class ConfigError(ValueError):
    pass


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RandomScenarioSpec(Strict):
    d: int = Field(ge=2)
    r_n: int = Field(ge=1)
    r_s: int = Field(default=1, ge=1)
    theta0: float = Field(gt=0, lt=1)
    lambda_gap: Optional[float] = Field(default=None, ge=0)
    seed: int = 0


class RunConfig(Strict):
    subcommand: Optional[Literal[SUBCOMMANDS]] = None
    scenario: Any = None
    params: dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output: Optional[str] = None
    format: Optional[Literal["json", "csv"]] = None


class DivergenceParams(Strict):
    operation: Literal[
        "kl", "tsallis", "first_order", "kmb_fisher", "bernoulli_kl", "composite_exponent", "snr"
    ]
    theta: Optional[float] = Field(default=None, ge=0, le=1)
    q: Optional[float] = None
    vartheta0: Optional[float] = None
    n: Optional[float] = None
    theta0: Optional[float] = None
    delta: Optional[float] = None
    mu_eps: float = 0.0
    sigma_eps: float = 0.0
    m: Optional[int] = None


class ComplexityParams(Strict):
    formula: Literal[divergence.FORMULAS]
    constant: float = Field(default=1.0, gt=0)
    theta0: Optional[float] = None
    beta: Optional[float] = None
    r: Optional[float] = None
    r_n: Optional[float] = None
    d: Optional[float] = None
    lambda_gap: Optional[float] = None
    delta: Optional[float] = None
    epsilon: Optional[float] = None


class WssParams(Strict):
    m: int = Field(ge=1)
    trials: int = Field(default=10, ge=1)
    hypothesis: Literal["H0", "H1"] = "H1"
    test: Literal["rank", "purity", "gap"] = "rank"


class QspParams(Strict):
    mode: Literal["ideal", "polynomial"] = "ideal"
    delta: float = Field(default=1e-3, ge=0, lt=0.5)
    lambda_gap: float = Field(gt=0)
    x: float = Field(default=1.0, gt=0)
    degree: Optional[int] = Field(default=None, ge=1)
    theta0: float = Field(gt=0, lt=1)
    theta: Optional[float] = Field(default=None, ge=0, le=1)
    m_ber: int = Field(ge=1)
    beta: float = Field(default=0.1, gt=0, lt=1)

    @model_validator(mode="after")
    def _degree_for_polynomial(self):
        if self.mode == "polynomial" and self.degree is None:
            raise ValueError("degree is required for mode=polynomial")
        return self


class ScanTemplate(Strict):
    d: int = Field(ge=2)
    r_n: int = Field(default=1, ge=1)
    r_s: int = Field(default=1, ge=1)
    theta0: Optional[float] = Field(default=None, gt=0, lt=1)
    lambda_gap: Optional[float] = Field(default=None, ge=0)
    family_size: int = Field(default=1, ge=1)


class ScanAxis(Strict):
    name: Literal["theta0", "r_n", "lambda_gap"]
    values: list[float] = Field(min_length=1)


class ScanParams(Strict):
    template: ScanTemplate
    axis: ScanAxis
    strategy: Literal[harness.STRATEGIES]
    target_beta: float = Field(default=0.1, gt=0, lt=1)
    alpha_cap: float = Field(default=0.1, ge=0, lt=1)
    trials: int = Field(default=500, ge=1)
    m_start: int = Field(default=1, ge=1)
    options: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _theta0_present(self):
        if self.axis.name != "theta0" and self.template.theta0 is None:
            raise ValueError("template.theta0: field required unless the sweep axis is theta0")
        return self


class TwirlParams(Strict):
    m: int = 2
    d: int = 2
    elements: int = Field(default=1, ge=1)


# --- output ------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_atomic(path: str | None, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename; stdout when no path."""
    if path is None:
        sys.stdout.write(text)
        return
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance(config: dict) -> dict:
    return {"tool": "incodetect", "version": __version__, "config": config, "seed": config["seed"]}


def render_json(payload: dict, config: dict) -> str:
    return json.dumps(_jsonable({**payload, "provenance": _provenance(config)}), indent=2) + "\n"


def render_csv(rows: list[dict], columns: list[str], config: dict) -> str:
    buf = io.StringIO()
    buf.write("# provenance: " + json.dumps(_jsonable(_provenance(config))) + "\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(_jsonable(row))
    return buf.getvalue()


# --- scenarios ---------------------------------------------------------------------


def load_scenario(ref) -> SensingScenario:
    """Scenario from a file path, an inline serialized dict or {"random": {...}}."""
    if ref is None:
        raise ConfigError("scenario: field required")
    if isinstance(ref, str):
        try:
            text = Path(ref).read_text()
        except OSError as exc:
            raise ConfigError(f"scenario: cannot read {ref}: {exc}") from exc
        ref = json.loads(text)
    if not isinstance(ref, dict):
        raise ConfigError("scenario: expected a path, a serialized scenario or {'random': {...}}")
    if set(ref) == {"random"}:
        spec = RandomScenarioSpec.model_validate(ref["random"])
        return random_scenario(**spec.model_dump())
    return SensingScenario.from_dict(ref)


# --- subcommands -------------------------------------------------------------------


def _need(params, *names):
    missing = [n for n in names if getattr(params, n) is None]
    if missing:
        raise ConfigError("; ".join(f"params.{n}: field required" for n in missing))


def run_divergence(cfg: RunConfig):
    p = DivergenceParams.model_validate(cfg.params)
    op = p.operation
    inputs = p.model_dump(exclude_none=True)
    infinite = False
    if op in ("kl", "tsallis", "first_order", "kmb_fisher"):
        scn = load_scenario(cfg.scenario)
        theta = scn.theta0 if p.theta is None else p.theta
        inputs["theta"] = theta
        if op == "kl":
            d = divergence.kl_divergence(scn.rho_n, scn.state(theta))
            value, infinite = d.value, d.infinite
        elif op == "tsallis":
            _need(p, "q")
            value = divergence.tsallis_divergence(scn.rho_n, scn.state(theta), p.q)
        elif op == "first_order":
            _need(p, "vartheta0")
            value = divergence.kl_first_order(scn, p.vartheta0)
        else:
            value = divergence.kmb_fisher_information(scn.rho_n, scn.delta)
    elif op == "bernoulli_kl":
        _need(p, "n", "theta0")
        value = divergence.bernoulli_kl(p.n, p.theta0)
    elif op == "composite_exponent":
        _need(p, "theta0", "delta")
        value = divergence.qsp_composite_exponent(p.theta0, p.delta, p.mu_eps, p.sigma_eps)
    else:
        _need(p, "n", "theta0", "m")
        value = divergence.snr_bound(p.n, p.theta0, p.m)
    infinite = infinite or math.isinf(value)
    record = {"operation": op, "inputs": inputs, "value": value, "infinite": infinite}
    return "json", record, None, EXIT_OK


def run_complexity(cfg: RunConfig):
    p = ComplexityParams.model_validate(cfg.params)
    params = p.model_dump(exclude_none=True, exclude={"formula", "constant"})
    query = divergence.ComplexityQuery(p.formula, params, p.constant)
    value = divergence.sample_complexity(query)
    record = {
        "operation": "sample_complexity",
        "inputs": {"formula": p.formula, "constant": p.constant, **params},
        "value": value,
        "infinite": False,
    }
    return "json", record, None, EXIT_OK


def run_wss(cfg: RunConfig):
    p = WssParams.model_validate(cfg.params)
    scn = load_scenario(cfg.scenario)
    theta = scn.theta0 if p.hypothesis == "H1" else 0.0
    spectrum = scn.state(theta).spectrum(scn.rank_tol)
    if p.test == "gap" and scn.lambda_gap is None:
        raise ConfigError("scenario.lambda_gap: required for the gap test")
    rows = []
    for i in range(p.trials):
        trial_seed = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1, np.uint64)[0])
        diagram = schurwss.sample_young_diagram(spectrum, p.m, trial_seed)
        if p.test == "rank":
            decision = schurwss.rank_test(diagram, scn.r_n)
        elif p.test == "purity":
            decision = schurwss.rank_test(diagram, 1)
        else:
            decision = schurwss.spectral_gap_test(diagram, scn.theta0, scn.lambda_gap)
        rows.append({"seed": trial_seed, "M": p.m, "rows": str(diagram), "decision": decision.value})
    return "csv", rows, ["seed", "M", "rows", "decision"], EXIT_OK


def run_qsp(cfg: RunConfig):
    p = QspParams.model_validate(cfg.params)
    if cfg.scenario is not None:
        scn = load_scenario(cfg.scenario)
    else:
        scn = random_scenario(4, 1, 1, p.theta0, lambda_gap=p.lambda_gap, seed=cfg.seed)
    if p.mode == "ideal":
        filt = dmeqsp.build_ideal_filter(p.theta0, p.lambda_gap, p.delta)
    else:
        filt = dmeqsp.build_poly_filter(p.lambda_gap, p.x, p.degree, p.theta0)
        if not filt.effective:
            raise ConfigError(f"filter ineffective: achieved delta {filt.delta:.3g} >= 1/2")
    theta = p.theta0 if p.theta is None else p.theta
    p_true = dmeqsp.apply_qsp_channel(scn, theta, filt)
    run = dmeqsp.sample_flag_counts(p_true, p.m_ber, cfg.seed)
    p0, p1 = dmeqsp.flag_probabilities(filt.delta, p.theta0)
    h1 = bool(dmeqsp.decide_counts(run.successes, p.m_ber, p0, p1))
    # an exact step has no finite budget
    budget = None
    if filt.delta > 0:
        budget = dmeqsp.qsp_budget(filt.delta, p.lambda_gap, p.x, p.beta, p.theta0)
    record = {
        "p_true": p_true,
        "successes": run.successes,
        "m_ber": run.m_ber,
        "decision": "H1" if h1 else "H0",
        "filter": {"mode": filt.mode, "delta": filt.delta, "x": p.x, "degree": filt.degree,
                   "epsilon": filt.epsilon},
        "budget": None if budget is None else vars(budget),
    }
    return "json", record, None, EXIT_OK


def _scan_family(t: ScanTemplate, axis: str, value: float, seed: int):
    fields = t.model_dump()
    fields[axis] = int(value) if axis == "r_n" else value
    return [
        random_scenario(
            fields["d"], fields["r_n"], fields["r_s"], fields["theta0"],
            lambda_gap=fields["lambda_gap"], seed=seed + k,
        )
        for k in range(t.family_size)
    ]


def run_scan(cfg: RunConfig, plot_path: str | None = None):
    p = ScanParams.model_validate(cfg.params)
    rows, points, status = [], [], EXIT_OK
    for value in p.axis.values:
        family = _scan_family(p.template, p.axis.name, value, cfg.seed)
        row = {"control": value, "seed": cfg.seed}
        try:
            m_star = harness.find_sample_complexity(
                family, p.strategy, p.target_beta, p.alpha_cap, p.trials, cfg.seed,
                m_start=p.m_start, **p.options,
            )
        except harness.TargetUnreachable as exc:
            row.update(m_star="", alpha_hat="", beta_hat="", ci_lo="", ci_hi="")
            print(f"warning: {exc} at {p.axis.name}={value}", file=sys.stderr)
            status = EXIT_UNREACHABLE
        else:
            est = harness.estimate_errors(family, p.strategy, m_star, p.trials, cfg.seed, **p.options)
            row.update(m_star=m_star, alpha_hat=est.alpha_hat, beta_hat=est.beta_hat,
                       ci_lo=est.beta_ci[0], ci_hi=est.beta_ci[1])
            points.append((value, m_star))
        rows.append(row)
    if plot_path is not None:
        plot = {"axis": p.axis.name, "log_control": [math.log(c) for c, _ in points],
                "log_m_star": [math.log(m) for _, m in points]}
        if len(points) >= 3:
            try:
                fit = harness.fit_scaling(points)
                plot["fit"] = {"slope": fit.slope, "intercept": fit.intercept,
                               "r_squared": fit.r_squared}
            except ValueError as exc:
                plot["fit"] = {"error": str(exc)}
        write_atomic(plot_path, render_json(plot, cfg.model_dump()))
    columns = ["control", "m_star", "alpha_hat", "beta_hat", "ci_lo", "ci_hi", "seed"]
    return "csv", rows, columns, status


def run_twirl_check(cfg: RunConfig):
    p = TwirlParams.model_validate(cfg.params)
    rng = np.random.default_rng(cfg.seed)
    reports = []
    for _ in range(p.elements):
        res = schurwss.twirl(schurwss.random_povm_element(p.d**p.m, rng), p.m, p.d)
        reports.append({
            "residual": res.residual,
            "coefficients": [{"partition": list(k), "c": v} for k, v in res.coeffs.items()],
        })
    max_res = max(r["residual"] for r in reports)
    all_c = [c["c"] for r in reports for c in r["coefficients"]]
    record = {
        "m": p.m,
        "d": p.d,
        "max_residual": max_res,
        "coefficients_in_unit_interval": all(-1e-9 <= c <= 1 + 1e-9 for c in all_c),
        "elements": reports,
    }
    return "json", record, None, EXIT_OK


RUNNERS = {
    "divergence": run_divergence,
    "complexity": run_complexity,
    "wss": run_wss,
    "qsp": run_qsp,
    "twirl-check": run_twirl_check,
}


# --- argument parsing --------------------------------------------------------------

# subcommand -> [(flag, type, help)]; values land in params
OVERRIDES: dict[str, list[tuple[str, type, str]]] = {
    "divergence": [
        ("operation", str, "kl | tsallis | first_order | kmb_fisher | bernoulli_kl | "
                           "composite_exponent | snr"),
        ("theta", float, "mixing weight for scenario-based operations (default theta0)"),
        ("q", float, "Tsallis order in (0, 1)"),
        ("vartheta0", float, "perturbation strength for first_order"),
        ("n", float, "Bernoulli background"),
        ("theta0", float, "signal strength"),
        ("delta", float, "filter failure for composite_exponent"),
        ("mu-eps", float, "background offset"),
        ("sigma-eps", float, "background spread"),
        ("m", int, "number of copies for snr"),
    ],
    "complexity": [
        ("formula", str, " | ".join(divergence.FORMULAS)),
        ("constant", float, "prefactor (default 1)"),
        ("theta0", float, ""), ("beta", float, ""), ("r", float, ""), ("r-n", float, ""),
        ("d", float, ""), ("lambda-gap", float, ""), ("delta", float, ""),
        ("epsilon", float, ""),
    ],
    "wss": [
        ("m", int, "copies per diagram"),
        ("trials", int, "number of diagrams"),
        ("hypothesis", str, "H0 (noise only) or H1 (with signal)"),
        ("test", str, "rank | purity | gap"),
    ],
    "qsp": [
        ("mode", str, "ideal | polynomial"),
        ("delta", float, "filter failure (ideal mode)"),
        ("lambda-gap", float, "spectral gap"),
        ("x", float, "DME evolution parameter"),
        ("degree", int, "polynomial degree (polynomial mode)"),
        ("theta0", float, "signal strength"),
        ("theta", float, "true mixing weight (default theta0)"),
        ("m-ber", int, "Bernoulli rounds"),
        ("beta", float, "target type-2 error for the budget"),
    ],
    "scan": [
        ("strategy", str, " | ".join(harness.STRATEGIES)),
        ("trials", int, "Monte Carlo trials per rung"),
        ("target-beta", float, ""),
        ("alpha-cap", float, ""),
    ],
    "twirl-check": [
        ("m", int, "number of copies"),
        ("d", int, "local dimension"),
        ("elements", int, "random POVM elements to twirl"),
    ],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incodetect", description="Incoherent signal detection lab."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int, help="master seed (u64)")
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--format", choices=("json", "csv"))
        if name in ("divergence", "wss", "qsp"):
            sp.add_argument("--scenario", help="scenario JSON file")
        if name == "scan":
            sp.add_argument("--emit-plot-data", metavar="PATH",
                            help="also write log-log points and the fitted slope as JSON")
        for flag, typ, help_ in OVERRIDES[name]:
            sp.add_argument(f"--{flag}", type=typ, help=help_ or None,
                            dest=f"param_{flag.replace('-', '_')}")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
    cfg = RunConfig.model_validate(data)
    if cfg.subcommand is not None and cfg.subcommand != args.subcommand:
        raise ConfigError(
            f"subcommand: config is for {cfg.subcommand!r}, invoked {args.subcommand!r}"
        )
    params = dict(cfg.params)
    for key, value in vars(args).items():
        if key.startswith("param_") and value is not None:
            params[key[len("param_"):]] = value
    updates = {"subcommand": args.subcommand, "params": params}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["output"] = args.out
    if args.format is not None:
        updates["format"] = args.format
    if getattr(args, "scenario", None) is not None:
        updates["scenario"] = args.scenario
    return RunConfig.model_validate({**cfg.model_dump(), **updates})


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "config"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if cfg.subcommand == "scan":
            kind, payload, columns, status = run_scan(cfg, args.emit_plot_data)
        else:
            kind, payload, columns, status = RUNNERS[cfg.subcommand](cfg)
        config = cfg.model_dump()
        fmt = cfg.format or kind
        if fmt == "json":
            if isinstance(payload, list):
                payload = {"records": payload}
            text = render_json(payload, config)
        else:
            rows = payload if isinstance(payload, list) else [payload]
            text = render_csv(rows, columns or list(rows[0]), config)
        write_atomic(cfg.output, text)
        return status
    except ValidationError as exc:
        print(f"error: {_format_validation(exc)}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except harness.TargetUnreachable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except (ConfigError, StateError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
