"""Batch command-line interface.

Subcommands chain the pipeline stages through files: ingest -> intrinsic
-> simulate -> hysteresis / cointegration, plus the forward-looking
forecast.  One JSON config document with per-stage sections drives
everything; unknown keys are rejected.  Every invocation writes its
outputs plus a manifest (effective config, seed, input/output digests,
tool version, wall time) into one output directory, and `replay`
re-executes a manifest and verifies the output digests.

Exit codes: 0 success, 2 input/config validation error, 3 computation
error.  Environment overrides: TIPPINGMARKETS_SEED, TIPPINGMARKETS_JOBS.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import multiprocessing
import os
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .data_ingest import (
    FundamentalsSeries,
    IngestError,
    derive_fundamentals,
    parse_shiller_csv,
)
from .econometrics import (
    engle_granger,
    load_critical_values,
    pp_test,
    stock_watson_lags,
)
from .engine import (
    SimulationConfig,
    SimulationRun,
    config_from_dict,
    config_to_dict,
    run_seed,
    simulate,
)
from .intrinsic import IntrinsicConfig, IntrinsicSeries, intrinsic_series
from .tipping import (
    decline_indicator_series,
    forecast_pipeline,
    hysteresis_curve,
    label_branches,
    sp500_hysteresis,
    tipping_point,
)


class ValidationError(ValueError):
    """Bad inputs or configuration (exit code 2)."""


class ComputationError(RuntimeError):
    """A pipeline stage failed while computing (exit code 3)."""


EXIT_VALIDATION = 2
EXIT_COMPUTATION = 3

_INTRINSIC_KEYS = {
    "window_years",
    "growth",
    "roic",
    "long_run_wacc",
    "steps_per_year",
    "debt_to_equity",
    "tax_rate",
}
_INGEST_KEYS = {"columns", "rates_in_percent", "base_month"}
_HYSTERESIS_KEYS = {
    "horizon",
    "dt",
    "bin_width",
    "min_count",
    "smoothing_window",
    "rule",
    "threshold",
    "episodes",
}
_COINTEGRATION_KEYS = {"lags", "critical_table"}
_FORECAST_KEYS = {"earnings_max_order", "wacc_max_order"}
_TOP_KEYS = {
    "ingest",
    "intrinsic",
    "simulation",
    "hysteresis",
    "cointegration",
    "forecast",
    "seed",
    "jobs",
}

DEFAULT_CONFIG: dict[str, Any] = {
    "ingest": {"columns": {}, "rates_in_percent": True, "base_month": None},
    "intrinsic": {
        "window_years": 5,
        "growth": 0.017,
        "roic": 0.07,
        "long_run_wacc": None,
        "steps_per_year": 12,
        "debt_to_equity": 0.197,
        "tax_rate": 0.0,
    },
    "simulation": {
        "n_agents": 500,
        "alpha": 0.2,
        "beta": 0.3,
        "gamma": 120.0,
        "p_construct": 0.2,
        "concession_supply": -0.005,
        "concession_demand": 0.005,
        "price_step_supply": 0.01,
        "price_step_demand": -0.01,
        "ticks": 120,
        "seed": 0,
        # Most trades need more than the bare 10*N cap at the standard
        # parameter set; the shipped default avoids spurious aborts.
        "steps_per_tick_limit": 20000,
    },
    "hysteresis": {
        "horizon": 12,
        "dt": 1,
        "bin_width": 0.05,
        "min_count": 20,
        "smoothing_window": 12,
        "rule": "max-slope",
        "threshold": 0.95,
        "episodes": None,
    },
    "cointegration": {"lags": 8, "critical_table": "engle_granger_rho"},
    "forecast": {"earnings_max_order": 5, "wacc_max_order": 2},
    "seed": 0,
    "jobs": 1,
}

_SECTION_KEYS = {
    "ingest": _INGEST_KEYS,
    "intrinsic": _INTRINSIC_KEYS,
    "simulation": set(config_to_dict(SimulationConfig())),
    "hysteresis": _HYSTERESIS_KEYS,
    "cointegration": _COINTEGRATION_KEYS,
    "forecast": _FORECAST_KEYS,
}


def load_config(path: Optional[str]) -> dict[str, Any]:
    """Effective config: defaults overlaid with the user document.

    Unknown top-level or section keys are rejected (strict mode).
    """
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file is not valid JSON: {exc}") from None
    unknown = set(user) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for section, value in user.items():
        if section in ("seed", "jobs"):
            cfg[section] = value
            continue
        if not isinstance(value, dict):
            raise ValidationError(f"config section {section!r} must be an object")
        bad = set(value) - _SECTION_KEYS[section]
        if bad:
            raise ValidationError(f"unknown keys in config section {section!r}: {sorted(bad)}")
        cfg[section].update(value)
    return cfg


def _intrinsic_config(cfg: dict[str, Any]) -> IntrinsicConfig:
    try:
        return IntrinsicConfig(**cfg["intrinsic"])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad intrinsic config: {exc}") from None


def _simulation_config(cfg: dict[str, Any], **overrides) -> SimulationConfig:
    data = dict(cfg["simulation"])
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return config_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad simulation config: {exc}") from None


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class Manifest:
    """Records one command invocation for reproduction."""

    def __init__(self, command: str, config: dict[str, Any], seed: Optional[int]):
        self.command = command
        self.config = config
        self.seed = seed
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.params: dict[str, Any] = {}
        self._t0 = time.monotonic()

    def add_input(self, path: Path) -> None:
        self.inputs[str(path)] = _sha256(path)

    def add_output(self, path: Path) -> None:
        self.outputs[path.name] = _sha256(path)

    def write(self, outdir: Path) -> Path:
        payload = {
            "command": self.command,
            "params": self.params,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "tool_version": __version__,
            "wall_time_s": round(time.monotonic() - self._t0, 3),
        }
        path = outdir / "manifest.json"
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        return path


def _write(outdir: Path, name: str, text: str, manifest: Manifest) -> Path:
    path = outdir / name
    path.write_text(text)
    manifest.add_output(path)
    return path


def _embed_config(json_text: str, config: dict[str, Any]) -> str:
    payload = json.loads(json_text)
    payload["effective_config"] = config
    return json.dumps(payload, indent=2, sort_keys=True)


def _read_input(path: str, manifest: Manifest) -> str:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"input file not found: {path}")
    manifest.add_input(p)
    return p.read_text()


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _env_seed(default: Optional[int]) -> Optional[int]:
    env = os.environ.get("TIPPINGMARKETS_SEED")
    return int(env) if env else default


def _env_jobs(default: int) -> int:
    env = os.environ.get("TIPPINGMARKETS_JOBS")
    return int(env) if env else default


# -- commands ------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    manifest = Manifest("ingest", config, None)
    manifest.params = {"csv": args.csv}
    outdir = _outdir(args.out)
    raw = _read_input(args.csv, manifest)
    section = config["ingest"]
    try:
        parsed = parse_shiller_csv(
            raw,
            columns=section["columns"] or None,
            rates_in_percent=section["rates_in_percent"],
        )
        fund = derive_fundamentals(parsed, _intrinsic_config(config), section["base_month"])
    except IngestError as exc:
        raise ComputationError(str(exc)) from None
    _write(outdir, "fundamentals.json", _embed_config(fund.to_json(), config), manifest)
    _write(outdir, "fundamentals.csv", fund.to_csv(), manifest)
    if parsed.rejected_rows:
        report = "\n".join(f"{idx},{reason}" for idx, reason in parsed.rejected_rows)
        _write(outdir, "rejected_rows.csv", "row,reason\n" + report + "\n", manifest)
    manifest.write(outdir)
    print(f"ingested {len(fund)} months -> {outdir}")


def cmd_intrinsic(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    manifest = Manifest("intrinsic", config, None)
    manifest.params = {
        "fundamentals": args.fundamentals,
        "forward_correction": not args.no_forward_correction,
    }
    outdir = _outdir(args.out)
    fund = FundamentalsSeries.from_json(_read_input(args.fundamentals, manifest))
    try:
        series = intrinsic_series(
            fund, _intrinsic_config(config), corrected=not args.no_forward_correction
        )
    except ValueError as exc:
        raise ComputationError(str(exc)) from None
    _write(outdir, "intrinsic.json", _embed_config(series.to_json(), config), manifest)
    _write(outdir, "intrinsic.csv", series.to_csv(), manifest)
    manifest.write(outdir)
    print(f"intrinsic series of {len(series)} months -> {outdir}")


def _simulate_worker(payload: tuple[dict, list[float], int, int]) -> str:
    sim_cfg, intrinsic, master, index = payload
    run = simulate(config_from_dict(sim_cfg), np.array(intrinsic), seed=run_seed(master, index))
    return run.to_json()


def cmd_simulate(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    seed = _env_seed(args.seed)
    if seed is None:
        seed = config["seed"]
    jobs = _env_jobs(args.jobs if args.jobs else config["jobs"])
    manifest = Manifest("simulate", config, seed)
    manifest.params = {"intrinsic": args.intrinsic, "runs": args.runs}
    outdir = _outdir(args.out)
    series = IntrinsicSeries.from_json(_read_input(args.intrinsic, manifest))
    sim_cfg = _simulation_config(config, ticks=args.ticks)
    if sim_cfg.ticks > len(series):
        raise ValidationError(
            f"config asks for {sim_cfg.ticks} ticks but the intrinsic series has {len(series)}"
        )
    payloads = [
        (config_to_dict(sim_cfg), series.values.tolist(), seed, k) for k in range(args.runs)
    ]
    try:
        if jobs > 1:
            with multiprocessing.Pool(jobs) as pool:
                run_jsons = pool.map(_simulate_worker, payloads)
        else:
            run_jsons = [_simulate_worker(p) for p in payloads]
    except (ValueError, RuntimeError) as exc:
        raise ComputationError(str(exc)) from None
    for k, run_json in enumerate(run_jsons):
        payload = json.loads(run_json)
        payload["effective_config"] = config
        payload["replay"] = {"master_seed": seed, "run_index": k}
        _write(outdir, f"run_{k:03d}.json", json.dumps(payload, indent=2, sort_keys=True), manifest)
        run = SimulationRun(**_run_arrays(payload), config=sim_cfg)
        _write(outdir, f"run_{k:03d}.csv", run.to_csv(), manifest)
    manifest.write(outdir)
    print(f"{args.runs} runs of {sim_cfg.ticks} ticks -> {outdir}")


def _run_arrays(payload: dict) -> dict:
    ticks = len(payload["prices"])
    return {
        "prices": np.array(payload["prices"]),
        "trade_ticks": np.arange(ticks),
        "moves": np.array(payload["moves"], dtype=int),
        "accepted": np.array(payload["accepted"], dtype=bool),
        "lambda_trade": np.array(payload["lambda_trade"]),
        "p_supply": np.array(payload["p_supply"]),
        "p_demand": np.array(payload["p_demand"]),
        "clustering_supply": np.array(payload["clustering_supply"]),
        "clustering_demand": np.array(payload["clustering_demand"]),
        "intrinsic": np.array(payload["intrinsic"]),
        "aborted_ticks": payload["aborted_ticks"],
    }


def _load_runs(paths: list[Path], manifest: Manifest) -> list[dict]:
    runs = []
    for path in sorted(paths):
        manifest.add_input(path)
        runs.append(json.loads(path.read_text()))
    if not runs:
        raise ValidationError("no run files found")
    return runs


def cmd_hysteresis(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    section = config["hysteresis"]
    manifest = Manifest("hysteresis", config, None)
    outdir = _outdir(args.out)

    if args.runs_dir:
        manifest.params = {"runs_dir": args.runs_dir}
        run_paths = list(Path(args.runs_dir).glob("run_*.json"))
        runs = _load_runs(run_paths, manifest)
        pooled_r, pooled_i, pooled_b = [], [], []
        curves = []
        for payload in runs:
            prices = np.array(payload["prices"])
            ratio = prices / np.array(payload["intrinsic"])
            ind = decline_indicator_series(prices, section["horizon"], section["dt"])
            asc = label_branches(ratio, section["smoothing_window"])
            pooled_r.append(ratio)
            pooled_i.append(ind)
            pooled_b.append(asc)
            try:
                curves.append(
                    hysteresis_curve(
                        ratio, ind, asc, section["bin_width"], section["min_count"]
                    )
                )
            except ValueError:
                continue
        try:
            pooled = hysteresis_curve(
                np.concatenate(pooled_r),
                np.concatenate(pooled_i),
                np.concatenate(pooled_b),
                section["bin_width"],
                section["min_count"],
            )
            estimate = tipping_point(curves, section["rule"], section["threshold"])
        except ValueError as exc:
            raise ComputationError(str(exc)) from None
    else:
        if not (args.market and args.intrinsic):
            raise ValidationError("need either --runs-dir or both --market and --intrinsic")
        manifest.params = {"market": args.market, "intrinsic": args.intrinsic}
        fund = FundamentalsSeries.from_json(_read_input(args.market, manifest))
        series = IntrinsicSeries.from_json(_read_input(args.intrinsic, manifest))
        episodes = section["episodes"]
        try:
            pooled = sp500_hysteresis(
                fund.months,
                fund.real_price,
                series,
                horizon=section["horizon"],
                dt=section["dt"],
                bin_width=section["bin_width"],
                min_count=section["min_count"],
                smoothing_window=section["smoothing_window"],
                episodes=[tuple(e) for e in episodes] if episodes else None,
            )
            estimate = tipping_point(pooled, section["rule"], section["threshold"])
        except ValueError as exc:
            raise ComputationError(str(exc)) from None

    _write(outdir, "curve.csv", pooled.to_csv(), manifest)
    _write(outdir, "curve.json", _embed_config(pooled.to_json(), config), manifest)
    tipping_payload = {
        "r_c_mean": estimate.r_c_mean,
        "r_c_std": estimate.r_c_std,
        "values": estimate.values.tolist(),
        "detection_rule": estimate.detection_rule,
        "skipped": estimate.skipped,
        "effective_config": config,
    }
    _write(outdir, "tipping.json", json.dumps(tipping_payload, indent=2, sort_keys=True), manifest)
    manifest.write(outdir)
    print(f"tipping point {estimate.r_c_mean:.3f} +/- {estimate.r_c_std:.3f} -> {outdir}")


def cmd_cointegration(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    section = config["cointegration"]
    manifest = Manifest("cointegration", config, None)
    manifest.params = {"market": args.market, "intrinsic": args.intrinsic}
    outdir = _outdir(args.out)
    fund = FundamentalsSeries.from_json(_read_input(args.market, manifest))
    series = IntrinsicSeries.from_json(_read_input(args.intrinsic, manifest))

    common, m_idx, i_idx = np.intersect1d(fund.months, series.months, return_indices=True)
    if len(common) < 50:
        raise ValidationError("market and intrinsic series overlap on fewer than 50 months")
    log_m = np.log(fund.real_price[m_idx])
    log_i = np.log(series.values[i_idx])
    lags = section["lags"]
    if lags is None:
        lags = stock_watson_lags(len(common))

    def unit_root_block(values: np.ndarray) -> dict:
        levels = pp_test(values, lags=lags, deterministic_spec="constant")
        diffs = pp_test(np.diff(values), lags=lags, deterministic_spec="constant")
        return {
            "levels": {"z_rho": levels.z_rho, "z_t": levels.z_t},
            "first_differences": {"z_rho": diffs.z_rho, "z_t": diffs.z_t},
            "lags": lags,
            "n_obs": levels.n_obs,
        }

    try:
        critical = load_critical_values(section["critical_table"])
        eg_est = engle_granger(log_m, log_i, lags=lags, spec="estimated", critical_values=critical)
        eg_imp = engle_granger(log_m, log_i, lags=lags, spec="imposed", critical_values=critical)
        report = {
            "months": int(len(common)),
            "unit_roots": {
                "log_market": unit_root_block(log_m),
                "log_intrinsic": unit_root_block(log_i),
            },
            "pp_levels_critical_5pct": load_critical_values("pp_levels_rho")[0.05],
            "engle_granger": {
                spec: {
                    "z_rho": res.residual_test.z_rho,
                    "z_t": res.residual_test.z_t,
                    "intercept": res.intercept,
                    "slope": res.slope,
                    "rejects": {str(l): res.rejects_at(l) for l in sorted(critical)},
                }
                for spec, res in (("estimated", eg_est), ("imposed", eg_imp))
            },
            "critical_values": {str(l): v for l, v in sorted(critical.items())},
            "effective_config": config,
        }
    except ValueError as exc:
        raise ComputationError(str(exc)) from None
    _write(outdir, "cointegration.json", json.dumps(report, indent=2, sort_keys=True), manifest)
    manifest.write(outdir)
    verdict = "rejects" if eg_est.rejects_at(0.05) else "fails to reject"
    print(f"EG z_rho {eg_est.residual_test.z_rho:.3f} ({verdict} at 5%) -> {outdir}")


def cmd_forecast(args: argparse.Namespace) -> None:
    config = load_config(args.config)
    seed = _env_seed(args.seed)
    if seed is None:
        seed = config["seed"]
    manifest = Manifest("forecast", config, seed)
    manifest.params = {
        "fundamentals": args.fundamentals,
        "horizon": args.horizon,
        "runs": args.runs,
    }
    outdir = _outdir(args.out)
    fund = FundamentalsSeries.from_json(_read_input(args.fundamentals, manifest))
    section = config["forecast"]
    try:
        result = forecast_pipeline(
            fund,
            _intrinsic_config(config),
            _simulation_config(config),
            horizon_months=args.horizon,
            n_runs=args.runs,
            rng=np.random.default_rng(seed),
            earnings_max_order=section["earnings_max_order"],
            wacc_max_order=section["wacc_max_order"],
        )
    except ValueError as exc:
        raise ComputationError(str(exc)) from None
    _write(outdir, "forecast.json", _embed_config(result.to_json(), config), manifest)
    _write(outdir, "forecast.csv", result.to_csv(), manifest)
    manifest.write(outdir)
    print(
        f"forecast over {args.horizon} months, {result.n_runs} runs "
        f"({result.failed_runs} failed) -> {outdir}"
    )


def cmd_replay(args: argparse.Namespace) -> None:
    path = Path(args.manifest)
    if not path.exists():
        raise ValidationError(f"manifest not found: {args.manifest}")
    manifest = json.loads(path.read_text())
    outdir = _outdir(args.out)

    config_path = outdir / "_replay_config.json"
    config_path.write_text(json.dumps(manifest["config"], indent=2, sort_keys=True))
    command = manifest["command"]
    params = manifest["params"]
    argv = [command, "--config", str(config_path), "--out", str(outdir)]
    if command == "ingest":
        argv += ["--csv", params["csv"]]
    elif command == "intrinsic":
        argv += ["--fundamentals", params["fundamentals"]]
        if not params["forward_correction"]:
            argv += ["--no-forward-correction"]
    elif command == "simulate":
        argv += ["--intrinsic", params["intrinsic"], "--runs", str(params["runs"]),
                 "--seed", str(manifest["seed"])]
    elif command == "hysteresis":
        if "runs_dir" in params:
            argv += ["--runs-dir", params["runs_dir"]]
        else:
            argv += ["--market", params["market"], "--intrinsic", params["intrinsic"]]
    elif command == "cointegration":
        argv += ["--market", params["market"], "--intrinsic", params["intrinsic"]]
    elif command == "forecast":
        argv += ["--fundamentals", params["fundamentals"], "--horizon", str(params["horizon"]),
                 "--runs", str(params["runs"]), "--seed", str(manifest["seed"])]
    else:
        raise ValidationError(f"cannot replay command {command!r}")

    code = main(argv)
    if code != 0:
        raise ComputationError(f"replayed command exited with {code}")
    mismatched = []
    for name, digest in manifest["outputs"].items():
        produced = outdir / name
        if not produced.exists() or _sha256(produced) != digest:
            mismatched.append(name)
    if mismatched:
        raise ComputationError(f"replay digests differ for: {', '.join(sorted(mismatched))}")
    print(f"replay of {command} reproduced {len(manifest['outputs'])} outputs exactly")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tippingmarkets",
        description="Bargaining-market simulator and market-overpricing analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a monthly market CSV into fundamentals")
    p.add_argument("--csv", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("intrinsic", help="compute the intrinsic-value series")
    p.add_argument("--fundamentals", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--no-forward-correction", action="store_true")
    p.set_defaults(func=cmd_intrinsic)

    p = sub.add_parser("simulate", help="run bargaining simulations on an intrinsic path")
    p.add_argument("--intrinsic", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--ticks", type=int)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hysteresis", help="extract hysteresis curve and tipping point")
    p.add_argument("--runs-dir")
    p.add_argument("--market")
    p.add_argument("--intrinsic")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hysteresis)

    p = sub.add_parser("cointegration", help="unit-root and cointegration report")
    p.add_argument("--market", required=True)
    p.add_argument("--intrinsic", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cointegration)

    p = sub.add_parser("forecast", help="loss/gain forecast from projected fundamentals")
    p.add_argument("--fundamentals", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--horizon", type=int, default=21)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("replay", help="re-run a manifest and verify output digests")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ComputationError as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
