"""Command-line entry point: ``vbd-twohost {simulate,r0,generate,calibrate,analyze}``.

Options may come from a JSON file given with ``--config``; flags on the
command line take precedence. Exit codes: 0 success, 2 input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import analysis, calibrate, datagen, reproduction
from .integrator import IntegrationError, Trajectory, integrate
from .model import ModelParams, ParameterError, SystemState

log = logging.getLogger("vbd_twohost")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

OUTPUTS = {
    "simulate": ("trajectory.csv", "summary.json"),
    "r0": ("r0.json", "r0_seasonal.csv"),
    "generate": ("dataset.csv", "dataset.meta.json"),
    "calibrate": ("fit.json", "fit_curves.csv"),
    "analyze": ("report.json", "correlation.csv", "series.csv"),
}

DEFAULTS = {
    "params": None,
    "out": ".",
    "seed": 0,
    "days": None,
    "dataset": None,
    "starts": 16,
    "force": False,
    "quiet": False,
    "sigma_d": 0.15,
    "sigma_nd": 0.20,
    "timestamp": False,
    "initial": None,  # {"i_md": .., "i_m": .., "i_v": ..}; config file only
}


class UserError(Exception):
    pass


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load_params(path) -> ModelParams:
    if path is None:
        return ModelParams()
    try:
        return ModelParams.load(path)
    except FileNotFoundError:
        raise UserError(f"params file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UserError(f"params file {path} is not valid JSON: {exc}") from None
    except (ParameterError, TypeError) as exc:
        raise UserError(f"invalid parameter in {path}: {exc}") from None


def _initial_state(opts, params: ModelParams):
    spec = opts["initial"]
    if spec is None:
        return datagen.default_initial_state(params)
    if not isinstance(spec, dict) or set(spec) - {"i_md", "i_m", "i_v"}:
        raise UserError('initial must be an object with keys among "i_md", "i_m", "i_v"')
    default = datagen.default_initial_state(params)
    counts = {"i_md": default.i_md, "i_m": default.i_m, "i_v": default.i_v, **spec}
    state = SystemState.from_infected(params, counts["i_md"], counts["i_m"], counts["i_v"])
    try:
        state.check(params)
    except ValueError as exc:
        raise UserError(f"invalid initial state: {exc}") from None
    return state


def _load_dataset(path) -> datagen.Dataset:
    if path is None:
        raise UserError("--dataset is required")
    if not Path(path).is_file():
        raise UserError(f"dataset file not found: {path}")
    try:
        dataset = datagen.read_csv(path)
    except datagen.DatasetFormatError as exc:
        raise UserError(str(exc)) from None
    if len(dataset) == 0:
        raise UserError(f"{path}: dataset has a valid header but no rows "
                        f"(schema: {','.join(datagen.COLUMNS)})")
    return dataset


def _prepare_out(opts, command) -> Path:
    out = Path(opts["out"])
    targets = [out / name for name in OUTPUTS[command]]
    existing = [str(p) for p in targets if p.exists()]
    if existing and not opts["force"]:
        raise UserError(f"refusing to overwrite {', '.join(existing)} (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(opts) -> None:
    params = _load_params(opts["params"])
    days = opts["days"] or 1080
    initial = _initial_state(opts, params)
    out = _prepare_out(opts, "simulate")
    traj = integrate(params, initial, 0.0, float(days))
    traj.to_csv(out / "trajectory.csv")
    report = analysis.summarize(traj, datagen.dataset_from_trajectory(traj), params)
    _dump_json(out / "summary.json", report.to_dict())


def cmd_r0(opts) -> None:
    params = _load_params(opts["params"])
    days = opts["days"] or 365
    out = _prepare_out(opts, "r0")
    parts = reproduction.r0_effective_parts(params, params.a_mean)
    eff = reproduction.effective_params(params)
    series = reproduction.r0_seasonal_series(params, 0.0, float(days), 1.0)
    report = {
        "a": params.a_mean,
        "effective_params": {"b_eff": eff.b_eff, "c_eff": eff.c_eff, "gamma_eff": eff.gamma_eff},
        "r0_effective": parts.value,
        "r0_host_to_vector": parts.host_to_vector,
        "r0_vector_to_host": parts.vector_to_host,
        "r0_ngm": reproduction.r0_ngm(params, params.a_mean),
        "seasonal": series.summary(),
        "seasonal_days": days,
    }
    _dump_json(out / "r0.json", report)
    series.to_csv(out / "r0_seasonal.csv")


def cmd_generate(opts) -> None:
    params = _load_params(opts["params"])
    days = opts["days"] or 1080
    try:
        noise = datagen.NoiseConfig(opts["sigma_d"], opts["sigma_nd"], int(opts["seed"]))
    except ValueError as exc:
        raise UserError(str(exc)) from None
    initial = _initial_state(opts, params)
    out = _prepare_out(opts, "generate")
    dataset = datagen.generate_dataset(params, initial, int(days), noise)
    if opts["timestamp"]:
        dataset.provenance["created"] = datetime.now(timezone.utc).isoformat()
    datagen.write_csv(dataset, out / "dataset.csv")
    if dataset.provenance["range_flags"]:
        log.warning("values outside reference ranges: %s", sorted(dataset.provenance["range_flags"]))


def cmd_calibrate(opts) -> None:
    params = _load_params(opts["params"])
    dataset = _load_dataset(opts["dataset"])
    try:
        spec = calibrate.FitSpec(n_starts=int(opts["starts"]), seed=int(opts["seed"]))
    except ValueError as exc:
        raise UserError(str(exc)) from None
    fit = calibrate.multi_start_calibrate(dataset, params, spec)
    out = _prepare_out(opts, "calibrate")
    (out / "fit.json").write_text(fit.to_json() + "\n")
    fit.bands.to_csv(out / "fit_curves.csv")


def cmd_analyze(opts) -> None:
    params = _load_params(opts["params"])
    dataset = _load_dataset(opts["dataset"])
    if "params" in dataset.provenance and opts["params"] is None:
        params = ModelParams.from_dict(dataset.provenance["params"])
    out = _prepare_out(opts, "analyze")
    traj = Trajectory(dataset.times.copy(), dataset.model_values.copy())
    report = analysis.summarize(traj, dataset, params)
    _dump_json(out / "report.json", report.to_dict())
    report.correlation.to_csv(out / "correlation.csv")
    report.series_to_csv(out / "series.csv")


COMMANDS = {
    "simulate": cmd_simulate,
    "r0": cmd_r0,
    "generate": cmd_generate,
    "calibrate": cmd_calibrate,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vbd-twohost", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON file of option values")
        p.add_argument("--params", type=Path, help="model parameter JSON")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--days", type=int)
        p.add_argument("--dataset", type=Path)
        p.add_argument("--starts", type=int)
        p.add_argument("--sigma-d", dest="sigma_d", type=float)
        p.add_argument("--sigma-nd", dest="sigma_nd", type=float)
        p.add_argument("--timestamp", action="store_true", default=None,
                       help="record creation time in the dataset metadata")
        p.add_argument("--force", action="store_true", default=None)
        p.add_argument("--quiet", action="store_true", default=None)
    return parser


def resolve_options(args) -> dict:
    opts = dict(DEFAULTS)
    if args.config is not None:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UserError(f"cannot read config {args.config}: {exc}") from None
        unknown = sorted(set(config) - set(DEFAULTS))
        if unknown:
            raise UserError(f"unknown config keys: {', '.join(unknown)}")
        opts.update(config)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = resolve_options(args)
        logging.basicConfig(level=logging.WARNING if opts["quiet"] else logging.INFO,
                            format="%(levelname)s: %(message)s")
        COMMANDS[args.command](opts)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IntegrationError, calibrate.CalibrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
