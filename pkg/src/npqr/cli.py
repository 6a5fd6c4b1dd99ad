"""Command-line interface.

    npqr fit|infer|surface|simulate --config run.ini [overrides]

``fit`` computes point estimates only, ``infer`` adds standard errors, bands
and p-values, ``surface`` writes a grid CSV for plotting, and ``simulate``
runs the Monte-Carlo coverage study. Exit codes: 0 success, 2 configuration or
data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

from npqr.api import emit_surface, format_report, npqr, write_result_json
from npqr.basis import TauGrid, basis_from_config
from npqr.config import RunConfig, SimConfig, load_config, parse_config, parse_floats
from npqr.dataio import build_design, load_csv
from npqr.errors import ConfigError, NpqrError, NumericalError
from npqr.functional import build_load
from npqr.inference import PROCESSES
from npqr.rearrange import RearrangeSpec
from npqr.simulate import run_simulation

log = logging.getLogger("npqr")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--taus", help="comma list or start:stop:count")
    common.add_argument("--print-taus", dest="print_taus", help="taus shown in the report")
    common.add_argument("--nderivs", type=int, choices=(0, 1, 2))
    common.add_argument("--average", action=argparse.BooleanOptionalAction, default=None,
                        help="average the functional over the sample of W")
    common.add_argument("--process", choices=PROCESSES)
    common.add_argument("--B", type=int, help="number of simulation/bootstrap draws")
    common.add_argument("--alpha", type=float)
    band = common.add_mutually_exclusive_group()
    band.add_argument("--uniform", dest="uniform", action="store_true", default=None)
    band.add_argument("--pointwise", dest="uniform", action="store_false")
    common.add_argument("--se", choices=("conditional", "unconditional"))
    common.add_argument("--rearrange", choices=("none", "quantile", "var", "both"))
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", type=Path, help="output path (JSON, or CSV for surface)")
    common.add_argument("-q", "--quiet", action="store_true", help="do not print the report")

    p = argparse.ArgumentParser(prog="npqr", description="Nonparametric series quantile regression.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="point estimates only")
    sub.add_parser("infer", parents=[common], help="estimates with bands and p-values")
    s = sub.add_parser("surface", parents=[common], help="write the estimate grid as CSV")
    s.add_argument("--field", default="point_est", choices=("point_est", "ci_lower", "ci_upper"))
    sim = sub.add_parser("simulate", parents=[common], help="Monte-Carlo coverage study")
    sim.add_argument("--dgp", choices=("location", "location_scale"))
    sim.add_argument("--n", type=int)
    sim.add_argument("--R", type=int)
    sim.add_argument("--methods", help="comma list of processes")
    return p


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags take precedence over config keys."""
    taus = cfg.taus
    if args.taus is not None or args.print_taus is not None:
        t = parse_floats(args.taus) if args.taus is not None else taus.taus
        pt = parse_floats(args.print_taus) if args.print_taus is not None else \
            tuple(v for v in taus.print_taus if v in t) or ()
        taus = TauGrid(t, pt)
    load = cfg.load
    if args.nderivs is not None:
        load = dataclasses.replace(load, deriv=args.nderivs)
    if args.average is not None:
        load = dataclasses.replace(load, average=args.average)
    inf = {}
    for flag, key in (("process", "process"), ("B", "B"), ("alpha", "alpha"), ("uniform", "uniform"),
                      ("se", "se_mode"), ("seed", "rng_seed"), ("threads", "threads")):
        if getattr(args, flag) is not None:
            inf[key] = getattr(args, flag)
    inference = dataclasses.replace(cfg.inference, **inf)
    rearrange = cfg.rearrange
    if args.rearrange is not None:
        rearrange = None if args.rearrange == "none" else \
            dataclasses.replace(rearrange or RearrangeSpec(), dims=args.rearrange)
    sim = cfg.simulate
    if args.command == "simulate":
        upd = {k: getattr(args, k) for k in ("dgp", "n", "R") if getattr(args, k) is not None}
        if args.methods:
            upd["methods"] = tuple(s.strip() for s in args.methods.split(",") if s.strip())
        if args.seed is not None:
            upd["seed"] = args.seed
        sim = SimConfig(**{**dataclasses.asdict(sim), **upd})
    return dataclasses.replace(cfg, taus=taus, load=load, inference=inference, rearrange=rearrange,
                               simulate=sim)


def _load_inputs(cfg: RunConfig):
    if cfg.data_path is None or cfg.model is None:
        raise ConfigError("the config needs a [data] path and a [model] section")
    ds = load_csv(cfg.data_path, cfg.model)
    return ds, basis_from_config(cfg.basis, ds.treatment)


def run(cfg: RunConfig, command: str = "infer", out: Path | None = None, quiet: bool = False,
        field: str = "point_est", stream=None):
    """Execute one command; returns the InferenceResult or the simulation report."""
    stream = stream or sys.stdout
    if command == "simulate":
        report = run_simulation(cfg)
        path = out or cfg.output.json
        text = json.dumps(report, indent=1) + "\n"
        if path:
            Path(path).write_text(text, encoding="utf-8")
        if not quiet:
            stream.write(text)
        return report

    if command == "fit":
        cfg = dataclasses.replace(cfg, inference=dataclasses.replace(cfg.inference, process="none"))
    ds, basis = _load_inputs(cfg)
    result = npqr(ds, cfg.model, basis, cfg.taus, cfg.load, cfg.inference, cfg.rearrange)
    if command == "surface":
        path = out or cfg.output.surface
        if path is None:
            raise ConfigError("surface needs --out or [output] surface")
        emit_surface(result, path, field)
        return result

    path = out or cfg.output.json
    if path:
        write_result_json(result, path)
    title = f"{cfg.model.treatment_name}: process={cfg.inference.process}, nderivs={cfg.load.deriv}, " \
            f"average={cfg.load.average}, {'uniform' if cfg.inference.uniform else 'pointwise'} bands, " \
            f"alpha={cfg.inference.alpha}"
    report = format_report(result, cfg.taus, title)
    if cfg.output.report:
        Path(cfg.output.report).write_text(report, encoding="utf-8")
    if cfg.output.load:
        design = build_design(ds, cfg.model, basis)
        build_load(cfg.load, basis, ds, design).to_csv(cfg.output.load, design.column_names)
    if not quiet:
        stream.write(report)
    return result


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="npqr: %(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda message, *a, **k: log.warning("%s", message)
            if args.config is not None:
                cfg = load_config(args.config)
            elif args.command == "simulate":
                cfg = parse_config("")
            else:
                raise ConfigError("--config is required")
            cfg = apply_overrides(cfg, args)
            run(cfg, args.command, args.out, args.quiet, getattr(args, "field", "point_est"))
    except NumericalError as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL
    except NpqrError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
