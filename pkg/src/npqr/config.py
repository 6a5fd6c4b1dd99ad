"""Run configuration stored as an INI file.

Sections ``[data] [model] [basis] [taus] [functional] [inference] [rearrange]
[output]`` and an optional ``[simulate]``. Relative paths are resolved against
the directory of the config file. Example::

    [data]
    path = growth.csv

    [model]
    outcome = height
    treatment = age
    controls = mbmi:numeric, sex:factor
    intercept = auto

    [basis]
    type = bspline
    degree = 3
    breaks_probs = 0, 0.1, 0.25, 0.5, 0.75, 0.9, 1

    [taus]
    taus = 0.04:0.96:24
    print = 0.2, 0.4, 0.6, 0.8
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from npqr.basis import TauGrid
from npqr.dataio import ModelSpec
from npqr.errors import ConfigError
from npqr.functional import LoadSpec
from npqr.inference import BOOTSTRAPS, InferenceConfig
from npqr.rearrange import RearrangeSpec

DEFAULT_TAUS = tuple(k / 25 for k in range(1, 25))
DEFAULT_PRINT_TAUS = (0.2, 0.4, 0.6, 0.8)
BASIS_TYPES = ("bspline", "polynomial", "fourier", "indicator")
DGPS = ("location", "location_scale")


@dataclass(frozen=True)
class SimConfig:
    """Monte-Carlo coverage study settings."""

    dgp: str = "location"
    n: int = 500
    R: int = 200
    methods: tuple[str, ...] = ("pivotal",)
    seed: int = 0

    def __post_init__(self):
        if self.dgp not in DGPS:
            raise ConfigError(f"dgp must be one of {DGPS}, got {self.dgp!r}")
        if self.R < 1:
            raise ConfigError("simulate needs at least one replication (R >= 1)")
        if self.n < 10:
            raise ConfigError("simulate needs n >= 10")
        if not self.methods or "none" in self.methods:
            raise ConfigError("simulate needs at least one inference process other than 'none'")
        for m in self.methods:
            InferenceConfig(process=m)


@dataclass(frozen=True)
class OutputPaths:
    json: Path | None = None
    report: Path | None = None
    surface: Path | None = None
    load: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    data_path: Path | None
    model: ModelSpec | None
    basis: dict = field(default_factory=lambda: {"type": "bspline", "degree": 3})
    taus: TauGrid = field(default_factory=lambda: TauGrid(DEFAULT_TAUS, DEFAULT_PRINT_TAUS))
    load: LoadSpec = LoadSpec()
    inference: InferenceConfig = InferenceConfig()
    rearrange: RearrangeSpec | None = None
    output: OutputPaths = OutputPaths()
    simulate: SimConfig = SimConfig()

    def __post_init__(self):
        validate(self)


def validate(cfg: RunConfig) -> None:
    kind = cfg.basis.get("type", "bspline")
    if kind not in BASIS_TYPES:
        raise ConfigError(f"basis type must be one of {BASIS_TYPES}, got {kind!r}")
    if kind == "indicator" and cfg.load.deriv != 0:
        raise ConfigError("indicator basis supports only nderivs = 0 (derivative undefined)")
    if cfg.inference.process in BOOTSTRAPS and cfg.inference.se_mode == "conditional":
        raise ConfigError("bootstrap processes only give unconditional inference; set se = unconditional")
    if cfg.inference.process != "none" and cfg.inference.B * cfg.inference.alpha < 1:
        raise ConfigError(f"B={cfg.inference.B} is too small for alpha={cfg.inference.alpha}")


# --- parsing helpers -------------------------------------------------------

def parse_floats(text: str) -> tuple[float, ...]:
    """Comma list, or ``start:stop:count`` for an evenly spaced grid."""
    text = text.strip()
    if not text:
        return ()
    try:
        if ":" in text:
            a, b, k = text.split(":")
            # rounding removes linspace noise such as 0.19999999999999998
            return tuple(round(float(v), 12) for v in np.linspace(float(a), float(b), int(k)))
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse number list {text!r}") from None


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be true or false, got {text!r}")


def _int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {text!r}") from None


def _float(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {text!r}") from None


def _path(text: str | None, base: Path) -> Path | None:
    if not text:
        return None
    p = Path(text).expanduser()
    return p if p.is_absolute() else (base / p).resolve()


def _parse_model(sec) -> ModelSpec:
    terms = []
    for item in filter(None, (s.strip() for s in sec.get("controls", "").split(","))):
        name, _, kind = item.partition(":")
        terms.append((name.strip(), kind.strip() or "numeric"))
    icpt = sec.get("intercept", "auto").strip().lower()
    intercept = None if icpt == "auto" else _bool(icpt, "intercept")
    levels = {k[len("levels."):]: tuple(v.strip() for v in sec[k].split(","))
              for k in sec if k.startswith("levels.")}
    try:
        return ModelSpec(sec["outcome"], sec["treatment"], tuple(terms), intercept, levels)
    except KeyError as exc:
        raise ConfigError(f"[model] needs the key {exc.args[0]!r}") from None


def _parse_basis(sec) -> dict:
    d = {"type": sec.get("type", "bspline").strip().lower()}
    for key in ("degree", "nbasis"):
        if key in sec:
            d[key] = _int(sec[key], f"basis.{key}")
    if "period" in sec:
        d["period"] = _float(sec["period"], "basis.period")
    for key in ("breaks_probs", "breakpoints"):
        if key in sec:
            d[key] = parse_floats(sec[key])
    if d["type"] == "bspline":
        d.setdefault("degree", 3)
    return d


def _parse_measure(text: str):
    t = text.strip()
    return t if t in ("observations", "distinct") else parse_floats(t)


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    """Parse INI text; relative paths resolve against ``base_dir``."""
    base = Path(base_dir).resolve()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sec = {name: cp[name] if cp.has_section(name) else {} for name in
           ("data", "model", "basis", "taus", "functional", "inference", "rearrange", "output", "simulate")}

    model = _parse_model(sec["model"]) if cp.has_section("model") else None
    taus = parse_floats(sec["taus"].get("taus", "")) or DEFAULT_TAUS
    printed = parse_floats(sec["taus"].get("print", "")) or tuple(v for v in DEFAULT_PRINT_TAUS if v in taus)
    fn = sec["functional"]
    ev = fn.get("eval_points")
    load = LoadSpec(deriv=_int(fn.get("nderivs", "0"), "nderivs"),
                    average=_bool(fn.get("average", "false"), "average"),
                    eval_points=parse_floats(ev) if ev else None,
                    measure=_parse_measure(fn.get("measure", "observations")))
    inf = sec["inference"]
    inference = InferenceConfig(
        process=inf.get("process", "pivotal"), B=_int(inf.get("B", "500"), "B"),
        alpha=_float(inf.get("alpha", "0.05"), "alpha"),
        uniform=_bool(inf.get("uniform", "true"), "uniform"), se_mode=inf.get("se", "unconditional"),
        rng_seed=_int(inf.get("seed", "0"), "seed"), bandwidth_rule=inf.get("bandwidth", "hall-sheather"),
        threads=_int(inf.get("threads", "1"), "threads"),
        analytic_se=_bool(inf.get("analytic_se", "false"), "analytic_se"))
    ra = sec["rearrange"]
    dims = ra.get("dims", "none").strip().lower()
    rearrange = None if dims == "none" else RearrangeSpec(
        dims=dims, bands=_bool(ra.get("bands", "true"), "rearrange.bands"), order=ra.get("order", "average"))
    out = sec["output"]
    output = OutputPaths(*(_path(out.get(k), base) for k in ("json", "report", "surface", "load")))
    sm = sec["simulate"]
    simulate = SimConfig(dgp=sm.get("dgp", "location"), n=_int(sm.get("n", "500"), "simulate.n"),
                         R=_int(sm.get("R", "200"), "simulate.R"),
                         methods=tuple(s.strip() for s in sm.get("methods", "pivotal").split(",") if s.strip()),
                         seed=_int(sm.get("seed", "0"), "simulate.seed"))
    return RunConfig(_path(sec["data"].get("path"), base), model, _parse_basis(sec["basis"]),
                     TauGrid(taus, printed), load, inference, rearrange, output, simulate)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


def _fmt(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def config_to_ini(cfg: RunConfig) -> str:
    """Serialise a RunConfig; paths are written as absolute paths."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["data"] = {"path": str(cfg.data_path)} if cfg.data_path else {}
    if cfg.model is not None:
        m = cfg.model
        sec = {"outcome": m.outcome_name, "treatment": m.treatment_name,
               "controls": ", ".join(f"{c}:{k}" for c, k in m.control_terms),
               "intercept": "auto" if m.intercept is None else str(m.intercept).lower()}
        sec.update({f"levels.{k}": ", ".join(v) for k, v in m.factor_levels.items()})
        cp["model"] = sec
    b = {}
    for k, v in cfg.basis.items():
        b[k] = _fmt(v) if isinstance(v, (tuple, list)) else str(v)
    cp["basis"] = b
    cp["taus"] = {"taus": _fmt(cfg.taus.taus), "print": _fmt(cfg.taus.print_taus)}
    ld = cfg.load
    fn = {"nderivs": str(ld.deriv), "average": str(ld.average).lower(),
          "measure": ld.measure if isinstance(ld.measure, str) else _fmt(ld.measure)}
    if ld.eval_points is not None:
        fn["eval_points"] = _fmt(ld.eval_points)
    cp["functional"] = fn
    ic = cfg.inference
    cp["inference"] = {"process": ic.process, "B": str(ic.B), "alpha": repr(ic.alpha),
                       "uniform": str(ic.uniform).lower(), "se": ic.se_mode, "seed": str(ic.rng_seed),
                       "bandwidth": ic.bandwidth_rule, "threads": str(ic.threads),
                       "analytic_se": str(ic.analytic_se).lower()}
    ra = cfg.rearrange
    cp["rearrange"] = {"dims": "none"} if ra is None else \
        {"dims": ra.dims, "bands": str(ra.bands).lower(), "order": ra.order}
    cp["output"] = {k: str(v) for k, v in dataclasses.asdict(cfg.output).items() if v is not None}
    sm = cfg.simulate
    cp["simulate"] = {"dgp": sm.dgp, "n": str(sm.n), "R": str(sm.R), "methods": ", ".join(sm.methods),
                      "seed": str(sm.seed)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
