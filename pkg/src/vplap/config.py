"""INI experiment configs: schema, validation and conversion to library objects.

Layout::

    [problem]            domain geometry, n, N, p, source f, boundary data
    [solver]             SolverConfig overrides
    [diagnostic <name>]  one requested diagnostic (repeatable)
    [sweep]              moving-plane certificate request
    [run]                resolution ladder, seed, output directory, oracle

Unknown sections and keys are rejected before anything is computed.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import geometry
from .diagnostics import DiagnosticParams
from .expr import ExpressionError, compile_expression, compile_vector, coordinate_names
from .solver import ProblemSpec, SolverConfig


class ConfigError(ValueError):
    """Invalid config; ``key`` names the offending entry as ``section.key``."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"[{key}] {msg}")
        self.key = key


PROBLEM_KEYS = {"domain", "n", "N", "p", "f", "boundary", "radius", "semi_axes",
                "lower", "upper", "level", "symmetric", "label"}
SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverConfig)}
DIAG_OPS = {"weighted_d2", "inverse_gradient", "critical_set", "stress_w12", "poincare"}
DIAG_KEYS = {"op", "alpha", "gamma", "sigma", "s", "pole", "poles", "tau", "eta_crit",
             "margin", "cutoff_m", "exclude_critical", "eta", "subregion", "expect",
             "max_uniformity"}
EXPECTATIONS = {"none", "bounded", "growing", "vanishing"}
SWEEP_KEYS = {"enabled", "tol", "thin_cap", "width_cells", "samples", "symmetry_constant",
              "min_order"}
RUN_KEYS = {"resolutions", "seed", "out", "oracle", "oracle_tol", "oracle_min_resolution",
            "figures"}
SECTIONS = {"problem": PROBLEM_KEYS, "solver": SOLVER_KEYS, "sweep": SWEEP_KEYS, "run": RUN_KEYS}


@dataclass(frozen=True)
class DiagnosticRequest:
    name: str
    op: str
    params: DiagnosticParams
    poles: tuple = ()
    eta: Optional[float] = None
    # eta_crit given as a multiple of h (value of ``<c>h``)
    eta_crit_h: Optional[float] = None
    subregion: Optional[tuple] = None
    expect: str = "none"
    max_uniformity: Optional[float] = None


@dataclass(frozen=True)
class SweepRequest:
    enabled: bool = False
    tol: float = 1e-7
    thin_cap: bool = True
    width_cells: int = 2
    samples: int = 2000
    symmetry_constant: float = 1.0
    min_order: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    problem_raw: dict
    solver: SolverConfig
    diagnostics: tuple
    sweep: SweepRequest
    resolutions: tuple
    seed: int
    out: Optional[str]
    oracle: str
    oracle_tol: float
    oracle_min_resolution: int
    figures: bool
    source_text: str
    digest: str = field(default="")


# -- scalar parsers ------------------------------------------------------------

def _float(key, text):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(key, f"expected a finite number, got {text!r}")
    return v


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {text!r}") from None


def _bool(key, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected true/false, got {text!r}")


def _floats(key, text, length=None):
    parts = [s for s in text.replace(" ", "").split(",") if s]
    vals = tuple(_float(key, s) for s in parts)
    if length is not None and len(vals) != length:
        raise ConfigError(key, f"expected {length} comma-separated numbers, got {len(vals)}")
    return vals


def parse_resolutions(text: str, key: str = "run.resolutions") -> tuple:
    vals = tuple(_int(key, s) for s in text.replace(" ", "").split(",") if s)
    if not vals:
        raise ConfigError(key, "empty resolution ladder")
    for r in vals:
        if r < 5:
            raise ConfigError(key, f"resolution {r} is below the minimum of 5")
    if len(set(vals)) != len(vals) or list(vals) != sorted(vals):
        raise ConfigError(key, "resolutions must be strictly increasing")
    return vals


# -- sections ------------------------------------------------------------------

def _domain(sec):
    kind = sec.get("domain", "disk").strip()
    n = _int("problem.n", sec.get("n", "2"))
    if n < 2:
        raise ConfigError("problem.n", "spatial dimension n must be at least 2")
    try:
        if kind in ("disk", "ball"):
            if kind == "disk" and n != 2:
                raise ConfigError("problem.n", "domain 'disk' needs n = 2; use 'ball'")
            r = _float("problem.radius", sec.get("radius", "1"))
            if r <= 0:
                raise ConfigError("problem.radius", "radius must be positive")
            return geometry.ball(r, n)
        if kind == "ellipse":
            if n != 2:
                raise ConfigError("problem.n", "domain 'ellipse' needs n = 2")
            return geometry.ellipse(_floats("problem.semi_axes", sec.get("semi_axes", "1,1"), 2))
        if kind in ("box", "expression"):
            if "lower" not in sec or "upper" not in sec:
                raise ConfigError(f"problem.{'lower' if 'lower' not in sec else 'upper'}",
                                  f"domain '{kind}' needs lower and upper corners")
            lo = _floats("problem.lower", sec["lower"], n)
            hi = _floats("problem.upper", sec["upper"], n)
            if kind == "box":
                return geometry.box(lo, hi)
            if "level" not in sec:
                raise ConfigError("problem.level", "domain 'expression' needs a level expression")
            try:
                lev = compile_expression(sec["level"], coordinate_names(n))
            except ExpressionError as exc:
                raise ConfigError("problem.level", str(exc)) from None

            def level(x, _e=lev, _n=n):
                return np.broadcast_to(np.asarray(_e(**{f"x{i + 1}": x[i] for i in range(_n)}), dtype=float),
                                       x.shape[1:])

            sym = _bool("problem.symmetric", sec.get("symmetric", "false"))
            return geometry.from_level(level, lo, hi, sym, name="expression")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("problem.domain", str(exc)) from None
    raise ConfigError("problem.domain", f"unknown domain {kind!r} (disk, ball, box, ellipse, expression)")


def _problem(sec) -> tuple:
    if "p" not in sec:
        raise ConfigError("problem.p", "missing exponent p")
    p = _float("problem.p", sec["p"])
    if not p > 1:
        raise ConfigError("problem.p", f"p = {p:g} is not admissible: the p-Laplace system requires p > 1")
    dom = _domain(sec)
    n = dom.n
    N = _int("problem.N", sec.get("N", "1"))
    if N < 1:
        raise ConfigError("problem.N", "N must be at least 1")
    f_text = sec.get("f", ";".join(["1"] * N))
    try:
        src, dep = compile_vector(f_text, n, N, N)
    except ExpressionError as exc:
        raise ConfigError("problem.f", str(exc)) from None
    bnd = None
    if "boundary" in sec:
        try:
            gfun, _ = compile_vector(sec["boundary"], n, N, N, allow_u=False)
        except ExpressionError as exc:
            raise ConfigError("problem.boundary", str(exc)) from None
        bnd = gfun
    spec = ProblemSpec(dom, N, p, src, dep, bnd, sec.get("label", ""))
    raw = {"domain": sec.get("domain", "disk").strip(), "n": n, "N": N, "p": p, "f": f_text,
           "boundary": sec.get("boundary", "0"), "lower": list(dom.lower), "upper": list(dom.upper),
           "symmetric_x1": dom.symmetric_x1}
    return spec, raw


def _solver(sec) -> SolverConfig:
    kw = {}
    for f in dataclasses.fields(SolverConfig):
        if f.name in sec:
            conv = _int if f.type in ("int", int) else _float
            kw[f.name] = conv(f"solver.{f.name}", sec[f.name])
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None


def _poles(key, text, n):
    out = []
    for chunk in text.split(";"):
        if chunk.strip():
            out.append(_floats(key, chunk, n))
    if not out:
        raise ConfigError(key, "no poles given")
    return tuple(out)


def _diagnostic(name, sec, n) -> DiagnosticRequest:
    prefix = f"diagnostic {name}"
    for key in sec:
        if key not in DIAG_KEYS:
            raise ConfigError(f"{prefix}.{key}", "unknown key")
    op = sec.get("op", "").strip()
    if op not in DIAG_OPS:
        raise ConfigError(f"{prefix}.op", f"unknown operation {op!r} ({', '.join(sorted(DIAG_OPS))})")
    kw = {}
    for k in ("alpha", "gamma", "sigma", "s", "tau", "margin", "cutoff_m"):
        if k in sec:
            kw[k] = _float(f"{prefix}.{k}", sec[k])
    if "exclude_critical" in sec:
        kw["exclude_critical"] = _bool(f"{prefix}.exclude_critical", sec["exclude_critical"])
    eta_crit_h = None
    if "eta_crit" in sec:
        txt = sec["eta_crit"].strip()
        if txt.endswith("h"):
            eta_crit_h = _float(f"{prefix}.eta_crit", txt[:-1] or "1")
        else:
            kw["eta_crit"] = _float(f"{prefix}.eta_crit", txt)
    poles = ()
    if "pole" in sec and "poles" in sec:
        raise ConfigError(f"{prefix}.poles", "give either pole or poles, not both")
    if "pole" in sec:
        poles = (_floats(f"{prefix}.pole", sec["pole"], n),)
    elif "poles" in sec:
        poles = _poles(f"{prefix}.poles", sec["poles"], n)
    kw["pole"] = poles[0] if poles else tuple([0.0] * n)
    if not poles:
        poles = (kw["pole"],)
    expect = sec.get("expect", "none").strip()
    if expect not in EXPECTATIONS:
        raise ConfigError(f"{prefix}.expect", f"unknown expectation {expect!r} ({', '.join(sorted(EXPECTATIONS))})")
    if expect == "vanishing" and op != "critical_set":
        raise ConfigError(f"{prefix}.expect", "'vanishing' applies to critical_set only")
    eta = _float(f"{prefix}.eta", sec["eta"]) if "eta" in sec else None
    sub = None
    if op == "poincare":
        if "subregion" not in sec:
            raise ConfigError(f"{prefix}.subregion", "poincare needs a subregion (e.g. 'ball 0.5')")
        parts = sec["subregion"].split()
        if len(parts) != 2 or parts[0] != "ball":
            raise ConfigError(f"{prefix}.subregion", "expected 'ball <radius>'")
        sub = ("ball", _float(f"{prefix}.subregion", parts[1]))
    mu = _float(f"{prefix}.max_uniformity", sec["max_uniformity"]) if "max_uniformity" in sec else None
    return DiagnosticRequest(name, op, DiagnosticParams(**kw), poles, eta, eta_crit_h, sub, expect, mu)


def _sweep(sec) -> SweepRequest:
    kw = {}
    if sec is None:
        return SweepRequest()
    for k in ("enabled", "thin_cap"):
        if k in sec:
            kw[k] = _bool(f"sweep.{k}", sec[k])
    for k in ("tol", "symmetry_constant", "min_order"):
        if k in sec:
            kw[k] = _float(f"sweep.{k}", sec[k])
    for k in ("width_cells", "samples"):
        if k in sec:
            kw[k] = _int(f"sweep.{k}", sec[k])
    kw.setdefault("enabled", True)
    if kw.get("samples", 2000) < 1000:
        raise ConfigError("sweep.samples", "need at least 1000 samples")
    return SweepRequest(**kw)


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read and validate ``path``.  ``overrides`` may set resolutions, seed and out."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def parse_config(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", f"malformed config: {exc.message if hasattr(exc, 'message') else exc}") from None
    diag_sections = []
    for name in cp.sections():
        if name.startswith("diagnostic "):
            diag_sections.append(name)
            continue
        if name not in SECTIONS:
            raise ConfigError(name, "unknown section")
        for key in cp[name]:
            if key not in SECTIONS[name]:
                raise ConfigError(f"{name}.{key}", "unknown key")
    if "problem" not in cp:
        raise ConfigError("problem", "missing [problem] section")
    spec, raw = _problem(cp["problem"])
    solver = _solver(cp["solver"] if "solver" in cp else {})
    diags = tuple(_diagnostic(s.split(" ", 1)[1].strip(), cp[s], spec.n) for s in diag_sections)
    sweep = _sweep(cp["sweep"] if "sweep" in cp else None)
    run = cp["run"] if "run" in cp else {}
    overrides = overrides or {}
    res = overrides.get("resolutions") or parse_resolutions(run.get("resolutions", "17,33,65"))
    seed = overrides.get("seed")
    if seed is None:
        seed = _int("run.seed", run.get("seed", "0"))
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("run.seed", "seed must be an unsigned 64-bit integer")
    oracle = run.get("oracle", "none").strip()
    if oracle not in ("none", "radial"):
        raise ConfigError("run.oracle", f"unknown oracle {oracle!r} (none, radial)")
    if oracle == "radial":
        _check_radial(spec, cp["problem"])
    cfg = ExperimentConfig(
        problem=spec, problem_raw=raw, solver=solver, diagnostics=diags, sweep=sweep,
        resolutions=tuple(res), seed=int(seed), out=overrides.get("out") or run.get("out"),
        oracle=oracle, oracle_tol=_float("run.oracle_tol", run.get("oracle_tol", "5e-2")),
        oracle_min_resolution=_int("run.oracle_min_resolution", run.get("oracle_min_resolution", "65")),
        figures=_bool("run.figures", run.get("figures", "true")), source_text=text,
    )
    return dataclasses.replace(cfg, digest=config_hash(cfg))


def _check_radial(spec: ProblemSpec, sec):
    dom = spec.domain
    if not dom.name.startswith("ball"):
        raise ConfigError("run.oracle", "the radial oracle needs a disk or ball domain")
    if spec.depends_on_u or "boundary" in sec:
        raise ConfigError("run.oracle", "the radial oracle needs a constant source and zero boundary data")
    text = sec.get("f", "1")
    for part in text.split(";"):
        if compile_expression(part, coordinate_names(spec.n)).used:
            raise ConfigError("run.oracle", "the radial oracle needs a constant source")


def radial_source(spec: ProblemSpec):
    x = np.zeros((spec.n, 1))
    return spec.eval_source(x, np.zeros((spec.N, 1)))[:, 0]


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 over the config text plus the effective run overrides."""
    h = hashlib.sha256(cfg.source_text.encode())
    h.update(repr((cfg.resolutions, cfg.seed)).encode())
    return h.hexdigest()
