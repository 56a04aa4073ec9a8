"""INI experiment configuration: schema, defaults, validation and assembly.

Every error names the file, line, section and key it refers to.  Keys
absent from the file take the documented defaults; ``resolved()`` returns
the full table that commands print before they start.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# (type, default, description); default REQUIRED marks a mandatory key
REQUIRED = object()


def _floats(text):
    return tuple(float(eval_fraction(t)) for t in text.replace(";", ",").split(",") if t.strip())


def eval_fraction(text):
    """Parse ``0.25``, ``1/4`` or ``1e-3``."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else eval_fraction(text)


def _eps(text):
    return None if text.strip().lower() in ("homogenized", "none") else eval_fraction(text)


SCHEMA = {
    "grid": {
        "nx": (int, 64, "cells along x"),
        "ny": (int, 64, "cells along y"),
    },
    "time": {
        "T": (eval_fraction, 0.125, "final time"),
        "dt": (eval_fraction, 1 / 256, "time step"),
        "snapshot_stride": (int, 0, "steps between stored snapshots (0: final only)"),
    },
    "coefficient": {
        "family": (str, "layered", "constant | layered | sinusoidal | checkerboard | "
                                   "time_modulated | separable"),
        "kappa": (eval_fraction, REQUIRED, "declared ellipticity constant"),
        "n_y": (int, 64, "cell grid points per axis"),
        "n_tau": (int, 0, "cell time slices (0: family default)"),
        "scale": (eval_fraction, 1.0, "overall multiplier"),
        "alpha": (eval_fraction, 1.0, "layered/checkerboard phase value"),
        "beta": (eval_fraction, 4.0, "layered/checkerboard phase value"),
        "axis": (int, 1, "layering axis (1 or 2)"),
        "a11": (eval_fraction, 1.0, "constant family entry"),
        "a12": (eval_fraction, 0.0, "constant family entry"),
        "a22": (eval_fraction, 1.0, "constant family entry"),
        "mean": (eval_fraction, 2.0, "sinusoidal mean"),
        "amplitude": (eval_fraction, 1.0, "sinusoidal / time-modulated amplitude"),
        "base": (eval_fraction, 2.0, "time-modulated base value"),
        "a0": (eval_fraction, 2.0, "separable spatial mean"),
        "a1": (eval_fraction, 1.0, "separable spatial amplitude"),
        "b0": (eval_fraction, 2.0, "separable temporal mean"),
        "b1": (eval_fraction, 0.5, "separable temporal amplitude"),
        "rtol": (eval_fraction, 1e-10, "cell solve tolerance"),
    },
    "force": {
        "family": (str, "none", "none | saturation | damping | uniform"),
        "amplitude": (eval_fraction, 1.0, "force amplitude"),
        "c1": (_optional_float, None, "declared Lipschitz constant (required with a force)"),
        "c2": (_optional_float, None, "declared growth constant (required with a force)"),
    },
    "noise": {
        "kind": (str, "none", "none | multiplicative | additive"),
        "K": (int, 16, "number of modes"),
        "gamma": (eval_fraction, 1.5, "eigenvalue decay exponent"),
        "lambda0": (eval_fraction, 1.0, "leading eigenvalue"),
        "sigma": (eval_fraction, 0.1, "noise amplitude"),
        "seed": (int, 0, "noise seed"),
        "c3": (_optional_float, None, "declared Lipschitz constant (default: certified)"),
        "c4": (_optional_float, None, "declared growth constant (default: certified)"),
    },
    "initial": {
        "density": (str, "uniform", "uniform | front | blob"),
        "rho_lo": (eval_fraction, 1.0, "density low value"),
        "rho_hi": (eval_fraction, 1.0, "density high value"),
        "width": (eval_fraction, 0.1, "density transition width"),
        "m": (_optional_float, None, "declared lower density bound"),
        "M": (_optional_float, None, "declared upper density bound"),
        "velocity": (str, "bubble", "zero | bubble | lowmode | dipole"),
        "amplitude": (eval_fraction, 0.15, "stream function amplitude"),
    },
    "run": {
        "eps": (_eps, None, "scale parameter or 'homogenized'"),
        "advection": (_bool, True, "advect density and momentum"),
        "diffusion_rtol": (eval_fraction, 1e-10, "implicit diffusion CG tolerance"),
    },
    "plan": {
        "eps": (_floats, (0.25, 0.125, 0.0625), "comma-separated ladder"),
        "samples": (int, 1, "Monte-Carlo samples"),
        "master_seed": (int, 0, "seed of the per-sample seed tree"),
        "corrector": (str, "interp", "interp | flux"),
        "fit": (_bool, True, "fit log-log slopes"),
    },
    "output": {
        "directory": (str, "", "output root (default: $STOCHHOM_OUTPUT or ./runs)"),
    },
}

POSITIVE = {("grid", "nx"), ("grid", "ny"), ("time", "T"), ("time", "dt"),
            ("coefficient", "kappa"), ("coefficient", "n_y"), ("coefficient", "scale"),
            ("coefficient", "rtol"), ("force", "c1"), ("force", "c2"), ("noise", "K"),
            ("noise", "gamma"), ("noise", "lambda0"), ("noise", "c3"), ("noise", "c4"),
            ("initial", "rho_lo"), ("initial", "rho_hi"), ("initial", "width"),
            ("initial", "m"), ("initial", "M"), ("run", "diffusion_rtol"),
            ("plan", "samples")}
NONNEGATIVE = {("time", "snapshot_stride"), ("coefficient", "n_tau"), ("noise", "sigma"),
               ("noise", "seed"), ("plan", "master_seed"), ("initial", "amplitude")}
CHOICES = {
    ("force", "family"): ("none", "saturation", "damping", "uniform"),
    ("noise", "kind"): ("none", "multiplicative", "additive"),
    ("initial", "density"): ("uniform", "front", "blob"),
    ("initial", "velocity"): ("zero", "bubble", "lowmode", "dipole"),
    ("plan", "corrector"): ("interp", "flux"),
    ("coefficient", "family"): ("constant", "layered", "sinusoidal", "checkerboard",
                                "time_modulated", "separable"),
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_map(text):
    """``{(section, key): line}`` plus ``{(section, None): header line}``."""
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        if raw.lstrip().startswith(("#", ";")) or not raw.strip():
            continue
        m = _SECTION_RE.match(raw)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), n)
            continue
        m = _KEY_RE.match(raw)
        if m and section is not None:
            lines[(section, m.group(1).strip())] = n
    return lines


@dataclass
class ExperimentConfig:
    values: dict
    source: str = "<string>"
    lines: dict = field(default_factory=dict)

    def __getitem__(self, item):
        section, key = item
        return self.values[section][key]

    def error(self, section, key, message):
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        where = f"{self.source}:{line}" if line else self.source
        label = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigError(f"{where}: {label}: {message}")

    def resolved(self):
        return {s: dict(kv) for s, kv in self.values.items()}

    def canonical(self):
        return json.dumps(self.resolved(), sort_keys=True, default=repr)

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def render(self):
        out = []
        for section, kv in self.values.items():
            out.append(f"[{section}]")
            for k, v in kv.items():
                out.append(f"{k} = {v!r}" if not isinstance(v, str) else f"{k} = {v}")
        return "\n".join(out)

    def override(self, section, key, value):
        self.values[section][key] = value
        return self


def parse_config(text, source="<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (m vs M)
    lines = _line_map(text)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {exc.message.splitlines()[0]}") from None
    cfg = ExperimentConfig({}, source, lines)
    for section in parser.sections():
        if section not in SCHEMA:
            raise cfg.error(section, None, f"unknown section; expected one of {sorted(SCHEMA)}")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise cfg.error(section, key, f"unknown key; expected one of "
                                              f"{sorted(SCHEMA[section])}")
    for section, keys in SCHEMA.items():
        cfg.values[section] = {}
        for key, (conv, default, _) in keys.items():
            if parser.has_option(section, key):
                raw = parser[section][key]
                try:
                    value = conv(raw)
                except (ValueError, ZeroDivisionError):
                    raise cfg.error(section, key, f"cannot parse {raw!r} as "
                                                  f"{getattr(conv, '__name__', conv)}") from None
            elif default is REQUIRED:
                raise cfg.error(section, key, "missing required key "
                                              f"'{key}' ({keys[key][2]})")
            else:
                value = default
            cfg.values[section][key] = value
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
    return parse_config(text, str(path))


def _validate(cfg: ExperimentConfig):
    v = cfg.values
    for (s, k) in POSITIVE:
        x = v[s][k]
        if x is not None and not (x > 0 and math.isfinite(x)):
            raise cfg.error(s, k, f"must be positive, got {x!r}")
    for (s, k) in NONNEGATIVE:
        x = v[s][k]
        if x < 0:
            raise cfg.error(s, k, f"must be non-negative, got {x!r}")
    for (s, k), allowed in CHOICES.items():
        if v[s][k] not in allowed:
            raise cfg.error(s, k, f"{v[s][k]!r} is not one of {', '.join(allowed)}")
    if v["coefficient"]["axis"] not in (1, 2):
        raise cfg.error("coefficient", "axis", "must be 1 or 2")
    if v["force"]["family"] != "none":
        for k in ("c1", "c2"):
            if v["force"][k] is None:
                raise cfg.error("force", k, f"missing required key '{k}' for force family "
                                            f"{v['force']['family']!r}")
    eps = v["run"]["eps"]
    if eps is not None and not 0 < eps <= 1:
        raise cfg.error("run", "eps", f"must lie in (0, 1], got {eps!r}")
    ladder = v["plan"]["eps"]
    if not ladder or any(not 0 < e <= 1 for e in ladder):
        raise cfg.error("plan", "eps", "ladder values must lie in (0, 1]")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise cfg.error("plan", "eps", "ladder must be strictly decreasing")
    steps = v["time"]["T"] / v["time"]["dt"]
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise cfg.error("time", "T", f"T/dt = {steps:g} is not an integer")
    ini = v["initial"]
    lo, hi = min(ini["rho_lo"], ini["rho_hi"]), max(ini["rho_lo"], ini["rho_hi"])
    m = lo if ini["m"] is None else ini["m"]
    M = hi if ini["M"] is None else ini["M"]
    if not m <= lo:
        raise cfg.error("initial", "m", f"m = {m:g} exceeds min rho0 = {lo:g}")
    if not hi <= M:
        raise cfg.error("initial", "M", f"M = {M:g} is below max rho0 = {hi:g}")


# --- assembly ----------------------------------------------------------------

_FAMILY_PARAMS = {
    "constant": ("a11", "a12", "a22"),
    "layered": ("alpha", "beta", "axis"),
    "sinusoidal": ("mean", "amplitude", "axis"),
    "checkerboard": ("alpha", "beta"),
    "time_modulated": ("base", "amplitude"),
    "separable": ("a0", "a1", "b0", "b1"),
}


def _guard(cfg, section, key, fn, *args, **kw):
    """Run ``fn`` and re-raise value errors with the config location."""
    from .errors import StochHomError
    try:
        return fn(*args, **kw)
    except (ConfigError,):
        raise
    except (StochHomError, ValueError, TypeError) as exc:
        err = cfg.error(section, key, str(exc))
        raise err from exc


def build_grid(cfg):
    from .mac import Grid2D
    return _guard(cfg, "grid", "nx", Grid2D, cfg["grid", "nx"], cfg["grid", "ny"])


def n_steps(cfg):
    return int(round(cfg["time", "T"] / cfg["time", "dt"]))


def build_coefficient(cfg):
    """Sampled cell coefficient, validated against the declared kappa."""
    from .cell.coefficients import CellCoefficient, make_family, validate_coefficient
    c = cfg.values["coefficient"]
    params = {k: c[k] for k in _FAMILY_PARAMS[c["family"]]}
    fam = _guard(cfg, "coefficient", "family", make_family, c["family"], scale=c["scale"],
                 **params)
    n_tau = c["n_tau"] or None
    coef = CellCoefficient.from_family(fam, c["n_y"], n_tau, kappa=c["kappa"])
    _guard(cfg, "coefficient", "kappa", validate_coefficient, coef)
    return coef


def build_force(cfg, check=True):
    from .cell.forcing import check_force_constants, make_force
    f = cfg.values["force"]
    if f["family"] == "none":
        return None
    force = make_force(f["family"], amplitude=f["amplitude"])
    if check:
        _guard(cfg, "force", "c1", check_force_constants, force, f["c1"], f["c2"])
    force.c1, force.c2 = f["c1"], f["c2"]
    return force


def build_noise(cfg, grid=None, check=True, n_pairs=100):
    """``(NoiseSpec, GOperator)`` or ``(None, None)``."""
    from .noise import GOperator, NoiseSpec, check_g_constants
    n = cfg.values["noise"]
    if n["kind"] == "none":
        return None, None
    spec = _guard(cfg, "noise", "gamma", NoiseSpec, n["K"], n["gamma"], n["lambda0"], n["seed"])
    g = GOperator(n["kind"], n["sigma"], n["c3"], n["c4"])
    if check and grid is not None and (n["c3"] is not None or n["c4"] is not None):
        key = "c3" if n["c3"] is not None else "c4"
        _guard(cfg, "noise", key, check_g_constants, g, grid, spec, n_pairs=n_pairs)
    if grid is not None:
        c3, c4 = g.safe_constants(grid, spec)
        g.c3 = c3 if n["c3"] is None else n["c3"]
        g.c4 = c4 if n["c4"] is None else n["c4"]
    return spec, g


def build_initial(cfg, grid):
    from .initial import initial_density, initial_velocity
    i = cfg.values["initial"]
    rho = _guard(cfg, "initial", "density", initial_density, grid, i["density"], i["rho_lo"],
                 i["rho_hi"], i["width"], i["m"], i["M"])
    u0 = initial_velocity(grid, i["velocity"], i["amplitude"])
    return rho, u0


def build_solver_config(cfg, eps=..., noise=True, grid=None):
    """A :class:`SolverConfig` for ``eps`` (``None``: homogenized).  The
    homogenized variant computes the effective tensor and averaged force."""
    from .cell import homogenize
    from .cell.forcing import average_force
    from .solver import SolverConfig
    grid = grid or build_grid(cfg)
    eps = cfg["run", "eps"] if eps is ... else eps
    coef = build_coefficient(cfg)
    force = build_force(cfg)
    spec, g = build_noise(cfg, grid) if noise else (None, None)
    if eps is None:
        coef = _guard(cfg, "coefficient", "family", homogenize, coef,
                      rtol=cfg["coefficient", "rtol"])
        force = average_force(force, check=False) if force is not None else None
    sc = SolverConfig(grid, cfg["time", "dt"], n_steps(cfg), coef, eps=eps, force=force,
                      noise=spec, g=g, diffusion_rtol=cfg["run", "diffusion_rtol"],
                      advection=cfg["run", "advection"],
                      snapshot_stride=cfg["time", "snapshot_stride"])
    return sc


def build_plan(cfg, jobs=1):
    from .lab import ExperimentPlan
    grid = build_grid(cfg)
    base = build_solver_config(cfg, eps=cfg["plan", "eps"][0], grid=grid)
    rho0, u0 = build_initial(cfg, grid)
    p = cfg.values["plan"]
    plan = ExperimentPlan(base, rho0, u0, eps_ladder=p["eps"], n_samples=p["samples"],
                          master_seed=p["master_seed"], corrector_mode=p["corrector"])
    return _guard(cfg, "plan", "eps", plan.validate)
