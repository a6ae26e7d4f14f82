"""Run configuration: a YAML file validated against one defaults table.

Every block and key is listed in :data:`DEFAULTS`; unknown keys are rejected
and all violations are reported together.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .fields import Field, Grid, TimeGrid
from .fixpoint import GlobalSolveConfig, InitialData, LocalSolveConfig
from .lagrangian import FAMILIES, BoundaryMotion
from .norms import NormSpec, admissible
from .transformed import MaterialParams, PressureLaw

# Defaults table. Comments give the reason for non-obvious values.
DEFAULTS: dict = {
    "seed": 0,
    "grid": {"dim": 1, "extents": [33], "low": None, "high": None},
    "time": {"T": 0.1, "nsteps": 20},
    "material": {"mu": 1.0, "zeta": 0.0, "rho_star": 1.0},
    "pressure": {"kind": "power", "a": 1.0, "gamma_ad": 1.4, "rho_min": 1e-3, "rho_max": 1e6},
    "motion": {
        "family": "zero",
        "amplitude": 0.0,
        "rate_gamma": 0.0,
        "direction": None,
        "center": None,
        "axis": None,
        "table": None,
        "box": None,  # default: grid box padded by one unit
    },
    "initial": {"family": "equilibrium", "amplitude": 0.0, "rho_csv": None, "u_csv": None},
    "norms": {"p": 4.0, "q": 8.0},  # 2/4 + 3/8 = 0.875 < 1
    "stepper": {"scheme": "be", "solver": "auto", "tol": 1e-10, "rho_floor": 1e-3},
    "picard": {"tol": 1e-8, "max_iters": 50, "M": 1.0, "L": 10.0, "min_fraction": 0.0625},
    "flow": {"det_floor": 0.5},
    "global": {
        "epsilon": 0.1,
        "gamma": 0.25,
        "window": 0.5,
        "max_windows": 8,
        "track_bootstrap": True,
        "quantity": "dt_u_Lq",
    },
    "contraction": {"T_list": [0.4, 0.2, 0.1, 0.05], "pairs": 5},
    "verify": {"flows": ["dilation", "rotation", "shear", "nonlinear"], "dims": [1, 2], "sizes": [17, 33, 65]},
    "mms": {"dims": [1, 2], "time_steps": [20, 40, 80], "space_sizes": [17, 33, 65], "T": 0.5},
    "output": {"dir": "out"},
}

INITIAL_FAMILIES = ("equilibrium", "rigid", "perturbed", "custom_csv")
DECAY_QUANTITIES = ("grad_u_Lq", "eta_W1q", "dt_u_Lq")


def _merge(defaults: dict, given: dict, prefix: str, errs: list) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            errs.append(f"unknown key {path!r}")
        elif isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                errs.append(f"{path} must be a mapping")
            else:
                out[key] = _merge(defaults[key], val, path + ".", errs)
        else:
            out[key] = val
    return out


def _num(errs, path, val, lo=None, lo_strict=False, integer=False):
    try:
        if isinstance(val, bool):
            raise TypeError
        x = int(val) if integer else float(val)
        if integer and x != val:
            raise TypeError
    except (TypeError, ValueError):
        errs.append(f"{path} must be {'an integer' if integer else 'a number'}, got {val!r}")
        return None
    if lo is not None and (x <= lo if lo_strict else x < lo):
        errs.append(f"{path} must be {'>' if lo_strict else '>='} {lo}, got {x}")
    return x


@dataclass
class RunConfig:
    values: dict
    source: str | None = None

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def __getitem__(self, key):
        return self.values[key]

    # builders ---------------------------------------------------------
    def grid(self) -> Grid:
        g = self.values["grid"]
        low = tuple(g["low"]) if g["low"] is not None else None
        high = tuple(g["high"]) if g["high"] is not None else None
        return Grid(tuple(g["extents"]), low, high)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.values["time"]["T"], self.values["time"]["nsteps"])

    def material(self) -> MaterialParams:
        m, p = self.values["material"], self.values["pressure"]
        law = PressureLaw(p["kind"], p["a"], p["gamma_ad"], p["rho_min"], p["rho_max"])
        return MaterialParams(m["mu"], m["zeta"], law, m["rho_star"])

    def motion(self) -> BoundaryMotion:
        m = self.values["motion"]
        g = self.grid()
        center = m["center"] if m["center"] is not None else tuple((a + b) / 2 for a, b in zip(g.low, g.high))
        box = tuple(tuple(b) for b in m["box"]) if m["box"] is not None else None
        table = m["table"]
        if table is not None and self.source is not None and not Path(table).is_absolute():
            table = str(Path(self.source).parent / table)
        return BoundaryMotion(m["family"], m["amplitude"], m["rate_gamma"], g.dim, m["direction"], center,
                              m["axis"], box, table)

    def initial_data(self) -> InitialData:
        g = self.grid()
        motion = self.motion()
        ini = self.values["initial"]
        rho_star = self.values["material"]["rho_star"]
        c = g.coords()
        V0 = motion.velocity(0.0, c)
        fam, A = ini["family"], ini["amplitude"]
        if fam in ("equilibrium", "rigid"):
            return InitialData(np.full(g.extents, rho_star), V0, motion)
        if fam == "perturbed":
            rel = [(c[..., a] - g.low[a]) / (g.high[a] - g.low[a]) for a in range(g.dim)]
            bump = np.prod([np.sin(np.pi * r) for r in rel], axis=0)
            wave = np.prod([np.cos(np.pi * r) for r in rel], axis=0)
            rho0 = rho_star * (1.0 + A * wave)
            return InitialData(rho0, V0 + A * bump[..., None] * np.ones(g.dim), motion)
        base = Path(self.source).parent if self.source else Path(".")
        rho = Field.from_csv(base / ini["rho_csv"]).values
        u = Field.from_csv(base / ini["u_csv"]).values
        return InitialData(np.array(rho), np.array(u), motion)

    def local_config(self, T: float | None = None) -> LocalSolveConfig:
        v = self.values
        pc, st = v["picard"], v["stepper"]
        T0, n0 = v["time"]["T"], v["time"]["nsteps"]
        nsteps = n0 if T is None else max(1, int(round(n0 * T / T0)))
        return LocalSolveConfig(
            T=T0 if T is None else T, nsteps=nsteps, M=pc["M"], L=pc["L"], picard_tol=pc["tol"],
            max_iters=pc["max_iters"], p=v["norms"]["p"], q=v["norms"]["q"], min_fraction=pc["min_fraction"],
            scheme=st["scheme"], solver=st["solver"], tol=st["tol"], rho_floor=st["rho_floor"],
            det_floor=v["flow"]["det_floor"],
        )

    def global_config(self) -> GlobalSolveConfig:
        g = self.values["global"]
        return GlobalSolveConfig(g["epsilon"], g["gamma"], g["window"], g["max_windows"], g["track_bootstrap"])

    def norm_spec(self, kind: str = "Y_norm", gamma: float = 0.0) -> NormSpec:
        return NormSpec(self.values["norms"]["p"], self.values["norms"]["q"], gamma, kind)

    # serialization ------------------------------------------------------
    def to_yaml(self) -> str:
        return yaml.safe_dump(self.values, sort_keys=True)


def validate(values: dict) -> list[str]:
    """All constraint violations of a merged config dict."""
    errs: list[str] = []
    _num(errs, "seed", values["seed"], 0, integer=True)
    g = values["grid"]
    dim = _num(errs, "grid.dim", g["dim"], 1, integer=True)
    if dim is not None and dim > 3:
        errs.append(f"grid.dim must be 1, 2 or 3, got {dim}")
    ext = g["extents"]
    if not isinstance(ext, list) or (dim is not None and len(ext) != dim):
        errs.append(f"grid.extents must list {dim} node counts")
    else:
        for i, n in enumerate(ext):
            if _num(errs, f"grid.extents[{i}]", n, 3, integer=True) is None:
                pass
    for key in ("low", "high"):
        if g[key] is not None and (not isinstance(g[key], list) or len(g[key]) != dim):
            errs.append(f"grid.{key} must list {dim} coordinates")
    if g["low"] is not None and g["high"] is not None and isinstance(g["low"], list) and isinstance(g["high"], list):
        if any(float(b) <= float(a) for a, b in zip(g["low"], g["high"])):
            errs.append("grid.high must exceed grid.low on every axis")
    t = values["time"]
    _num(errs, "time.T", t["T"], 0, lo_strict=True)
    _num(errs, "time.nsteps", t["nsteps"], 1, integer=True)
    m = values["material"]
    _num(errs, "material.mu", m["mu"], 0, lo_strict=True)
    if _num(errs, "material.zeta", m["zeta"]) is not None and m["zeta"] < 0:
        errs.append(f"zeta must be >= 0 (bulk viscosity), got {m['zeta']}")
    _num(errs, "material.rho_star", m["rho_star"], 0, lo_strict=True)
    p = values["pressure"]
    if p["kind"] not in ("linear", "power"):
        errs.append(f"pressure.kind must be linear or power, got {p['kind']!r}")
    _num(errs, "pressure.a", p["a"], 0)
    _num(errs, "pressure.gamma_ad", p["gamma_ad"], 1)
    _num(errs, "pressure.rho_min", p["rho_min"], 0, lo_strict=True)
    _num(errs, "pressure.rho_max", p["rho_max"], 0, lo_strict=True)
    mo = values["motion"]
    if mo["family"] not in FAMILIES:
        errs.append(f"motion.family must be one of {', '.join(FAMILIES)}, got {mo['family']!r}")
    _num(errs, "motion.amplitude", mo["amplitude"])
    _num(errs, "motion.rate_gamma", mo["rate_gamma"], 0)
    if mo["family"] == "rigid_rotation" and dim == 1:
        errs.append("motion.family rigid_rotation needs grid.dim 2 or 3")
    if mo["family"] == "custom_table" and not mo["table"]:
        errs.append("motion.table is required for custom_table")
    for key in ("direction", "center", "axis"):
        if mo[key] is not None and (not isinstance(mo[key], list) or (key != "axis" and len(mo[key]) != dim)):
            errs.append(f"motion.{key} must list {dim if key != 'axis' else 3} numbers")
    ini = values["initial"]
    if ini["family"] not in INITIAL_FAMILIES:
        errs.append(f"initial.family must be one of {', '.join(INITIAL_FAMILIES)}, got {ini['family']!r}")
    if ini["family"] == "equilibrium" and mo["family"] != "zero":
        errs.append("initial.family equilibrium needs motion.family zero (use rigid for moving frames)")
    if ini["family"] == "rigid" and mo["family"] not in ("rigid_translation", "rigid_rotation", "zero"):
        errs.append("initial.family rigid needs a rigid motion family")
    if ini["family"] == "custom_csv" and not (ini["rho_csv"] and ini["u_csv"]):
        errs.append("initial.rho_csv and initial.u_csv are required for custom_csv")
    _num(errs, "initial.amplitude", ini["amplitude"])
    n = values["norms"]
    pp = _num(errs, "norms.p", n["p"], 1, lo_strict=True)
    qq = _num(errs, "norms.q", n["q"], 1, lo_strict=True)
    if pp is not None and qq is not None and pp > 1 and qq > 1 and not admissible(pp, qq):
        errs.append(
            f"2/p+3/q<1 violated: 2/{pp:g}+3/{qq:g} = {2 / pp + 3 / qq:.3f} (exponent admissibility for strong solutions)"
        )
    s = values["stepper"]
    if s["scheme"] not in ("be", "cn"):
        errs.append(f"stepper.scheme must be be or cn, got {s['scheme']!r}")
    if s["solver"] not in ("auto", "direct", "krylov"):
        errs.append(f"stepper.solver must be auto, direct or krylov, got {s['solver']!r}")
    _num(errs, "stepper.tol", s["tol"], 0, lo_strict=True)
    _num(errs, "stepper.rho_floor", s["rho_floor"], 0, lo_strict=True)
    pc = values["picard"]
    _num(errs, "picard.tol", pc["tol"], 0, lo_strict=True)
    _num(errs, "picard.max_iters", pc["max_iters"], 1, integer=True)
    _num(errs, "picard.M", pc["M"], 0, lo_strict=True)
    _num(errs, "picard.L", pc["L"], 0, lo_strict=True)
    mf = _num(errs, "picard.min_fraction", pc["min_fraction"], 0, lo_strict=True)
    if mf is not None and mf > 1:
        errs.append("picard.min_fraction must be <= 1")
    df = _num(errs, "flow.det_floor", values["flow"]["det_floor"], 0, lo_strict=True)
    if df is not None and df >= 1:
        errs.append("flow.det_floor must be < 1")
    gl = values["global"]
    _num(errs, "global.epsilon", gl["epsilon"], 0, lo_strict=True)
    _num(errs, "global.gamma", gl["gamma"], 0, lo_strict=True)
    _num(errs, "global.window", gl["window"], 0, lo_strict=True)
    _num(errs, "global.max_windows", gl["max_windows"], 1, integer=True)
    if not isinstance(gl["track_bootstrap"], bool):
        errs.append("global.track_bootstrap must be true or false")
    if gl["quantity"] not in DECAY_QUANTITIES:
        errs.append(f"global.quantity must be one of {', '.join(DECAY_QUANTITIES)}")
    c = values["contraction"]
    if not isinstance(c["T_list"], list) or not c["T_list"]:
        errs.append("contraction.T_list must be a nonempty list")
    else:
        for i, T in enumerate(c["T_list"]):
            _num(errs, f"contraction.T_list[{i}]", T, 0, lo_strict=True)
    _num(errs, "contraction.pairs", c["pairs"], 1, integer=True)
    v = values["verify"]
    for f in v["flows"] if isinstance(v["flows"], list) else [v["flows"]]:
        if f not in ("identity", "dilation", "rotation", "shear", "nonlinear"):
            errs.append(f"verify.flows: unknown flow {f!r}")
    for key, block in (("verify.dims", v["dims"]), ("mms.dims", values["mms"]["dims"])):
        if not isinstance(block, list) or any(d not in (1, 2, 3) for d in block):
            errs.append(f"{key} must list dimensions from 1, 2, 3")
    for key in ("time_steps", "space_sizes"):
        lst = values["mms"][key]
        if not isinstance(lst, list) or len(lst) < 3:
            errs.append(f"mms.{key} needs at least 3 refinements")
    if not isinstance(values["verify"]["sizes"], list) or len(values["verify"]["sizes"]) < 2:
        errs.append("verify.sizes needs at least 2 refinements")
    _num(errs, "mms.T", values["mms"]["T"], 0, lo_strict=True)
    if not values["output"]["dir"]:
        errs.append("output.dir must be set")
    return errs


def from_dict(raw: dict, source: str | None = None) -> RunConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of blocks")
    errs: list[str] = []
    values = _merge(DEFAULTS, raw, "", errs)
    g = values["grid"]
    if "grid" in raw and "extents" not in raw["grid"] and isinstance(g["dim"], int):
        g["extents"] = [33] * g["dim"]
    errs += validate(values)
    if not errs:
        cfg = RunConfig(values, source)
        try:
            cfg.grid()
            cfg.material()
            cfg.motion()
        except ConfigError as exc:
            errs.extend(exc.violations)
        except (ValueError, OSError) as exc:
            errs.append(str(exc))
    if errs:
        raise ConfigError(errs)
    return RunConfig(values, source)


def parse_config(path) -> RunConfig:
    """Read and validate a YAML run configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"parse error at line {line}: {exc.problem}") from exc
    return from_dict(raw, str(path))


def serialize(cfg: RunConfig) -> str:
    return cfg.to_yaml()
