"""Scenario schema: TOML parsing, validation, dotted-key overrides and serialization."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .contact_law import ContactLaw, Family, RegularizedLaw, build_regularized
from .expression import ExpressionError, FieldExpression
from .grid_ops import BCKind, Grid
from .memory import MemoryKernel, smallness_check, total_mass


class ScenarioError(ValueError):
    """Invalid scenario; the message names the violated invariant."""

    def __init__(self, invariant: str, detail: str):
        super().__init__(f"[{invariant}] {detail}")
        self.invariant = invariant


class ModelKind(str, enum.Enum):
    BIHARMONIC = "biharmonic"
    VON_KARMAN = "von_karman"
    VON_KARMAN_ROT_INERTIA = "von_karman_rot_inertia"
    REISSNER_MINDLIN = "reissner_mindlin"
    FULL_VON_KARMAN = "full_von_karman"


class MemoryKind(str, enum.Enum):
    SHORT = "short"
    SINGULAR = "singular"


Expr = float | str


@dataclass
class GridConfig:
    nx: int = 15
    ny: int = 15
    lx: float = 1.0
    ly: float = 1.0

    def build(self) -> Grid:
        return Grid(self.nx, self.ny, self.lx, self.ly)


@dataclass
class TimeConfig:
    T: float = 1.0
    dt: float = 1e-3

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / self.dt - 1e-9))


@dataclass
class ModelConfig:
    kind: ModelKind = ModelKind.BIHARMONIC
    bc: BCKind = BCKind.SIMPLY_SUPPORTED
    memory: MemoryKind = MemoryKind.SHORT
    e0: float = 1.0
    e1: float = 0.0
    b0: float = 1.0
    nu: float = 0.3
    nu0: float = 0.3
    nu1: float = 0.3
    g0: float = 0.0
    a: float = 0.0
    b: float = 1.0
    c_tilde: float = 1.0
    membrane_scale: float = 1.0


@dataclass
class KernelConfig:
    alpha: float = 0.25
    q0: float = 0.0
    lam: float = 1.0
    r0: float = 0.0
    mu: float = 1.0
    t0: float = 1.0

    def build(self) -> MemoryKernel:
        return MemoryKernel(self.alpha, self.q0, self.lam, self.r0, self.mu, self.t0)


@dataclass
class ContactConfig:
    enabled: bool = True
    family: Family = Family.RATIONAL
    kappa: float = 1.0
    gamma: float = -0.5
    k: int = 4
    delta0: float | None = None
    table: tuple = ()
    boundary: bool = False

    def law(self) -> ContactLaw:
        return ContactLaw(self.gamma, self.family, self.kappa, self.table)

    def regularized(self) -> RegularizedLaw:
        return build_regularized(self.law(), self.k, self.delta0)


@dataclass
class LoadConfig:
    f: Expr = 0.0
    M1: Expr = 0.0
    M2: Expr = 0.0
    F1: Expr = 0.0
    F2: Expr = 0.0


@dataclass
class InitialConfig:
    u0: Expr = 1.0
    u1: Expr = 0.0
    g: Expr = 0.0
    phi0_1: Expr = 0.0
    phi0_2: Expr = 0.0
    phi1_1: Expr = 0.0
    phi1_2: Expr = 0.0
    uvec0_1: Expr = 0.0
    uvec0_2: Expr = 0.0
    uvec1_1: Expr = 0.0
    uvec1_2: Expr = 0.0


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 50


@dataclass
class OutputConfig:
    snapshot_every: int = 100


@dataclass
class Scenario:
    name: str = "scenario"
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    memory: KernelConfig | None = None
    contact: ContactConfig = field(default_factory=ContactConfig)
    loads: LoadConfig = field(default_factory=LoadConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def expr(self, section: str, name: str) -> FieldExpression:
        return FieldExpression.of(getattr(getattr(self, section), name))

    def nodal(self, section: str, name: str, t: float = 0.0) -> np.ndarray:
        """Expression evaluated on the full node array."""
        X1, X2 = self.grid.build().coords()
        return self.expr(section, name).evaluate(X1, X2, t)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    "grid": GridConfig,
    "time": TimeConfig,
    "model": ModelConfig,
    "memory": KernelConfig,
    "contact": ContactConfig,
    "loads": LoadConfig,
    "initial": InitialConfig,
    "solver": SolverConfig,
    "output": OutputConfig,
}
_RENAMES = {"memory": {"lambda": "lam"}}


def _coerce(cls, name: str, value):
    ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
    if ftype == "Expr":
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ScenarioError("field expression", f"{name} must be a number or an expression string")
        return float(value) if isinstance(value, (int, float)) else value
    if ftype == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError("integer entry", f"{name} must be an integer, got {value!r}")
        return value
    if ftype == "bool":
        if not isinstance(value, bool):
            raise ScenarioError("boolean entry", f"{name} must be true or false")
        return value
    if ftype in ("float", "float | None"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError("numeric entry", f"{name} must be a number, got {value!r}")
        return float(value)
    if ftype == "tuple":
        try:
            return tuple((float(x), float(p)) for x, p in value)
        except (TypeError, ValueError):
            raise ScenarioError("contact table", "table must be a list of [x, p] pairs") from None
    enum_types = {"ModelKind": ModelKind, "BCKind": BCKind, "MemoryKind": MemoryKind, "Family": Family}
    if ftype in enum_types:
        try:
            return enum_types[ftype](value)
        except ValueError:
            allowed = ", ".join(e.value for e in enum_types[ftype])
            raise ScenarioError("enumerated entry", f"{name} = {value!r} is not one of: {allowed}") from None
    return value


def scenario_from_dict(data: dict) -> Scenario:
    data = dict(data)
    kwargs = {}
    if "name" in data:
        kwargs["name"] = str(data.pop("name"))
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ScenarioError("known sections", f"unknown section [{section}]")
        cls = _SECTIONS[section]
        if not isinstance(values, dict):
            raise ScenarioError("known sections", f"[{section}] must be a table")
        names = {f.name for f in dataclasses.fields(cls)}
        entries = {}
        for key, value in values.items():
            attr = _RENAMES.get(section, {}).get(key, key)
            if attr not in names:
                raise ScenarioError("known keys", f"unknown key {section}.{key}")
            entries[attr] = _coerce(cls, attr, value)
        kwargs[section] = cls(**entries)
    return Scenario(**kwargs)


def scenario_to_dict(sc: Scenario) -> dict:
    out: dict = {"name": sc.name}
    for section, cls in _SECTIONS.items():
        obj = getattr(sc, section)
        if obj is None:
            continue
        back = {v: k for k, v in _RENAMES.get(section, {}).items()}
        table = {}
        for f in dataclasses.fields(cls):
            value = getattr(obj, f.name)
            if value is None:
                continue
            if isinstance(value, enum.Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = [list(pair) for pair in value]
            table[back.get(f.name, f.name)] = value
        out[section] = table
    return out


def dumps_scenario(sc: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(sc))


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(sc))


def _parse_override_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings to a raw scenario dict."""
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError("override syntax", f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        value = _parse_override_value(text.strip())
        if len(parts) == 1:
            data[parts[0]] = value
        elif len(parts) == 2:
            data.setdefault(parts[0], {})[parts[1]] = value
        else:
            raise ScenarioError("override syntax", f"override key {key!r} must be section.key")
    return data


def loads_scenario(text: str, overrides=None, validate: bool = True) -> Scenario:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError("TOML syntax", str(exc)) from None
    sc = scenario_from_dict(apply_overrides(data, overrides))
    if validate:
        validate_scenario(sc)
    return sc


def parse_scenario(path, overrides=None, validate: bool = True) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError("readable scenario file", str(exc)) from None
    sc = loads_scenario(text, overrides, validate)
    return sc


# -- validation ------------------------------------------------------------------


def _require(cond: bool, invariant: str, detail: str) -> None:
    if not cond:
        raise ScenarioError(invariant, detail)


def _poisson_range(kind: ModelKind) -> tuple[float, float, tuple[str, ...]]:
    if kind in (ModelKind.REISSNER_MINDLIN, ModelKind.FULL_VON_KARMAN):
        return -1.0, 0.5, ("nu0", "nu1")
    return -0.5, 1.0, ("nu",)


def validate_scenario(sc: Scenario) -> Scenario:
    g = sc.grid
    _require(g.nx >= 3 and g.ny >= 3, "grid size", "grid needs at least 3 interior nodes per axis")
    _require(g.lx > 0 and g.ly > 0, "grid size", "domain edge lengths must be positive")
    _require(sc.time.dt > 0, "positive time step", f"dt must be positive, got {sc.time.dt}")
    _require(sc.time.T >= sc.time.dt, "final time", f"T = {sc.time.T} must be at least dt = {sc.time.dt}")

    m = sc.model
    _require(m.e0 > 0, "positive elastic modulus", "e0 must be positive")
    _require(m.e1 >= 0, "nonnegative viscous modulus", "e1 must be nonnegative")
    _require(m.b0 > 0, "positive rigidity", "b0 must be positive")
    _require(m.membrane_scale >= 0, "nonnegative membrane scale", "membrane_scale must be >= 0")
    lo, hi, names = _poisson_range(m.kind)
    for name in names:
        val = getattr(m, name)
        _require(lo < val < hi, "Poisson ratio range", f"{name} = {val} must lie in ({lo}, {hi}) for {m.kind.value}")
    if m.kind is ModelKind.VON_KARMAN_ROT_INERTIA:
        _require(m.g0 > 0, "positive rotation inertia", "g0 must be positive for von_karman_rot_inertia")
    if m.kind is ModelKind.FULL_VON_KARMAN:
        _require(m.a > 0 and m.b > 0, "positive full von Karman constants", "a and b must be positive")
        _require(
            m.bc is BCKind.SIMPLY_SUPPORTED,
            "simply supported full von Karman plate",
            "full_von_karman forbids the clamped plate: boundary interpenetration needs a free edge",
        )
    if m.kind in (ModelKind.REISSNER_MINDLIN, ModelKind.FULL_VON_KARMAN):
        _require(m.c_tilde > 0, "positive tensor scale", "c_tilde must be positive")

    if m.memory is MemoryKind.SINGULAR:
        _require(sc.memory is not None, "memory kernel present", "singular memory needs a [memory] section")
        _require(m.e1 > 0, "positive viscous modulus", "singular memory needs e1 > 0")
        try:
            kernel = sc.memory.build()
        except ValueError as exc:
            raise ScenarioError("memory kernel", str(exc)) from None
        _require(kernel.singular, "singular kernel", "singular memory needs q0 > 0 (q positive near 0)")
        _require(kernel.lam > 0 and kernel.mu > 0, "decaying kernel", "lambda and mu must be positive")
        _require(
            smallness_check(kernel, m.e0, m.e1),
            "memory smallness",
            f"total kernel mass {total_mass(kernel):.6g} must be below e0/(2 e1) = {m.e0 / (2 * m.e1):.6g}",
        )
        if m.kind is ModelKind.REISSNER_MINDLIN:
            _require(m.nu1 == m.nu0, "equal Poisson ratios", "singular Reissner-Mindlin memory needs nu1 == nu0")

    c = sc.contact
    _require(c.gamma < 0 and math.isfinite(c.gamma), "negative interpenetration bound", "gamma must be negative")
    _require(c.k >= 0, "regularization index", "k must be >= 0")
    if c.delta0 is not None:
        _require(c.delta0 > 0, "positive cap offset", "delta0 must be positive")
    try:
        reg = c.regularized()
    except ValueError as exc:
        raise ScenarioError("contact law", str(exc)) from None
    if c.boundary:
        _require(m.kind is ModelKind.FULL_VON_KARMAN, "boundary contact model", "boundary contact needs full_von_karman")

    _require(sc.solver.tol > 0, "positive Newton tolerance", "solver.tol must be positive")
    _require(sc.solver.max_iter >= 1, "Newton iteration budget", "solver.max_iter must be >= 1")
    _require(sc.output.snapshot_every >= 1, "snapshot cadence", "output.snapshot_every must be >= 1")

    grid = g.build()
    X1, X2 = grid.coords()
    values = {}
    for section in ("loads", "initial"):
        for f in dataclasses.fields(getattr(sc, section)):
            try:
                expr = sc.expr(section, f.name)
            except ExpressionError as exc:
                raise ScenarioError("field expression syntax", f"{section}.{f.name}: {exc}") from None
            for t in (0.0, sc.time.T):
                vals = expr.evaluate(X1, X2, t)
                _require(np.all(np.isfinite(vals)), "finite field values", f"{section}.{f.name} is not finite on the grid")
            values[f.name] = expr.evaluate(X1, X2, 0.0)

    u0 = values["u0"]
    ring = np.concatenate([u0[0], u0[-1], u0[1:-1, 0], u0[1:-1, -1]])
    _require(
        np.ptp(ring) <= 1e-12 * max(1.0, np.abs(ring).max()),
        "constant boundary trace",
        "u0 must be constant on the boundary (it fixes the Dirichlet trace of the deflection)",
    )
    _require(bool(np.all(values["g"] >= 0)), "nonnegative gap", "gap function g must be >= 0")
    if c.enabled:
        _require(
            float(u0.min()) > 0,
            "initial deflection bounded away from zero",
            f"u0 must satisfy u0 >= c0 > 0, got min(u0) = {u0.min():.6g}",
        )
        _require(
            float((u0 + values["g"]).min()) > reg.base.gamma,
            "initial admissibility",
            "u0 + g must exceed gamma",
        )
    return sc
