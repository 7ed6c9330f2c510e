"""JSON configuration: schema validation, field specifications, typed views."""

from __future__ import annotations

import ast
import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .forward import CoefficientSpec
from .geometry import Domain, select_beta
from .inverse import ObservationConfig
from .weights import CarlemanParams

DEFAULTS = {
    "time": {"cfl": 0.5},
    "grid": {"data_factor": 2, "assembly_cap": 1024, "refinements": [16, 32, 64]},
    "carleman": {"lambda": 1.0, "t0": 0.0, "s_list": [2, 4, 8, 16], "test_functions": 10},
    "coefficients": {"b": [], "d": 0.0, "c": 0.0, "R": 1.0},
    "source": {},
    "experiment": {
        "kind": "stability",
        "trials": 20,
        "seed": 0,
        "noise_levels": [0.005, 0.01, 0.02, 0.04],
        "tau": 1.1,
        "alpha_noiseless": 1e-10,
        "max_iter": 2000,
        "t_factors": [0.5, 1.5],
        "noise": 0.0,
        "overrides": {"admissibility": False},
    },
}


class ConfigError(ValueError):
    """Invalid configuration document."""


def schema() -> dict:
    return json.loads(resources.files("carleman_lab").joinpath("config_schema.json").read_text("utf-8"))


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else copy.deepcopy(v)
    return out


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def load(path) -> "Config":
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return Config.from_dict(doc, base_dir=path.parent)


# ---------------------------------------------------------------- field specs

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log, "sqrt": np.sqrt,
    "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh, "abs": np.abs,
    "where": np.where, "minimum": np.minimum, "maximum": np.maximum,
}
_CONSTS = {"pi": np.pi, "e": np.e}
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Compare, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.BitAnd, ast.BitOr,
    ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.Eq, ast.NotEq,
)


def compile_expression(text: str, variables: tuple[str, ...]):
    """Whitelisted arithmetic expression in ``variables`` as a numpy callable."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {text!r}: {exc.msg}") from None
    allowed = set(variables) | set(_FUNCS) | set(_CONSTS)
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ConfigError(f"expression {text!r}: {type(node).__name__} is not allowed")
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ConfigError(f"expression {text!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"expression {text!r}: only {sorted(_FUNCS)} may be called")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(f"expression {text!r}: only numeric literals are allowed")
    code = compile(tree, "<config>", "eval")

    def fn(*args):
        env = {"__builtins__": {}, **_FUNCS, **_CONSTS, **dict(zip(variables, args))}
        out = eval(code, env)  # noqa: S307 - names and node types checked above
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(*args).shape).copy()

    fn.expression = text
    return fn


def modes_function(modes, domain: Domain):
    """Sum of Dirichlet sine modes ``[k1, (k2,) amp]`` on ``domain``."""
    dim = domain.dim
    parsed = []
    for m in modes:
        if len(m) != dim + 1:
            raise ConfigError(f"mode {m} needs {dim} wavenumbers and an amplitude")
        parsed.append(([float(k) for k in m[:dim]], float(m[dim])))

    def fn(*xs):
        out = np.zeros(np.broadcast(*xs).shape)
        for ks, amp in parsed:
            term = amp
            for i, k in enumerate(ks):
                term = term * np.sin(k * np.pi * (xs[i] - domain.lower[i]) / domain.sides[i])
            out = out + term
        return out

    return fn


def field_value(spec, domain: Domain, base_dir: Path, time_dependent: bool):
    """Number, array or callable for one field spec."""
    from .grid import GridError, read_field

    if isinstance(spec, (int, float)):
        return float(spec)
    if "constant" in spec:
        return float(spec["constant"])
    if "modes" in spec:
        fn = modes_function(spec["modes"], domain)
        if time_dependent:
            return lambda *a: fn(*a[:-1])
        return fn
    if "expr" in spec:
        names = ("x1", "x2")[: domain.dim] + (("t",) if time_dependent else ())
        return compile_expression(spec["expr"], names)
    path = Path(spec["file"])
    path = path if path.is_absolute() else base_dir / path
    try:
        return read_field(path)
    except (OSError, GridError) as exc:
        raise ConfigError(f"cannot read field file {path}: {exc}") from None


@dataclass(frozen=True)
class Config:
    doc: dict  # validated document with defaults filled in
    base_dir: Path

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "Config":
        validate(doc)
        full = _merge(DEFAULTS, doc)
        dom = full["domain"]
        dim = len(dom["lower"])
        if len(dom["upper"]) != dim or len(full["multiplier"]["x0"]) != dim:
            raise ConfigError("domain.lower, domain.upper and multiplier.x0 must have the same length")
        cfg = cls(full, Path(base_dir))
        cfg.domain  # raises on a degenerate box
        return cfg

    def with_overrides(self, seed: int | None = None, override: bool | None = None) -> "Config":
        doc = copy.deepcopy(self.doc)
        if seed is not None:
            doc["experiment"]["seed"] = int(seed)
        if override:
            doc["experiment"]["overrides"]["admissibility"] = True
        return Config(doc, self.base_dir)

    # typed views
    @property
    def domain(self) -> Domain:
        from .geometry import GeometryError

        try:
            return Domain(tuple(self.doc["domain"]["lower"]), tuple(self.doc["domain"]["upper"]))
        except GeometryError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def x0(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.doc["multiplier"]["x0"])

    @property
    def T(self) -> float:
        return float(self.doc["time"]["T"])

    @property
    def cfl(self) -> float:
        return float(self.doc["time"]["cfl"])

    @property
    def nx(self) -> int:
        return int(self.doc["grid"]["nx"])

    @property
    def experiment(self) -> dict:
        return self.doc["experiment"]

    @property
    def seed(self) -> int:
        return int(self.experiment["seed"])

    @property
    def override(self) -> bool:
        return bool(self.experiment["overrides"]["admissibility"]) or self.experiment["kind"] == "negative-control"

    def coefficients(self) -> CoefficientSpec:
        co = self.doc["coefficients"]
        dom, base = self.domain, self.base_dir
        return CoefficientSpec(
            b=tuple(field_value(v, dom, base, False) for v in co["b"]),
            d=field_value(co["d"], dom, base, False),
            c=field_value(co["c"], dom, base, False),
            R=field_value(co["R"], dom, base, True),
        )

    def source(self):
        """Configured source, or ``None`` when trials should draw random ones."""
        spec = self.doc["source"].get("f")
        return None if spec is None else field_value(spec, self.domain, self.base_dir, False)

    def params(self, s: float = 1.0) -> CarlemanParams:
        ca = self.doc["carleman"]
        beta = ca.get("beta")
        if beta is None:
            beta = select_beta(self.domain, self.x0, self.T)
        return CarlemanParams(self.x0, lam=float(ca["lambda"]), beta=float(beta), t0=float(ca["t0"]), s=s)

    @property
    def s_list(self) -> list[float]:
        return [float(s) for s in self.doc["carleman"]["s_list"]]

    def observation(self, T: float | None = None, faces=None, override: bool | None = None,
                    nx: int | None = None) -> ObservationConfig:
        return ObservationConfig(
            domain=self.domain,
            x0=self.x0,
            T=self.T if T is None else T,
            nx=self.nx if nx is None else nx,
            cfl=self.cfl,
            coefficients=self.coefficients(),
            faces=tuple(faces) if faces else (tuple(self.experiment["faces"]) if "faces" in self.experiment else None),
            override=self.override if override is None else override,
        )

    def canonical(self) -> str:
        return json.dumps(self.doc, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()
