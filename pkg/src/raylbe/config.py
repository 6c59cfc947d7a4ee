"""Simulation parameters and the run-configuration file.

SimConfig holds the per-cell scale parameters and derives every
epsilon-dependent quantity from them.  RunConfig is the parsed YAML run
file (schema version 1); errors carry the offending key path and line.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Optional

import yaml

from .densities import InitialDensity, VelocityDensity, initial_density, moment_report, velocity_density
from .errors import ConfigError
from .observables import PhaseBinning, TestFunction, test_function
from .potentials import RadialPotential, from_spec, truncate

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SimConfig:
    epsilon: float
    T: float = 1.0
    gamma: float = 1.0
    s: float = 4.0
    seed: int = 0
    N: Optional[int] = None
    C_b: float = 1.0
    R_exponent: Optional[float] = None
    R_override: Optional[float] = None
    integrator_tol: float = 1e-9
    quad_tol: float = 1e-10
    force_threshold: float = 1e-16

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not self.T > 0:
            raise ConfigError("horizon T must be positive")
        if self.N is not None and self.N < 0:
            raise ConfigError("N must be non-negative")
        if self.R * self.epsilon >= 0.25:
            raise ConfigError(f"interaction diameter R*eps = {self.R * self.epsilon:.3g} must be < 1/4")
        if not 0 < self.xi <= 1:
            raise ConfigError(f"xi = {self.xi} outside (0, 1]")

    @property
    def n_background(self) -> int:
        return int(round(self.epsilon ** -2)) if self.N is None else int(self.N)

    @property
    def R(self) -> float:
        if self.R_override is not None:
            return float(self.R_override)
        k = self.R_exponent if self.R_exponent is not None else 1.0 / (3.0 + self.gamma)
        return self.epsilon ** (-k)

    @property
    def log_inv_eps(self) -> float:
        return abs(math.log(self.epsilon))

    @property
    def M(self) -> float:
        return self.log_inv_eps

    @property
    def V2(self) -> float:
        return self.log_inv_eps

    @property
    def V1(self) -> float:
        return 1.0 / self.log_inv_eps

    @property
    def delta(self) -> float:
        return math.sqrt(self.epsilon)

    @property
    def b(self) -> float:
        return self.C_b * math.exp(-self.C_b * (1.0 / self.epsilon) ** (self.gamma / (3.0 + self.gamma)))

    @property
    def xi(self) -> float:
        return (1.0 - 4.0 / 3.0 * math.pi * (self.R * self.epsilon) ** 3) ** self.n_background

    @property
    def r_restriction(self) -> float:
        """Upper bound R - (b/eps)(1 + 1/V1) on impact parameters in the restricted set."""
        return self.R - self.b / self.epsilon * (1.0 + 1.0 / self.V1)

    def derived(self) -> dict:
        return {"N": self.n_background, "R": self.R, "M": self.M, "V1": self.V1, "V2": self.V2,
                "delta": self.delta, "b": self.b, "xi": self.xi, "r_restriction": self.r_restriction,
                "R_eps": self.R * self.epsilon}

    def with_epsilon(self, eps: float) -> "SimConfig":
        return replace(self, epsilon=eps)


# ---------------------------------------------------------------- run file

DEFAULTS = {
    "version": SCHEMA_VERSION,
    "potential": {"kind": "stretched_exp", "rate": 1.0, "gamma": 1.0, "rho2": 1.0, "s": 4.0},
    "background": {"kind": "maxwellian", "temperature": 1.0},
    "initial": {"position": {"kind": "gaussian", "center": [0.5, 0.5, 0.5], "width": 0.1},
                "velocity": {"kind": "maxwellian", "temperature": 1.0, "drift": [1.0, 0.0, 0.0]}},
    "epsilons": [0.1, 0.05, 0.025],
    "T": 1.0,
    "seeds": [1, 2, 3],
    "derived": {"C_b": 1.0, "R_exponent": None},
    "tolerances": {"integrator": 1e-9, "quadrature": 1e-10, "force_threshold": 1e-16},
    "samples": {"trajectories": 3000, "walkers": 10000, "operator": 1000000},
    "scatter": {"R": 10.0, "r": [0.0, 12.0, 25], "speed": [0.5, 4.0, 8]},
    "lbe": {"kinematics": "rayleigh"},
    "compare": {"position_bins": 1, "velocity_bins": 8, "speed_ball": 8.0, "binning": "shells",
                "t_fraction": 0.5,
                "tests": [{"kind": "gaussian_bump", "center": [0.0, 0.0, 0.0], "width": 1.0},
                          {"kind": "gaussian_bump", "center": [0.0, 0.0, 0.0], "width": 2.0},
                          {"kind": "poly_cutoff", "degree": 2, "radius": 4.0}],
                "bootstrap": 200},
    "divergence": {"T": 0.2, "trajectories": 100},
    "operator": {"R": [10.0, 20.0, 40.0, 80.0],
                 "potential": {"kind": "power_law", "s": 4.0},
                 "f_velocity": {"kind": "uniform_ball", "radius": 1.0, "center": [0.5, 0.0, 0.0]},
                 "test": {"kind": "gaussian_bump", "center": [1.0, 0.0, 0.0], "width": 0.7}},
    "output": "raylbe-out",
}

_TOP_KEYS = set(DEFAULTS)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and v.get("kind", out[k].get("kind")) == out[k].get("kind"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _line_index(text):
    """Map dotted key paths to 1-based line numbers using the YAML node tree."""
    index = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return index

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{path}.{k.value}" if path else str(k.value)
                index[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                p = f"{path}[{i}]"
                index[p] = v.start_mark.line + 1
                walk(v, p)

    if root is not None:
        walk(root, "")
    return index


class _Locator:
    def __init__(self, text="", source="<config>"):
        self.lines = _line_index(text)
        self.source = source

    def fail(self, path, msg):
        line = self.lines.get(path)
        while line is None and "." in path:
            path = path.rsplit(".", 1)[0]
            line = self.lines.get(path)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {path}: {msg}")


@dataclass
class RunConfig:
    raw: dict
    potential: RadialPotential
    background: VelocityDensity
    initial: InitialDensity
    epsilons: list
    T: float
    seeds: list
    C_b: float
    R_exponent: Optional[float]
    integrator_tol: float
    quad_tol: float
    force_threshold: float
    samples: dict
    scatter: dict
    compare: dict
    output: str
    lbe: dict = field(default_factory=dict)
    divergence: dict = field(default_factory=dict)
    operator: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def sim(self, eps: float, seed: Optional[int] = None, **kw) -> SimConfig:
        gamma = self.potential.gamma if self.potential.gamma > 0 else kw.pop("gamma", 1.0)
        s = self.potential.s if math.isfinite(self.potential.s) else 4.0
        return SimConfig(epsilon=eps, T=self.T, gamma=gamma, s=s,
                         seed=self.seeds[0] if seed is None else seed, C_b=self.C_b,
                         R_exponent=self.R_exponent, integrator_tol=self.integrator_tol,
                         quad_tol=self.quad_tol, force_threshold=self.force_threshold, **kw)

    def truncated(self, eps: float) -> RadialPotential:
        return truncate(self.potential, self.sim(eps).R)

    def binning(self) -> PhaseBinning:
        c = self.compare
        V = c.get("speed_ball")
        if V is None:
            V = max(self.sim(e).V2 for e in self.epsilons)
        return PhaseBinning(int(c["position_bins"]), int(c["velocity_bins"]), float(V), c.get("binning", "shells"))

    def tests(self) -> list:
        return [test_function(t) for t in self.compare.get("tests") or []]

    def to_dict(self):
        return copy.deepcopy(self.raw)

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_text(text: str, source="<config>", overrides: Optional[dict] = None) -> RunConfig:
    loc = _Locator(text, source)
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: YAML parse error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return from_dict(data, loc, overrides)


def load(path: str, overrides: Optional[dict] = None) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return load_text(text, path, overrides)


def default_text() -> str:
    return resources.files("raylbe").joinpath("configs/default.yaml").read_text()


def from_dict(data: dict, loc: Optional[_Locator] = None, overrides: Optional[dict] = None) -> RunConfig:
    loc = loc or _Locator()
    unknown = set(data) - _TOP_KEYS
    if unknown:
        loc.fail(sorted(unknown)[0], "unknown key")
    if data.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        loc.fail("version", f"unsupported schema version {data.get('version')}")
    raw = _merge(DEFAULTS, data)
    if overrides:
        raw = _merge(raw, overrides)
    warnings = []

    try:
        pot = from_spec(raw["potential"])
    except (ValueError, KeyError, TypeError) as exc:
        loc.fail("potential", f"bad potential spec: {exc}")
    if pot.cutoff is not None:
        loc.fail("potential.cutoff", "the run potential is the long-range one; truncation is derived per epsilon")

    try:
        g = velocity_density(raw["background"])
    except ConfigError as exc:
        loc.fail("background", str(exc))
    rep = moment_report(g)
    if not rep["second_moment_finite"]:
        loc.fail("background", "background density needs a finite second moment")
    if not rep["weighted_sup_finite"]:
        warnings.append("background is a point mass: (1+|v|^5) g is unbounded; allowed for diagnostics only")
    if g.kind != "point" and not g.centered:
        loc.fail("background", "background density must be centred")
    try:
        f0 = initial_density(raw["initial"])
    except ConfigError as exc:
        loc.fail("initial", str(exc))

    eps = raw["epsilons"]
    if not isinstance(eps, list) or not eps or not all(isinstance(e, (int, float)) and 0 < e < 1 for e in eps):
        loc.fail("epsilons", "need a non-empty list of values in (0, 1)")
    seeds = raw["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        loc.fail("seeds", "need a non-empty list of non-negative integers")
    try:
        T = float(raw["T"])
        if T <= 0:
            raise ValueError
    except (TypeError, ValueError):
        loc.fail("T", "horizon must be a positive number")
    tol = raw["tolerances"]
    for key in ("integrator", "quadrature", "force_threshold"):
        if not isinstance(tol.get(key), (int, float)) or tol[key] <= 0:
            loc.fail(f"tolerances.{key}", "must be a positive number")
    if not 1e-13 <= tol["quadrature"] <= 1e-6:
        loc.fail("tolerances.quadrature", "must lie in [1e-13, 1e-6]")
    for key, val in raw["samples"].items():
        if not isinstance(val, int) or isinstance(val, bool) or val <= 0:
            loc.fail(f"samples.{key}", "must be a positive integer")
    if raw["lbe"].get("kinematics") not in ("symmetric", "rayleigh"):
        loc.fail("lbe.kinematics", "must be 'symmetric' or 'rayleigh'")
    cmp_ = raw["compare"]
    if cmp_.get("binning") not in ("shells", "cube"):
        loc.fail("compare.binning", "must be 'shells' or 'cube'")
    for key in ("position_bins", "velocity_bins"):
        if not isinstance(cmp_.get(key), int) or cmp_[key] < 1:
            loc.fail(f"compare.{key}", "must be a positive integer")
    if cmp_.get("speed_ball") is not None and not (isinstance(cmp_["speed_ball"], (int, float)) and cmp_["speed_ball"] > 0):
        loc.fail("compare.speed_ball", "must be a positive number or null")
    if not isinstance(cmp_.get("t_fraction"), (int, float)) or not 0 < cmp_["t_fraction"] <= 1:
        loc.fail("compare.t_fraction", "must lie in (0, 1]")
    for i, spec in enumerate(cmp_.get("tests") or []):
        try:
            test_function(spec)
        except (ConfigError, AttributeError, TypeError) as exc:
            loc.fail(f"compare.tests[{i}]", str(exc))
    div = raw["divergence"]
    if not isinstance(div.get("T"), (int, float)) or div["T"] <= 0:
        loc.fail("divergence.T", "must be a positive number")
    if not isinstance(div.get("trajectories"), int) or div["trajectories"] < 1:
        loc.fail("divergence.trajectories", "must be a positive integer")
    op = raw["operator"]
    try:
        Rs = [float(r) for r in op["R"]]
        if not Rs or min(Rs) <= math.e:
            raise ValueError
    except (TypeError, ValueError, KeyError):
        loc.fail("operator.R", "need a non-empty list of radii > e")
    try:
        op_pot = from_spec(op["potential"])
        if not math.isfinite(op_pot.s) or op_pot.s <= 2:
            raise ValueError("decay exponent must exceed 2")
    except (ValueError, KeyError, TypeError) as exc:
        loc.fail("operator.potential", f"bad potential spec: {exc}")
    try:
        velocity_density(op["f_velocity"])
    except (ConfigError, KeyError) as exc:
        loc.fail("operator.f_velocity", str(exc))
    try:
        test_function(op["test"])
    except (ConfigError, KeyError, AttributeError) as exc:
        loc.fail("operator.test", str(exc))

    cfg = RunConfig(raw=raw, potential=pot, background=g, initial=f0, epsilons=[float(e) for e in eps],
                    T=T, seeds=list(seeds), C_b=float(raw["derived"]["C_b"]),
                    R_exponent=raw["derived"].get("R_exponent"), integrator_tol=float(tol["integrator"]),
                    quad_tol=float(tol["quadrature"]), force_threshold=float(tol["force_threshold"]),
                    samples=dict(raw["samples"]), scatter=dict(raw["scatter"]), compare=dict(raw["compare"]),
                    output=str(raw["output"]), lbe=dict(raw["lbe"]), divergence=dict(raw["divergence"]),
                    operator=dict(raw["operator"]), warnings=warnings)
    for i, e in enumerate(cfg.epsilons):
        try:
            cfg.sim(e)
        except ConfigError as exc:
            loc.fail(f"epsilons[{i}]", str(exc))
    return cfg


def sim_dict(sc: SimConfig) -> dict:
    d = asdict(sc)
    d["derived"] = sc.derived()
    return d
