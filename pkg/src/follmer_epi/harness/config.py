"""Scenario configuration: TOML files validated against a JSON schema."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import tomli

from .. import measures as M
from ..bounds import BOUND_NAMES
from ..diagnostics import PAIR_CHECKS, SINGLE_CHECKS
from ..errors import ConfigInvalid, FollmerEPIError
from ..linalg import sym_inv_sqrt
from ..simulate import TimeGrid

SCHEMA_VERSION = 1
DEFAULT_LAMBDAS = (0.1, 0.25, 0.5, 0.75, 0.9)
DEFAULT_PATHS = 20_000
DEFAULT_NODES = 200
DEFAULT_EPSILON = 1e-4

_PKG = resources.files("follmer_epi.harness")


def load_schema() -> dict:
    return json.loads((_PKG / "schema" / "scenario.schema.json").read_text())


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in (_PKG / "scenarios").iterdir() if p.name.endswith(".toml"))


def bundled_path(name: str):
    return _PKG / "scenarios" / f"{name}.toml"


@dataclass
class Scenario:
    name: str
    description: str
    measure_x: dict
    measure_y: dict
    lambdas: tuple
    scheme: str
    epsilon: float
    nodes: int | None
    rho: float | None
    n_paths: int
    seed: int
    method: str
    bounds: tuple
    jump_ct_rule: str
    thm4_cp: float | None
    thm5_cp: float | None
    cor2_xi: float | None
    checks: tuple
    whiten: bool = False
    display_only: bool = False
    raw: dict = field(default_factory=dict)

    def grid(self) -> TimeGrid:
        if self.scheme == "uniform":
            return TimeGrid.uniform(self.nodes or DEFAULT_NODES, self.epsilon)
        if self.rho is not None:
            return TimeGrid.geometric_rho(self.epsilon, self.rho)
        return TimeGrid.geometric(self.nodes or DEFAULT_NODES, self.epsilon)

    def normalized(self) -> dict:
        """The effective configuration, overrides applied, as stored in reports."""
        return {
            "schema_version": SCHEMA_VERSION, "name": self.name, "description": self.description,
            "measure_x": self.measure_x, "measure_y": self.measure_y,
            "lambdas": list(self.lambdas),
            "grid": {"scheme": self.scheme, "epsilon": self.epsilon, "nodes": self.nodes, "rho": self.rho},
            "simulation": {"paths": self.n_paths, "seed": self.seed, "method": self.method},
            "bounds": {"requested": list(self.bounds), "jump_ct_rule": self.jump_ct_rule,
                       "thm4_cp": self.thm4_cp, "thm5_cp": self.thm5_cp, "cor2_xi": self.cor2_xi},
            "checks": {"requested": list(self.checks)},
            "whiten": self.whiten, "display_only": self.display_only,
        }


def _error_key(err: jsonschema.ValidationError) -> str:
    path = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        path += missing[:1]
    elif err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        path += extra[:1]
    return ".".join(path) or "<root>"


def validate(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(list(e.absolute_path)), str(e.absolute_path)))
    if errors:
        err = errors[0]
        key = _error_key(err)
        raise ConfigInvalid(f"invalid config key '{key}': {err.message}", key)
    known = set(SINGLE_CHECKS) | set(PAIR_CHECKS)
    for i, name in enumerate(data.get("checks", {}).get("requested", [])):
        if name not in known:
            raise ConfigInvalid(f"invalid config key 'checks.requested.{i}': unknown check {name!r}",
                                f"checks.requested.{i}")


def parse(data: dict) -> Scenario:
    validate(data)
    grid = data.get("grid", {})
    sim = data.get("simulation", {})
    bounds = data.get("bounds", {})
    checks = data.get("checks", {})
    if "nodes" in grid and "rho" in grid:
        raise ConfigInvalid("invalid config key 'grid.rho': give either grid.nodes or grid.rho", "grid.rho")
    scn = Scenario(
        name=data["name"],
        description=data.get("description", ""),
        measure_x=data["measure_x"],
        measure_y=data["measure_y"],
        lambdas=tuple(float(v) for v in data.get("lambdas", DEFAULT_LAMBDAS)),
        scheme=grid.get("scheme", "geometric"),
        epsilon=float(grid.get("epsilon", DEFAULT_EPSILON)),
        nodes=grid.get("nodes", None if "rho" in grid else DEFAULT_NODES),
        rho=grid.get("rho"),
        n_paths=int(sim.get("paths", DEFAULT_PATHS)),
        seed=int(sim.get("seed", 0)),
        method=sim.get("method", "bridge"),
        bounds=tuple(bounds.get("requested", BOUND_NAMES)),
        jump_ct_rule=bounds.get("jump_ct_rule", "auto"),
        thm4_cp=bounds.get("thm4_cp"),
        thm5_cp=bounds.get("thm5_cp"),
        cor2_xi=bounds.get("cor2_xi"),
        checks=tuple(checks.get("requested", SINGLE_CHECKS + PAIR_CHECKS)),
        whiten=bool(data.get("whiten", False)),
        display_only=bool(data.get("display_only", False)),
        raw=data,
    )
    # fail early on measure declarations
    for key in ("measure_x", "measure_y"):
        build_measure(getattr(scn, key), key)
    return scn


def load(source) -> Scenario:
    """Load a scenario from a TOML path or a bundled scenario name."""
    path = Path(str(source))
    if path.is_file():
        text = path.read_text()
    elif str(source) in bundled_names():
        text = bundled_path(str(source)).read_text()
    else:
        raise ConfigInvalid(f"no config file or bundled scenario named {str(source)!r}", "<path>")
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigInvalid(f"config is not valid TOML: {exc}", "<toml>") from exc
    return parse(data)


def _need(decl: dict, field_name: str, prefix: str):
    if field_name not in decl:
        raise ConfigInvalid(f"invalid config key '{prefix}.{field_name}': required for family "
                            f"{decl['family']!r}", f"{prefix}.{field_name}")
    return decl[field_name]


_MEASURE_CACHE: dict = {}


def build_measure(decl: dict, prefix: str = "measure") -> M.Measure:
    """Construct a :class:`Measure` from a declaration table."""
    key = json.dumps(decl, sort_keys=True)
    if key in _MEASURE_CACHE:
        return _MEASURE_CACHE[key]
    family = decl["family"]
    name = decl.get("name", "")
    poincare = decl.get("poincare")
    try:
        if family == "standard-gaussian":
            m = M.gaussian(np.eye(int(decl.get("dim", 1))), name=name or "standard-gaussian", poincare=poincare)
        elif family == "gaussian":
            if "covariance" in decl:
                cov = np.asarray(decl["covariance"], dtype=float)
            elif "variance" in decl:
                cov = decl["variance"] * np.eye(int(decl.get("dim", 1)))
            else:
                raise ConfigInvalid(f"invalid config key '{prefix}.covariance': gaussian needs covariance "
                                    "or variance", f"{prefix}.covariance")
            m = M.gaussian(cov, name=name, poincare=poincare)
        elif family == "mixture":
            weights = _need(decl, "weights", prefix)
            means = _need(decl, "means", prefix)
            covs = _need(decl, "covariances", prefix)
            m = M.mixture(weights, means, covs, name=name, poincare=poincare)
        else:
            dim = int(decl.get("dim", 1))
            m = M.quartic(dim, decl.get("a", 1.0), decl.get("b", 1.0), name=name, poincare=poincare)
            if "linear" in decl:
                m = M.transform(m, np.asarray(decl["linear"], dtype=float))
        if decl.get("isotropic", False):
            m = M.transform(m, sym_inv_sqrt(m.covariance))
        if "scale" in decl:
            m = M.scaled(m, float(decl["scale"]))
    except ConfigInvalid:
        raise
    except (FollmerEPIError, ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigInvalid(f"invalid config key '{prefix}': {exc}", prefix) from exc
    _MEASURE_CACHE[key] = m
    return m
