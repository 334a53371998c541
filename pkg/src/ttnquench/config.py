"""TOML experiment configs: strict validation, defaults, stable hashing.

Unknown keys anywhere are errors; so are type mismatches.  The resolved
config (defaults filled in) is what gets hashed and echoed into run
manifests, so two runs with the same hash saw exactly the same inputs.
"""

import hashlib
import json
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .lattice import Lattice
from .model import make_pattern, pattern_from_text
from .oracle import ORACLE_MAX_SITES
from .tdvp import ENGINES

_REQUIRED = object()
_OPTIONAL = object()

# template value doubles as the type witness; tuples = (marker, type)
_SCHEMA = {
    "run": {
        "name": "quench",
        "engine": "tdvp1",
        "seed": 0,
    },
    "lattice": {
        "rows": (_REQUIRED, int),
        "cols": (_REQUIRED, int),
        "row_boundary": "periodic",
        "col_boundary": "periodic",
    },
    "model": {
        "J": 1.0,
        "g": (_REQUIRED, float),
    },
    "initial": {
        "kind": "polarized",
        "interface_col": (_OPTIONAL, int),
        "size": (_OPTIONAL, int),
        "offset": (_OPTIONAL, list),
        "text": (_OPTIONAL, str),
    },
    "evolution": {
        "chi": 16,
        "dt": 0.005,
        "t_end": (_REQUIRED, float),
        "measure_every": 1,
        "noise": 1e-16,
        "cutoff": 0.0,
        "hybrid_every": 10,
        "krylov_tol": 1e-12,
        "krylov_max_dim": 30,
        "checkpoint_minutes": 0.0,
    },
    "observables": {
        "cuts": (_OPTIONAL, list),
        "entropy_links": (_OPTIONAL, list),
    },
    "sweep": {
        "parameter": (_REQUIRED, str),
        "values": (_REQUIRED, list),
        "reference": 0,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(path, value, want):
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, want):
        raise ConfigError(
            f"{path}: expected {want.__name__}, got {value!r}")
    return value


def _resolve_section(name, schema, given):
    out = {}
    for key, value in given.items():
        if key not in schema:
            raise ConfigError(f"unknown key {name}.{key}")
    for key, template in schema.items():
        path = f"{name}.{key}"
        if isinstance(template, tuple):
            marker, want = template
            if key in given:
                out[key] = _coerce(path, given[key], want)
            elif marker is _REQUIRED:
                raise ConfigError(f"missing required key {path}")
            else:
                out[key] = None
        else:
            if key in given:
                out[key] = _coerce(path, given[key], type(template))
            else:
                out[key] = template
    return out


def _resolve(raw):
    for section in raw:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(raw[section], dict):
            raise ConfigError(f"[{section}] must be a table")
    resolved = {}
    for name, schema in _SCHEMA.items():
        if name == "sweep":
            if name in raw:
                resolved[name] = _resolve_section(name, schema, raw[name])
            continue
        resolved[name] = _resolve_section(name, schema, raw.get(name, {}))
    return resolved


def config_hash(resolved):
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def apply_overrides(raw, overrides):
    """Apply 'section.key=value' strings onto a raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not section.key=value")
        dotted, text = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {dotted!r} must be section.key")
        try:
            value = tomllib.loads(f"v = {text}")["v"]
        except tomllib.TOMLDecodeError:
            value = text
        raw.setdefault(parts[0], {})[parts[1]] = value
    return raw


@dataclass(frozen=True)
class ExperimentSpec:
    """A fully resolved single run."""

    resolved: dict
    hash: str

    @property
    def name(self):
        return self.resolved["run"]["name"]

    @property
    def engine(self):
        return self.resolved["run"]["engine"]

    def lattice(self):
        lat = self.resolved["lattice"]
        return Lattice(lat["rows"], lat["cols"],
                       row_boundary=lat["row_boundary"],
                       col_boundary=lat["col_boundary"])

    def pattern(self):
        lat = self.lattice()
        init = self.resolved["initial"]
        kind = init["kind"]
        if kind == "custom":
            if init["text"] is None:
                raise ConfigError("initial.kind = 'custom' needs initial.text")
            return pattern_from_text(lat, init["text"])
        kwargs = {}
        if init["interface_col"] is not None:
            kwargs["interface_col"] = init["interface_col"]
        if init["size"] is not None:
            kwargs["size"] = init["size"]
        if init["offset"] is not None:
            kwargs["offset"] = tuple(init["offset"])
        try:
            return make_pattern(lat, kind, **kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"initial: {exc}") from exc

    def cuts(self):
        lat = self.lattice()
        out = []
        for item in self.resolved["observables"]["cuts"] or []:
            if not isinstance(item, dict) \
                    or set(item) != {"anchor", "direction"}:
                raise ConfigError(
                    "observables.cuts entries need anchor and direction")
            r, c = item["anchor"]
            if not (0 <= r < lat.rows and 0 <= c < lat.cols):
                raise ConfigError(f"cut anchor {item['anchor']} off lattice")
            if item["direction"] not in ("row", "col", "diagonal"):
                raise ConfigError(
                    f"unknown cut direction {item['direction']!r}")
            out.append((lat.site(r, c), item["direction"]))
        return out

    def entropy_links(self):
        return [int(n) for n in
                self.resolved["observables"]["entropy_links"] or []]

    def quench_kwargs(self):
        ev = self.resolved["evolution"]
        return {
            "J": self.resolved["model"]["J"],
            "g": self.resolved["model"]["g"],
            "chi": ev["chi"], "dt": ev["dt"], "t_end": ev["t_end"],
            "engine": self.engine,
            "measure_every": ev["measure_every"],
            "noise": ev["noise"], "seed": self.resolved["run"]["seed"],
            "krylov_tol": ev["krylov_tol"],
            "krylov_max_dim": ev["krylov_max_dim"],
            "cutoff": ev["cutoff"], "hybrid_every": ev["hybrid_every"],
            "cuts": self.cuts(), "entropy_links": self.entropy_links(),
            "config_hash": self.hash,
        }


@dataclass(frozen=True)
class SweepSpec:
    """A one-parameter family of runs derived from a base config."""

    base_raw: dict
    parameter: str
    values: tuple
    reference: int

    def members(self):
        out = []
        for value in self.values:
            raw = json.loads(json.dumps(self.base_raw))
            raw.pop("sweep", None)
            section, key = self.parameter.split(".")
            raw.setdefault(section, {})[key] = value
            out.append(_build_spec(raw))
        return out


def _validate_physics(spec):
    lat = spec.lattice()
    spec.pattern()
    spec.cuts()
    ev = spec.resolved["evolution"]
    if spec.engine not in ENGINES:
        raise ConfigError(f"run.engine must be one of {ENGINES}")
    if spec.engine == "oracle" and lat.n_sites > ORACLE_MAX_SITES:
        raise ConfigError(
            f"oracle engine is limited to {ORACLE_MAX_SITES} sites; "
            f"{lat.rows}x{lat.cols} has {lat.n_sites}")
    if ev["dt"] <= 0:
        raise ConfigError("evolution.dt must be positive")
    if ev["t_end"] < 0:
        raise ConfigError("evolution.t_end must be nonnegative")
    if ev["chi"] < 1:
        raise ConfigError("evolution.chi must be at least 1")
    if ev["measure_every"] < 1:
        raise ConfigError("evolution.measure_every must be at least 1")
    n_nodes = max(2, 1 << (lat.n_sites - 1).bit_length()) - 1
    for n in spec.entropy_links():
        if not 1 <= n < n_nodes:
            raise ConfigError(f"entropy link {n} is not a non-root node")


def _build_spec(raw):
    resolved = _resolve(raw)
    spec = ExperimentSpec(resolved=resolved, hash=config_hash(resolved))
    _validate_physics(spec)
    return spec


def parse_config(source, overrides=()):
    """Load a config file or dict -> (ExperimentSpec, SweepSpec or None)."""
    if isinstance(source, dict):
        raw = json.loads(json.dumps(source))
    else:
        with open(source, "rb") as fp:
            raw = tomllib.load(fp)
    raw = apply_overrides(raw, overrides)
    sweep = None
    if "sweep" in raw:
        sw = _resolve(raw)["sweep"]
        if sw["parameter"].count(".") != 1 \
                or sw["parameter"].split(".")[0] not in _SCHEMA:
            raise ConfigError(
                f"sweep.parameter {sw['parameter']!r} must be section.key")
        if not sw["values"]:
            raise ConfigError("sweep.values must be non-empty")
        if not 0 <= sw["reference"] < len(sw["values"]):
            raise ConfigError("sweep.reference out of range")
        sweep = SweepSpec(base_raw=raw, parameter=sw["parameter"],
                          values=tuple(sw["values"]),
                          reference=sw["reference"])
    base = dict(raw)
    base.pop("sweep", None)
    spec = _build_spec(base)
    return spec, sweep
