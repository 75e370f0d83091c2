"""Run configuration: YAML parsing, validation and the resolved form.

Every section mirrors a module. Unknown keys are errors; every default is
written back by :meth:`RunConfig.to_dict`, so a manifest records the full
configuration. Diagnostics name the key path and, when parsing YAML, the
source line.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .integrator import SCHEMES

MODES = ("l3", "h12")
RUN_KINDS = ("cascade", "direct")
NOISE_KINDS = ("zero", "identity", "diagonal-spectral")
INITIAL_KINDS = ("random", "taylor-green", "zero", "file")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every located problem."""

    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)


def _valid_indices(v) -> bool:
    ints = all(isinstance(i, int) and not isinstance(i, bool) and i >= 0 for i in v)
    return bool(v) and ints and len(set(v)) == len(v)


# key: (type, default, check, message)
_NUM = (int, float)
SCHEMA = {
    "grid": {
        "dim": (int, 2, lambda v: v in (2, 3), "must be 2 or 3"),
        "n_per_axis": (int, 16, lambda v: v >= 8 and v % 2 == 0, "must be an even integer >= 8"),
    },
    "time": {
        "T": (_NUM, 0.25, lambda v: v > 0, "must be positive"),
        "dt": (_NUM, 1e-3, lambda v: v > 0, "must be positive"),
        "scheme": (str, "exponential-em", lambda v: v in SCHEMES, f"must be one of {list(SCHEMES)}"),
    },
    "run": {
        "kind": (str, "cascade", lambda v: v in RUN_KINDS, f"must be one of {list(RUN_KINDS)}"),
        "mode": (str, "l3", lambda v: v in MODES, f"must be one of {list(MODES)}"),
        "ledger_stride": (int, 5, lambda v: v >= 1, "must be >= 1"),
    },
    "noise": {
        "kind": (str, "diagonal-spectral", lambda v: v in NOISE_KINDS,
                 f"must be one of {list(NOISE_KINDS)}"),
        "n_modes": (int, 8, lambda v: v >= 0, "must be >= 0"),
        "amplitude": (_NUM, 3.0, lambda v: v >= 0, "must be >= 0"),
        "decay": (_NUM, 0.7, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
        "radius_step": (int, 3, lambda v: v >= 1, "must be >= 1"),
    },
    "initial_data": {
        "kind": (str, "random", lambda v: v in INITIAL_KINDS, f"must be one of {list(INITIAL_KINDS)}"),
        "seed": (int, 0, lambda v: v >= 0, "must be >= 0"),
        "slope": (_NUM, 0.0, None, ""),
        "decay": (_NUM, 3.0, lambda v: v >= 0, "must be >= 0"),
        "scale": (_NUM, 2.0, lambda v: v >= 0, "must be >= 0"),
        "path": (str, "", None, ""),
    },
    "decomposition": {
        "epsilon0": (_NUM, 0.05, lambda v: 0 < v < 0.5, "must lie in (0, 1/2)"),
        "k_max": (int, 8, lambda v: 0 <= v <= 30, "must lie in [0, 30]"),
    },
    "cascade": {
        "epsilon1": (_NUM, 0.105, lambda v: 0 < v < 1, "must lie in (0, 1)"),
        "K1": ((int, float, type(None)), None, lambda v: v is None or v > 0,
               "must be positive or null (rule 2 K0 + 1)"),
        "M_factor": (_NUM, 8.0, lambda v: v > 0, "must be positive"),
        "M_scale": (_NUM, 1.0, lambda v: v > 0, "must be positive"),
    },
    "ensemble": {
        "n_paths": (int, 64, lambda v: v >= 1, "must be >= 1"),
        "base_seed": (int, 7, lambda v: 0 <= v < 2 ** 63, "must lie in [0, 2**63)"),
        "chunk_size": (int, 16, lambda v: v >= 1, "must be >= 1"),
        "indices": ((list, type(None)), None, lambda v: v is None or _valid_indices(v),
                    "must be null or a nonempty list of distinct nonnegative integers"),
    },
    "dense": {
        "enabled": (bool, False, None, ""),
        "radius2": (int, 4, lambda v: v >= 1, "must be >= 1"),
    },
    "output": {
        "directory": (str, "out", None, ""),
    },
}


def _type_name(t) -> str:
    if isinstance(t, tuple):
        return " or ".join(x.__name__ if x is not type(None) else "null" for x in t)
    return t.__name__


def _lines(text: str) -> dict:
    """Map key paths to 1-based source lines."""
    out = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = prefix + (str(k.value),)
                out[key] = k.start_mark.line + 1
                walk(v, key)

    walk(root, ())
    return out


@dataclass
class RunConfig:
    """Validated configuration with every default filled in."""

    data: dict

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def path_indices(self) -> list[int]:
        """Wiener path indices of the ensemble (``indices`` or ``0..n_paths-1``)."""
        ens = self.data["ensemble"]
        if ens["indices"] is not None:
            return list(ens["indices"])
        return list(range(ens["n_paths"]))

    @property
    def n_paths(self) -> int:
        return len(self.path_indices)

    @property
    def norm(self) -> str:
        return "L3" if self.data["run"]["mode"] == "l3" else "H12"

    @property
    def n_steps(self) -> int:
        return int(round(self.data["time"]["T"] / self.data["time"]["dt"]))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def with_overrides(self, **sections) -> "RunConfig":
        """New config with ``section={key: value}`` updates, re-validated."""
        d = self.to_dict()
        for sec, vals in sections.items():
            d.setdefault(sec, {}).update(vals)
        return validate(d)


def validate(raw, source: str = "<config>", lines: dict | None = None) -> RunConfig:
    """Check ``raw`` against the schema and fill defaults.

    Raises:
        ConfigError: listing every problem as ``source:line: key.path: message``.
    """
    lines = lines or {}
    errors = []

    def where(path):
        line = lines.get(path)
        loc = f"{source}:{line}" if line else source
        return f"{loc}: {'.'.join(path)}"

    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"{source}: top level must be a mapping"])
    out = {}
    for sec in raw:
        if sec not in SCHEMA:
            errors.append(f"{where((str(sec),))}: unknown section (known: {', '.join(SCHEMA)})")
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        if given is None:
            given = {}
        if not isinstance(given, dict):
            errors.append(f"{where((sec,))}: section must be a mapping")
            continue
        for key in given:
            if key not in keys:
                errors.append(f"{where((sec, str(key)))}: unknown key (known: {', '.join(keys)})")
        sec_out = {}
        for key, (typ, default, check, msg) in keys.items():
            if key not in given:
                sec_out[key] = default
                continue
            val = given[key]
            # bools are ints in Python; keep them apart
            bad_type = isinstance(val, bool) and typ is not bool or not isinstance(val, typ)
            if bad_type:
                errors.append(f"{where((sec, key))}: expected {_type_name(typ)}, got {val!r}")
                continue
            if typ == _NUM and isinstance(val, int):
                val = float(val)
            if check is not None and not check(val):
                errors.append(f"{where((sec, key))}: {msg}, got {val!r}")
                continue
            sec_out[key] = val
        out[sec] = sec_out
    if not errors:
        t, dt = out["time"]["T"], out["time"]["dt"]
        n = round(t / dt)
        if abs(n * dt - t) > 1e-9 * t:
            errors.append(f"{where(('time', 'dt'))}: T={t} is not a multiple of dt={dt}")
        if out["initial_data"]["kind"] == "file" and not out["initial_data"]["path"]:
            errors.append(f"{where(('initial_data', 'path'))}: required when kind is 'file'")
    if errors:
        raise ConfigError(errors)
    return RunConfig(out)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    """Parse YAML text (a JSON manifest with a ``config`` key is also accepted)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError([f"{loc}: YAML syntax error: {getattr(exc, 'problem', exc)}"]) from None
    if isinstance(raw, dict) and "config" in raw and "manifest_version" in raw:
        return validate(raw["config"], source)
    return validate(raw, source, _lines(text))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read: {exc.strerror}"]) from None
    return parse_config_text(text, str(path))


def default_config() -> RunConfig:
    return validate({})
