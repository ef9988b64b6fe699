"""Run configuration: flat ``section.key = value`` text with ``#`` comments.

Arrays are comma lists.  ``system.beta`` holds ``N`` comma-separated rows of
whitespace-separated numbers; its diagonal must be ``0`` or equal to ``mu``
(``mu`` is the diagonal of the coupling either way).  ``system.lambda`` and
``system.mu`` accept a single value, which is repeated ``N`` times.  Unknown
keys are rejected with their line number.

A run manifest (JSON, as written by ``solve``) is accepted wherever a config
is: its ``config`` object is read back through the same parser.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowPolicy
from .grid import Grid, RadialDomain, build_grid
from .search import SearchSettings
from .system import BlockStructure, SystemParams


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; carries the line and key when known."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line, self.key = line, key


def _int(v):
    f = float(v)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got {v!r}")
    return int(f)


def _float_list(v):
    return [float(x) for x in v.split(",") if x.strip()]


def _int_list(v):
    return [_int(x) for x in v.split(",") if x.strip()]


def _rows(v):
    return [[float(x) for x in row.split()] for row in v.split(",") if row.strip()]


def _opt_float(v):
    return None if v.strip().lower() in ("", "auto", "none") else float(v)


def _opt_int(v):
    return None if v.strip().lower() in ("", "auto", "none") else _int(v)


def _family(v):
    v = v.strip()
    if v not in ("psi", "interleaved", "mixed"):
        raise ValueError("expected psi, interleaved or mixed")
    return v


KEYS = {
    "domain.dim": _int, "domain.r_inner": float, "domain.r_outer": float,
    "domain.grid_points": _int,
    "system.N": _int, "system.lambda": _float_list, "system.mu": _float_list,
    "system.beta": _rows,
    "blocks.p": _int, "blocks.prescription": _int_list,
    "flow.dt0": float, "flow.dt_min": float, "flow.dt_max": float, "flow.t_max": float,
    "flow.blow_threshold": float, "flow.zero_threshold": float, "flow.stat_tol": float,
    "flow.sample_every": _int,
    "search.K": _int, "search.count_target": _int, "search.budget": _int,
    "search.epsilon": float, "search.eps_node": _opt_float, "search.tol_distinct": float,
    "search.rng_seed": _int, "search.seed_family": _family, "search.workers": _opt_int,
    "output.dir": str,
}

REQUIRED = ("domain.dim", "domain.r_outer", "domain.grid_points", "system.N",
            "system.lambda", "system.mu", "blocks.p", "blocks.prescription")

DEFAULTS = {"domain.r_inner": 0.0, "search.K": 1, "search.count_target": 1,
            "search.budget": 20, "search.epsilon": 0.1, "search.eps_node": None,
            "search.tol_distinct": 1e-3, "search.rng_seed": 0, "search.seed_family": "mixed",
            "search.workers": None, "output.dir": "out"}


@dataclass
class RunConfig:
    values: dict
    source_lines: dict = field(default_factory=dict)   # key -> line number

    # -- derived objects -----------------------------------------------------
    @property
    def domain(self) -> RadialDomain:
        v = self.values
        return RadialDomain(v["domain.dim"], v["domain.r_inner"], v["domain.r_outer"],
                            v["domain.grid_points"])

    def grid(self) -> Grid:
        return build_grid(self.domain)

    @property
    def params(self) -> SystemParams:
        v = self.values
        n = v["system.N"]
        lam = np.array(v["system.lambda"], dtype=float)
        mu = np.array(v["system.mu"], dtype=float)
        B = np.array(v["system.beta"], dtype=float) if "system.beta" in v else np.zeros((n, n))
        B = B.copy()
        np.fill_diagonal(B, mu)
        return SystemParams(lam, B)

    @property
    def blocks(self) -> BlockStructure:
        return BlockStructure(self.values["blocks.p"], tuple(self.values["blocks.prescription"]))

    def policy(self, grid: Grid | None = None) -> FlowPolicy:
        grid = grid or self.grid()
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("flow.")}
        if "dt0" in kw and "dt_max" not in kw:
            kw["dt_max"] = max(1e-2, kw["dt0"])
        if "dt0" in kw and "dt_min" not in kw:
            kw["dt_min"] = min(1e-9, kw["dt0"])
        return FlowPolicy.default_for(grid, **kw)

    def settings(self) -> SearchSettings:
        v = self.values
        return SearchSettings(epsilon=v["search.epsilon"], eps_node=v["search.eps_node"],
                              tol_distinct=v["search.tol_distinct"],
                              seed_family=v["search.seed_family"])

    def get(self, key):
        return self.values[key]

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}

    def to_text(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if v is None:
                txt = "auto"
            elif k == "system.beta":
                txt = ", ".join(" ".join(repr(float(x)) for x in row) for row in v)
            elif isinstance(v, list):
                txt = ", ".join(repr(x) for x in v)
            else:
                txt = repr(v) if isinstance(v, float) else str(v)
            lines.append(f"{k} = {txt}")
        return "\n".join(lines) + "\n"


def _check(cfg: RunConfig) -> None:
    v, at = cfg.values, cfg.source_lines
    for key in REQUIRED:
        if key not in v:
            raise ConfigError("required key missing", key=key)
    n = v["system.N"]
    if n < 1:
        raise ConfigError("N must be >= 1", at.get("system.N"), "system.N")
    for key in ("system.lambda", "system.mu"):
        if len(v[key]) == 1:
            v[key] = v[key] * n
        if len(v[key]) != n:
            raise ConfigError(f"expected {n} values, got {len(v[key])}", at.get(key), key)
    if "system.beta" in v:
        B = v["system.beta"]
        if len(B) != n or any(len(row) != n for row in B):
            lens = [len(row) for row in B]
            raise ConfigError(f"beta must be {n} rows of {n} numbers, got row lengths {lens}",
                              at.get("system.beta"), "system.beta")
        for j in range(n):
            if B[j][j] not in (0.0, v["system.mu"][j]):
                raise ConfigError(f"beta diagonal entry {j + 1} must be 0 or mu_{j + 1}",
                                  at.get("system.beta"), "system.beta")
    elif n > 1:
        raise ConfigError("system.beta is required when N > 1", key="system.beta")
    try:
        cfg.domain
        params = cfg.params
        blocks = cfg.blocks
        blocks.check(params.n_comp)
        cfg.policy()
        cfg.settings()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key in ("search.K", "search.count_target", "search.budget"):
        if v[key] < (1 if key == "search.K" else 0):
            raise ConfigError("out of range", at.get(key), key)
    if v["search.workers"] is not None and v["search.workers"] < 1:
        raise ConfigError("must be >= 1", at.get("search.workers"), "search.workers")


def parse_text(text: str) -> RunConfig:
    values, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", no)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError("unknown key", no, key)
        if key in values:
            raise ConfigError("duplicate key", no, key)
        try:
            values[key] = KEYS[key](val)
        except ValueError as exc:
            raise ConfigError(str(exc), no, key) from None
        lines[key] = no
    for k, d in DEFAULTS.items():
        values.setdefault(k, d)
    cfg = RunConfig(values, lines)
    _check(cfg)
    return cfg


def parse_dict(d: dict) -> RunConfig:
    """Rebuild from :meth:`RunConfig.to_dict` (the manifest form)."""
    unknown = sorted(set(d) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}")
    values = dict(DEFAULTS)
    values.update(d)
    cfg = RunConfig(values)
    _check(cfg)
    return cfg


def load(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest is not valid JSON: {exc}", exc.lineno) from None
        return parse_dict(data.get("config", data))
    return parse_text(text)
