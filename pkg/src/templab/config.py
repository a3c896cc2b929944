"""Run configurations for the CLI: a flat, typed key/value format.

The format is deliberately small: ``[section]`` headers, ``key = value``
lines, ``#`` comments.  Every key is validated against a typed schema and
unknown sections or keys are hard errors (fail-closed), so a config file is
an exact, reproducible description of an experiment.  Parse errors carry the
offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .models import (Benchmark, Box, CompactSpec, SatMap, SystemModel,
                     builtin_names, builtin_system, system_from_expressions)
from .observer import ObserverConfig, hurwitz_gains
from .template import ControlTemplate, GridParams, normalize_template


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> List[float]:
    return [float(tok) for tok in s.replace(",", " ").split()]


def _parse_ints(s: str) -> List[int]:
    return [int(tok) for tok in s.replace(",", " ").split()]


def _parse_rows(s: str) -> List[List[float]]:
    """Semicolon-separated rows of whitespace-separated floats."""
    return [_parse_floats(row) for row in s.split(";")]


_SCHEMA = {
    "system": {
        "name": str,
        "n": int, "p": int, "m": int,
        # inline expression-tree entries f1..f9 / h1..h9 / lam1..lam9 are
        # validated dynamically in _resolve_system
    },
    "spec": {
        "inner": _parse_rows,
        "outer": _parse_rows,
        "lambda_grid": int,
    },
    "template": {
        "T": float,
        "coeffs": _parse_rows,
        "normalize": _parse_bool,
    },
    "observer": {
        "q": int,
        "theta": float,
        "delta": float,
        "gains": _parse_floats,
        "mu_margin": float,
    },
    "integrator": {
        "step": float,
        "stride": int,
    },
    "run": {
        "x0": _parse_floats,
        "s0": float,
        "mu0": float,
        "z0": _parse_floats,
        "consistent_z": _parse_bool,
        "t_end": float,
        "seed": int,
    },
    "sweep": {
        "theta_list": _parse_floats,
        "delta_list": _parse_floats,
    },
    "certify": {
        "nx": int,
        "nt": int,
        "nmu": int,
        "n_haar": int,
        "mu_extra": _parse_floats,
        "min_margin": float,
    },
    "search": {
        "degree": int,
        "attempts": int,
        "noise_scale": float,
    },
}

_DYNAMIC_KEYS = ("f", "h", "lam")  # f1..fn, h1..hm, lam1..lamp in [system]


def _dynamic_system_key(key: str) -> bool:
    for prefix in _DYNAMIC_KEYS:
        if key.startswith(prefix) and key[len(prefix):].isdigit():
            return True
    return False


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Dict[str, object]]:
    """Parse and type-check config text into {section: {key: typed value}}."""
    sections: Dict[str, Dict[str, object]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SCHEMA:
                raise ConfigError(
                    f"{source}:{lineno}: unknown section [{current}]")
            if current in sections:
                raise ConfigError(
                    f"{source}:{lineno}: duplicate section [{current}]")
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if current is None:
            raise ConfigError(
                f"{source}:{lineno}: key/value line before any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        schema = _SCHEMA[current]
        if key in schema:
            caster = schema[key]
        elif current == "system" and _dynamic_system_key(key):
            caster = str
        else:
            raise ConfigError(
                f"{source}:{lineno}: unknown key {key!r} in section [{current}]")
        if key in sections[current]:
            raise ConfigError(
                f"{source}:{lineno}: duplicate key {key!r} in section [{current}]")
        try:
            sections[current][key] = caster(value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(
                f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return sections


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved experiment description."""

    system: SystemModel
    spec: CompactSpec
    sat: SatMap
    template: ControlTemplate
    observer: ObserverConfig
    step: float
    stride: int
    x0: np.ndarray
    s0: float
    mu0: float
    z0: Optional[np.ndarray]
    consistent_z: bool
    t_end: float
    seed: int
    theta_list: Tuple[float, ...]
    delta_list: Tuple[float, ...]
    grid: GridParams
    search_degree: int
    search_attempts: int
    search_noise: float


def _box_from_rows(rows: List[List[float]], n: int, what: str) -> Box:
    if len(rows) != n or any(len(r) != 2 for r in rows):
        raise ConfigError(
            f"{what} box needs {n} rows of 'lo hi' (semicolon-separated)")
    return Box(np.asarray(rows, dtype=float))


def _resolve_system(sections) -> Tuple[SystemModel, Optional[Benchmark]]:
    sys_sec = dict(sections.get("system", {}))
    name = sys_sec.pop("name", None)
    if name is not None:
        if sys_sec:
            raise ConfigError(
                "[system] name= cannot be combined with inline definitions")
        return builtin_system(name).system, builtin_system(name)
    for key in ("n", "p", "m"):
        if key not in sys_sec:
            raise ConfigError(
                f"[system] needs either name= (one of {builtin_names()}) "
                f"or inline n/p/m with f_i/h_i/lam_i expressions")
    n, p, m = sys_sec.pop("n"), sys_sec.pop("p"), sys_sec.pop("m")
    try:
        f_exprs = [sys_sec.pop(f"f{i+1}") for i in range(n)]
        h_exprs = [sys_sec.pop(f"h{i+1}") for i in range(m)]
        lam_exprs = [sys_sec.pop(f"lam{i+1}") for i in range(p)]
    except KeyError as exc:
        raise ConfigError(f"[system] missing expression {exc.args[0]}") from exc
    if sys_sec:
        raise ConfigError(
            f"[system] extra expressions beyond declared dimensions: "
            f"{sorted(sys_sec)}")
    return system_from_expressions(n, p, m, f_exprs, h_exprs, lam_exprs), None


def resolve_config(sections, seed_override: Optional[int] = None) -> RunConfig:
    """Turn parsed sections into a validated RunConfig.

    Builtin benchmarks supply defaults for every numeric choice; config keys
    override them.  Inline systems must spell out boxes, template, and
    observer settings explicitly.
    """
    system, bench = _resolve_system(sections)
    spec_sec = sections.get("spec", {})
    if "inner" in spec_sec or "outer" in spec_sec:
        if not ("inner" in spec_sec and "outer" in spec_sec):
            raise ConfigError("[spec] inner and outer must be given together")
        inner = _box_from_rows(spec_sec["inner"], system.n, "inner")
        outer = _box_from_rows(spec_sec["outer"], system.n, "outer")
        spec = CompactSpec.build(system, inner, outer,
                                 per_axis=spec_sec.get("lambda_grid", 21))
    elif bench is not None:
        spec = bench.spec
    else:
        raise ConfigError("[spec] inner/outer boxes required for inline systems")
    sat = bench.sat if (bench is not None and spec is bench.spec) \
        else SatMap.for_box(spec.outer)

    tpl_sec = sections.get("template", {})
    if "coeffs" in tpl_sec:
        rows = tpl_sec["coeffs"]
        width = max(len(r) for r in rows)
        coeffs = np.zeros((len(rows), width))
        for i, r in enumerate(rows):
            coeffs[i, :len(r)] = r
        if coeffs.shape[0] != system.p:
            raise ConfigError(
                f"[template] coeffs needs {system.p} rows, got {coeffs.shape[0]}")
        T = tpl_sec.get("T", bench.T if bench is not None else None)
        if T is None:
            raise ConfigError("[template] T required with inline coeffs")
    elif bench is not None:
        coeffs = bench.template_coeffs
        T = tpl_sec.get("T", bench.T)
    else:
        raise ConfigError("[template] coeffs required for inline systems")
    template = ControlTemplate(T=float(T), coeffs=np.asarray(coeffs, dtype=float))
    if tpl_sec.get("normalize", False):
        template = normalize_template(template)

    obs_sec = sections.get("observer", {})
    q = obs_sec.get("q", bench.q if bench is not None else None)
    theta = obs_sec.get("theta", bench.theta if bench is not None else None)
    delta = obs_sec.get("delta", bench.delta if bench is not None else None)
    for val, key in ((q, "q"), (theta, "theta"), (delta, "delta")):
        if val is None:
            raise ConfigError(f"[observer] {key} required for inline systems")
    gains = np.asarray(obs_sec["gains"], dtype=float) if "gains" in obs_sec \
        else hurwitz_gains(q)
    observer = ObserverConfig(q=q, c=gains, theta=float(theta),
                              delta=float(delta),
                              mu_margin=obs_sec.get("mu_margin", 0.1))
    if observer.delta > template.T + 1e-12:
        raise ConfigError(
            f"[observer] delta={observer.delta} exceeds template period "
            f"T={template.T}")
    if system.m * (q + 1) < system.n:
        raise ConfigError(
            f"[observer] m(q+1) = {system.m * (q + 1)} < n = {system.n}: "
            f"the observability stack cannot be injective")

    integ = sections.get("integrator", {})
    step = integ.get("step", 0.01)
    stride = integ.get("stride", 5)

    run = sections.get("run", {})
    x0 = np.asarray(run.get("x0", np.zeros(system.n)), dtype=float)
    if x0.shape != (system.n,):
        raise ConfigError(f"[run] x0 needs {system.n} components")
    z0 = np.asarray(run["z0"], dtype=float) if "z0" in run else None
    seed = run.get("seed", 0)
    if seed_override is not None:
        seed = seed_override

    sweep = sections.get("sweep", {})
    cert = sections.get("certify", {})
    grid = GridParams(nx=cert.get("nx", 5), nt=cert.get("nt", 4),
                      nmu=cert.get("nmu", 8), n_haar=cert.get("n_haar", 4),
                      seed=seed, mu_extra=tuple(cert.get("mu_extra", ())),
                      min_margin=cert.get("min_margin", 1e-9))
    search = sections.get("search", {})
    return RunConfig(
        system=system, spec=spec, sat=sat, template=template,
        observer=observer, step=float(step), stride=int(stride),
        x0=x0, s0=run.get("s0", 0.0), mu0=run.get("mu0", 0.0), z0=z0,
        consistent_z=run.get("consistent_z", False),
        t_end=run.get("t_end", 10.0), seed=int(seed),
        theta_list=tuple(sweep.get("theta_list", (float(theta),))),
        delta_list=tuple(sweep.get("delta_list", (float(delta),))),
        grid=grid,
        search_degree=search.get("degree", 2),
        search_attempts=search.get("attempts", 100),
        search_noise=search.get("noise_scale", 0.5),
    )


def load_config(path: str, seed_override: Optional[int] = None) -> RunConfig:
    with open(path, "r") as fh:
        text = fh.read()
    return resolve_config(parse_config_text(text, source=path),
                          seed_override=seed_override)
