"""Text formats: state files, grid exports, key-value reports and JSON configs.

Every float is written with 17 significant digits, which round-trips IEEE
doubles exactly, so ``parse_state(serialize_state(s))`` reproduces ``s``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .engine import ConstructionState, DomainSpec, EngineConfig, StepRecord
from .grid import GridSpec, parse_box, parse_dims
from .waves import CutoffProfile, WaveSum, WaveTerm

MAGIC = "WILDEULER"
VERSION = 1


class FormatError(ValueError):
    """Malformed state, grid, report or config text."""


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _floats(tokens, what: str) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError as err:
        raise FormatError(f"bad number in {what}: {err}") from None


# ------------------------------------------------------------ state files


def _domain_line(d: DomainSpec) -> str:
    parts = [f"domain {d.shape}", "center=" + ",".join(fmt(c) for c in d.center), f"radius={fmt(d.radius)}"]
    if d.half_widths is not None:
        parts.append("half_widths=" + ",".join(fmt(h) for h in d.half_widths))
    parts.append(f"half_length={fmt(d.half_length)}")
    return " ".join(parts)


def _parse_domain(line: str, n: int) -> DomainSpec:
    tokens = line.split()
    if len(tokens) < 2:
        raise FormatError("domain line needs a shape")
    kv = _key_values(tokens[2:], "domain")
    try:
        hw = kv.get("half_widths")
        return DomainSpec(
            shape=tokens[1],
            n=n,
            center=np.array(_floats(kv["center"].split(","), "domain center")),
            radius=float(kv.get("radius", 1.0)),
            half_widths=None if hw is None else np.array(_floats(hw.split(","), "domain half widths")),
            half_length=float(kv.get("half_length", 1.0)),
        )
    except KeyError as err:
        raise FormatError(f"domain line misses {err}") from None
    except ValueError as err:
        raise FormatError(f"invalid domain: {err}") from None


def _key_values(tokens, what: str) -> dict[str, str]:
    out = {}
    for t in tokens:
        if "=" not in t:
            raise FormatError(f"expected key=value in {what}, got {t!r}")
        k, v = t.split("=", 1)
        out[k] = v
    return out


def _term_line(gen: int, t: WaveTerm) -> str:
    vals = [*t.center, t.scale, t.N, *t.ubar.ravel(), *t.A.ravel(), t.cutoff.inner, t.cutoff.outer]
    return " ".join([str(gen)] + [fmt(x) for x in vals])


def _parse_term(tokens: list[str], m: int) -> tuple[int, WaveTerm]:
    want = 1 + m + 2 + 2 * m * m + 2
    if len(tokens) != want:
        raise FormatError(f"term line has {len(tokens)} fields, expected {want}")
    try:
        gen = int(tokens[0])
    except ValueError:
        raise FormatError(f"bad generation index {tokens[0]!r}") from None
    if gen < 0:
        raise FormatError("generation index must be non-negative")
    x = np.array(_floats(tokens[1:], "term"))
    center, x = x[:m], x[m:]
    scale, N, x = x[0], x[1], x[2:]
    ubar, x = x[: m * m].reshape(m, m), x[m * m :]
    A, x = x[: m * m].reshape(m, m), x[m * m :]
    term = WaveTerm(ubar=ubar, N=N, A=A, center=center, scale=scale, cutoff=CutoffProfile(x[0], x[1]))
    return gen, term


_RECORD_FIELDS = [f.name for f in fields(StepRecord)]


def _record_line(r: StepRecord) -> str:
    return "record " + " ".join(f"{k}={fmt(getattr(r, k))}" for k in _RECORD_FIELDS)


def _parse_record(tokens: list[str]) -> StepRecord:
    kv = _key_values(tokens[1:], "record")
    if set(kv) != set(_RECORD_FIELDS):
        raise FormatError(f"record fields {sorted(kv)} do not match {_RECORD_FIELDS}")
    ints = {"balls", "samples_certified"}
    try:
        return StepRecord(**{k: int(v) if k in ints else float(v) for k, v in kv.items()})
    except ValueError as err:
        raise FormatError(f"bad record value: {err}") from None


def serialize_state(state: ConstructionState) -> str:
    """Line-oriented text: header, domain, one line per term, one line per step record."""
    lines = [f"{MAGIC} {VERSION} n={state.n}", _domain_line(state.domain)]
    for g, gen in enumerate(state.generations):
        lines.extend(_term_line(g, t) for t in gen.terms)
    lines.extend(_record_line(r) for r in state.certified)
    return "\n".join(lines) + "\n"


def parse_state(text: str) -> ConstructionState:
    from .algebra import StateError

    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FormatError("empty state file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != MAGIC or head[1] != str(VERSION) or not head[2].startswith("n="):
        raise FormatError(f"bad header {lines[0]!r}")
    try:
        n = int(head[2][2:])
    except ValueError:
        raise FormatError(f"bad header {lines[0]!r}") from None
    if n < 2:
        raise FormatError("n must be at least 2")
    m = n + 1
    if len(lines) < 2 or not lines[1].startswith("domain"):
        raise FormatError("second line must describe the domain")
    domain = _parse_domain(lines[1], n)
    gens: dict[int, list[WaveTerm]] = {}
    records = []
    try:
        for ln in lines[2:]:
            tokens = ln.split()
            if tokens[0] == "record":
                records.append(_parse_record(tokens))
                continue
            g, t = _parse_term(tokens, m)
            gens.setdefault(g, []).append(t)
    except StateError as err:
        raise FormatError(f"invalid wave term: {err}") from None
    count = max(gens) + 1 if gens else 0
    generations = tuple(WaveSum(tuple(gens.get(g, ())), m) for g in range(count))
    return ConstructionState(domain, generations, tuple(records))


def write_state(path, state: ConstructionState) -> None:
    Path(path).write_text(serialize_state(state))


def read_state(path) -> ConstructionState:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise FormatError(f"cannot read state file: {err}") from None
    return parse_state(text)


def states_equal(a: ConstructionState, b: ConstructionState) -> bool:
    """Field-by-field equality (exact floats)."""
    if _domain_line(a.domain) != _domain_line(b.domain) or a.certified != b.certified:
        return False
    if len(a.generations) != len(b.generations):
        return False
    for ga, gb in zip(a.generations, b.generations):
        if len(ga.terms) != len(gb.terms):
            return False
        for s, t in zip(ga.terms, gb.terms):
            same = (
                np.array_equal(s.ubar, t.ubar)
                and np.array_equal(s.A, t.A)
                and np.array_equal(s.center, t.center)
                and s.N == t.N
                and s.scale == t.scale
                and s.cutoff == t.cutoff
            )
            if not same:
                return False
    return True


# ------------------------------------------------------------ grid exports


def grid_header(n: int, grid: GridSpec, name: str) -> str:
    return (
        f"# n={n} dims={','.join(str(s) for s in grid.shape)} origin={','.join(fmt(x) for x in grid.lo)} "
        f"h={','.join(fmt(x) for x in grid.h)} field={name}"
    )


def format_grid_field(n: int, grid: GridSpec, values: np.ndarray, name: str) -> str:
    """Header then one comma-separated line per node: coordinates, then components."""
    pts = grid.points()
    vals = np.asarray(values, dtype=float).reshape(len(pts), -1)
    body = np.hstack([pts, vals])
    lines = [grid_header(n, grid, name)]
    lines.extend(",".join(fmt(x) for x in row) for row in body)
    return "\n".join(lines) + "\n"


def parse_grid_field(text: str) -> tuple[dict, np.ndarray, np.ndarray]:
    """Header fields, node coordinates and component values."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FormatError("grid file must start with a '#' header")
    head = _key_values(lines[0][1:].split(), "grid header")
    for key in ("n", "dims", "origin", "h", "field"):
        if key not in head:
            raise FormatError(f"grid header misses {key}")
    meta = {
        "n": int(head["n"]),
        "dims": tuple(int(s) for s in head["dims"].split(",")),
        "origin": np.array(_floats(head["origin"].split(","), "origin")),
        "h": np.array(_floats(head["h"].split(","), "h")),
        "field": head["field"],
    }
    rows = np.array([_floats(ln.split(","), "grid row") for ln in lines[1:] if ln.strip()])
    d = len(meta["dims"])
    if rows.shape[0] != math.prod(meta["dims"]):
        raise FormatError("node count does not match dims")
    return meta, rows[:, :d], rows[:, d:]


# ------------------------------------------------------------ reports


def format_report(values: dict) -> str:
    """``key = value`` lines in insertion order."""
    out = []
    for k, v in values.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            v = ",".join(fmt(x) for x in v)
        elif not isinstance(v, str):
            v = fmt(v)
        out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for ln in text.splitlines():
        if not ln.strip() or ln.startswith("#"):
            continue
        if " = " not in ln:
            raise FormatError(f"report line without ' = ': {ln!r}")
        k, v = ln.split(" = ", 1)
        out[k.strip()] = v.strip()
    return out


# ------------------------------------------------------------ configs


class ConfigError(ValueError):
    """Invalid run configuration."""


_ENGINE_KEYS = {f.name for f in fields(EngineConfig)} - {"grid_points"}


@dataclass(frozen=True)
class RunConfig:
    """Everything a ``construct`` run needs: domain, engine knobs, grids and outputs."""

    domain: DomainSpec
    engine: EngineConfig
    mollifier_points: int = 64
    grid_dims: tuple[int, ...] | None = None
    grid_box: tuple[np.ndarray, np.ndarray] | None = None
    state_file: str = "state.txt"
    report_prefix: str = "report"
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def seed(self) -> int:
        return self.engine.seed

    def diagnostic_grid(self) -> GridSpec | None:
        if self.grid_dims is None:
            return None
        if self.grid_box is not None:
            lo, hi = self.grid_box
        else:
            lo, hi = self.domain.bounding_box()
            pad = 0.25 * (hi - lo)
            lo, hi = lo - pad, hi + pad
        return GridSpec.from_box(lo, hi, self.grid_dims)


def _positive(name: str, values) -> None:
    for v in np.atleast_1d(values):
        if not (math.isfinite(float(v)) and float(v) > 0):
            raise ConfigError(f"{name} must be positive and finite")


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    try:
        n = int(raw.pop("n"))
        dom = dict(raw.pop("domain"))
    except KeyError as err:
        raise ConfigError(f"config misses {err}") from None
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad n or domain: {err}") from None
    if n not in (2, 3):
        raise ConfigError("n must be 2 or 3")
    try:
        domain = DomainSpec(
            shape=dom.pop("shape"),
            n=n,
            center=np.asarray(dom.pop("center", np.zeros(n + 1)), dtype=float),
            radius=float(dom.pop("radius", 1.0)),
            half_widths=None if "half_widths" not in dom else np.asarray(dom.pop("half_widths"), dtype=float),
            half_length=float(dom.pop("half_length", 1.0)),
        )
    except KeyError as err:
        raise ConfigError(f"domain misses {err}") from None
    except ValueError as err:
        raise ConfigError(f"invalid domain: {err}") from None
    if dom:
        raise ConfigError(f"unknown domain keys {sorted(dom)}")

    mollifier_points = int(raw.pop("mollifier_points", 64))
    grid = dict(raw.pop("grid", {}))
    output = dict(raw.pop("output", {}))
    eng = {}
    for key in list(raw):
        if key in _ENGINE_KEYS:
            eng[key] = raw.pop(key)
    if raw:
        raise ConfigError(f"unknown config keys {sorted(raw)}")
    for key in ("r_max", "amplitudes"):
        if key in eng:
            eng[key] = tuple(float(x) for x in np.atleast_1d(eng[key]))
    try:
        engine = EngineConfig(grid_points=mollifier_points, **eng)
    except TypeError as err:
        raise ConfigError(str(err)) from None
    if engine.iterations < 0:
        raise ConfigError("iterations must be non-negative")
    _positive("r_max", engine.r_max)
    _positive("amplitudes", engine.amplitudes)
    _positive("frequency", [engine.frequency, engine.frequency_cap])
    if engine.seed < 0:
        raise ConfigError("seed must be non-negative")

    dims = box = None
    try:
        if "dims" in grid:
            dims = parse_dims(str(grid.pop("dims")))
        if "box" in grid:
            box = parse_box(str(grid.pop("box")))
    except ValueError as err:
        raise ConfigError(f"bad grid: {err}") from None
    if grid:
        raise ConfigError(f"unknown grid keys {sorted(grid)}")
    if dims is not None and len(dims) != n + 1:
        raise ConfigError(f"grid needs {n + 1} axes")
    state_file = str(output.pop("state", "state.txt"))
    report_prefix = str(output.pop("reports", "report"))
    if output:
        raise ConfigError(f"unknown output keys {sorted(output)}")
    return RunConfig(domain, engine, mollifier_points, dims, box, state_file, report_prefix)


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    return config_from_dict(raw)
