"""Line infrastructure and incidence matrices.

A grid is a set of buses (one or more of them substations) and a set of
candidate lines.  Lines are indexed ``0..Le-1`` and that index is the position
in every line-indicator vector ``b``.  Buses are indexed ``0..N_total-1``; the
*reduced* incidence matrix drops every substation column, so its columns follow
the order of :attr:`GridModel.load_buses`.

Grid file format (UTF-8 CSV with two sections)::

    #buses
    bus_id,is_substation
    sub,1
    n1,0
    #lines
    line_id,from,to,r,x,prior,switchable
    l1,sub,n1,0.01,0.02,,1

``prior`` and ``switchable`` columns are optional; an empty ``prior`` field
means no prior.  Other lines starting with ``#`` are comments.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import GridFormatError

BUS_COLUMNS = ("bus_id", "is_substation")
LINE_COLUMNS_REQUIRED = ("line_id", "from", "to", "r", "x")
LINE_COLUMNS_OPTIONAL = ("prior", "switchable")

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f", ""}


@dataclass(frozen=True)
class Bus:
    id: int
    is_substation: bool
    label: str = ""


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    prior: float | None = None
    switchable: bool = True
    label: str = ""


@dataclass(frozen=True)
class GridModel:
    """Buses plus candidate lines; validated on construction, immutable after."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        _validate(self)

    # -- sizes ---------------------------------------------------------------
    @property
    def n_total(self) -> int:
        return len(self.buses)

    @property
    def N(self) -> int:
        """Number of non-substation buses."""
        return len(self.load_buses)

    @property
    def Le(self) -> int:
        return len(self.lines)

    @cached_property
    def substations(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.is_substation)

    @cached_property
    def load_buses(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if not b.is_substation)

    # -- per-line arrays -----------------------------------------------------
    @cached_property
    def r(self) -> np.ndarray:
        return _frozen(np.array([ln.r for ln in self.lines], dtype=float))

    @cached_property
    def x(self) -> np.ndarray:
        return _frozen(np.array([ln.x for ln in self.lines], dtype=float))

    @cached_property
    def endpoints(self) -> np.ndarray:
        return _frozen(np.array([(ln.from_bus, ln.to_bus) for ln in self.lines], dtype=int).reshape(-1, 2))

    @cached_property
    def priors(self) -> np.ndarray:
        """Per-line prior probabilities, NaN where the file gave none."""
        return _frozen(np.array([np.nan if ln.prior is None else ln.prior for ln in self.lines], dtype=float))

    @cached_property
    def switchable(self) -> np.ndarray:
        return _frozen(np.array([ln.switchable for ln in self.lines], dtype=bool))

    @cached_property
    def bus_labels(self) -> tuple[str, ...]:
        return tuple(b.label or str(b.id) for b in self.buses)

    @cached_property
    def line_labels(self) -> tuple[str, ...]:
        return tuple(ln.label or str(ln.id) for ln in self.lines)

    @cached_property
    def bus_index(self) -> dict[str, int]:
        """Map from file label to contiguous bus id."""
        return {lab: i for i, lab in enumerate(self.bus_labels)}

    @cached_property
    def line_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.line_labels)}

    # -- incidence -----------------------------------------------------------
    @cached_property
    def incidence_full(self) -> np.ndarray:
        A = np.zeros((self.Le, self.n_total))
        rows = np.arange(self.Le)
        A[rows, self.endpoints[:, 0]] = 1.0
        A[rows, self.endpoints[:, 1]] = -1.0
        return _frozen(A)

    @cached_property
    def incidence_reduced(self) -> np.ndarray:
        return _frozen(np.ascontiguousarray(self.incidence_full[:, list(self.load_buses)]))

    def reduced_position(self) -> np.ndarray:
        """Column of each bus in the reduced incidence matrix, -1 for substations."""
        pos = np.full(self.n_total, -1, dtype=int)
        pos[list(self.load_buses)] = np.arange(self.N)
        return pos

    @classmethod
    def from_edges(cls, n_total, edges, r, x, substations=(0,), priors=None, switchable=None, name=""):
        """Build a grid from index-based edge lists (handy for tests and fixtures)."""
        subs = set(substations)
        buses = [Bus(i, i in subs) for i in range(n_total)]
        r = np.broadcast_to(np.asarray(r, dtype=float), (len(edges),))
        x = np.broadcast_to(np.asarray(x, dtype=float), (len(edges),))
        lines = []
        for i, (u, v) in enumerate(edges):
            prior = None if priors is None or priors[i] is None or np.isnan(priors[i]) else float(priors[i])
            sw = True if switchable is None else bool(switchable[i])
            lines.append(Line(i, int(u), int(v), float(r[i]), float(x[i]), prior, sw))
        return cls(tuple(buses), tuple(lines), name=name)


def _frozen(a):
    a.flags.writeable = False
    return a


def _validate(grid: GridModel) -> None:
    ids = [b.id for b in grid.buses]
    if ids != list(range(len(ids))):
        raise GridFormatError("bus ids must be contiguous 0..N_total-1")
    if not any(b.is_substation for b in grid.buses):
        raise GridFormatError("grid has no substation bus")
    if [ln.id for ln in grid.lines] != list(range(len(grid.lines))):
        raise GridFormatError("line ids must be contiguous 0..Le-1")
    n = len(ids)
    for ln in grid.lines:
        name = ln.label or str(ln.id)
        if not (0 <= ln.from_bus < n and 0 <= ln.to_bus < n):
            raise GridFormatError(f"line {name}: unknown bus")
        if ln.from_bus == ln.to_bus:
            raise GridFormatError(f"line {name}: from and to bus coincide")
        if not (ln.r > 0 and ln.x > 0 and np.isfinite(ln.r) and np.isfinite(ln.x)):
            raise GridFormatError(f"line {name}: r and x must be strictly positive")
        if ln.prior is not None and not (0.0 <= ln.prior <= 1.0):
            raise GridFormatError(f"line {name}: prior {ln.prior} outside [0, 1]")
    n_load = sum(not b.is_substation for b in grid.buses)
    if len(grid.lines) < n_load:
        raise GridFormatError(f"only {len(grid.lines)} candidate lines for {n_load} non-substation buses")
    if not support_rank_ok(grid, np.ones(len(grid.lines))):
        raise GridFormatError("candidate lines leave some bus unreachable from every substation")


# -- module-level operations ----------------------------------------------------


def incidence_full(grid: GridModel) -> np.ndarray:
    """Le x N_total branch-bus incidence: +1 at from_bus, -1 at to_bus."""
    return grid.incidence_full


def incidence_reduced(grid: GridModel) -> np.ndarray:
    """Le x N incidence with all substation columns removed."""
    return grid.incidence_reduced


def support_rank_ok(grid: GridModel, b, tol: float = 0.0) -> bool:
    """True iff lines with ``b > tol`` connect every bus to some substation.

    Equivalent to the reduced incidence rows of the support having rank N.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (grid.Le,):
        raise ValueError(f"b has shape {b.shape}, expected ({grid.Le},)")
    ends = grid.endpoints[b > tol]
    subs = np.array(grid.substations)
    # chain substations together so that "reaches a substation" == "same component as substation 0"
    u = np.concatenate([ends[:, 0], subs[:-1]])
    v = np.concatenate([ends[:, 1], subs[1:]])
    adj = coo_matrix((np.ones(len(u)), (u, v)), shape=(grid.n_total, grid.n_total))
    ncomp, labels = connected_components(adj, directed=False)
    return bool(np.all(labels == labels[subs[0]]))


# -- file I/O -------------------------------------------------------------------


def _parse_bool(text, where):
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise GridFormatError(f"{where}: cannot parse boolean {text!r}")


def _parse_float(text, where, what):
    try:
        return float(text)
    except ValueError:
        raise GridFormatError(f"{where}: {what} {text!r} is not a number") from None


def parse_grid(text: str, source: str = "<grid>") -> GridModel:
    """Parse the two-section grid CSV format; errors carry line numbers."""
    sections: dict[str, list[tuple[int, list[str]]]] = {"buses": [], "lines": []}
    current = None
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key = stripped[1:].strip().lower()
            if key in sections:
                current = key
            continue
        if current is None:
            raise GridFormatError(f"{source}:{lineno}: data before '#buses' / '#lines' section")
        row = next(csv.reader([stripped]))
        sections[current].append((lineno, [c.strip() for c in row]))

    for key in sections:
        if not sections[key]:
            raise GridFormatError(f"{source}: missing or empty '#{key}' section")

    def header(key, required, optional=()):
        lineno, cols = sections[key][0]
        unknown = [c for c in cols if c not in required and c not in optional]
        if unknown:
            raise GridFormatError(f"{source}:{lineno}: unknown column(s) {unknown} in #{key}")
        missing = [c for c in required if c not in cols]
        if missing:
            raise GridFormatError(f"{source}:{lineno}: missing column(s) {missing} in #{key}")
        return cols

    bcols = header("buses", BUS_COLUMNS)
    buses = []
    labels: dict[str, int] = {}
    for lineno, row in sections["buses"][1:]:
        where = f"{source}:{lineno}"
        if len(row) != len(bcols):
            raise GridFormatError(f"{where}: expected {len(bcols)} fields, got {len(row)}")
        rec = dict(zip(bcols, row))
        label = rec["bus_id"]
        if label in labels:
            raise GridFormatError(f"{where}: duplicate bus id {label!r}")
        labels[label] = len(buses)
        buses.append(Bus(len(buses), _parse_bool(rec["is_substation"], where), label))

    lcols = header("lines", LINE_COLUMNS_REQUIRED, LINE_COLUMNS_OPTIONAL)
    lines = []
    seen: set[str] = set()
    for lineno, row in sections["lines"][1:]:
        where = f"{source}:{lineno}"
        if len(row) != len(lcols):
            raise GridFormatError(f"{where}: expected {len(lcols)} fields, got {len(row)}")
        rec = dict(zip(lcols, row))
        label = rec["line_id"]
        if label in seen:
            raise GridFormatError(f"{where}: duplicate line id {label!r}")
        seen.add(label)
        ends = []
        for col in ("from", "to"):
            if rec[col] not in labels:
                raise GridFormatError(f"{where}: unknown bus {rec[col]!r}")
            ends.append(labels[rec[col]])
        r = _parse_float(rec["r"], where, "r")
        x = _parse_float(rec["x"], where, "x")
        if not (r > 0 and x > 0):
            raise GridFormatError(f"{where}: r and x must be strictly positive")
        prior = rec.get("prior", "")
        prior = None if prior == "" else _parse_float(prior, where, "prior")
        if prior is not None and not 0.0 <= prior <= 1.0:
            raise GridFormatError(f"{where}: prior {prior} outside [0, 1]")
        sw = _parse_bool(rec["switchable"], where) if "switchable" in rec and rec["switchable"] != "" else True
        lines.append(Line(len(lines), ends[0], ends[1], r, x, prior, sw, label))

    try:
        return GridModel(tuple(buses), tuple(lines), name=Path(source).stem)
    except GridFormatError as exc:
        raise GridFormatError(f"{source}: {exc}") from None


def load_grid(path) -> GridModel:
    path = Path(path)
    return parse_grid(path.read_text(encoding="utf-8"), source=str(path))


def format_grid(grid: GridModel) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    out.write("#buses\n")
    w.writerow(BUS_COLUMNS)
    for b in grid.buses:
        w.writerow([grid.bus_labels[b.id], int(b.is_substation)])
    out.write("#lines\n")
    w.writerow(LINE_COLUMNS_REQUIRED + LINE_COLUMNS_OPTIONAL)
    for ln in grid.lines:
        w.writerow([
            grid.line_labels[ln.id],
            grid.bus_labels[ln.from_bus],
            grid.bus_labels[ln.to_bus],
            repr(ln.r),
            repr(ln.x),
            "" if ln.prior is None else repr(ln.prior),
            int(ln.switchable),
        ])
    return out.getvalue()


def save_grid(grid: GridModel, path) -> None:
    Path(path).write_text(format_grid(grid), encoding="utf-8")


def parse_line_values(text: str, grid: GridModel, column: str, source: str = "<lines>") -> np.ndarray:
    """Per-line values from a ``line_id,<column>`` CSV; lines not listed are NaN."""
    rows = [(i + 1, r) for i, r in enumerate(csv.reader(io.StringIO(text))) if any(c.strip() for c in r)]
    if not rows:
        raise GridFormatError(f"{source}: empty file")
    head = [c.strip() for c in rows[0][1]]
    if head != ["line_id", column]:
        raise GridFormatError(f"{source}:1: expected header 'line_id,{column}', got {','.join(head)!r}")
    out = np.full(grid.Le, np.nan)
    for lineno, r in rows[1:]:
        if len(r) != 2:
            raise GridFormatError(f"{source}:{lineno}: expected 2 fields, got {len(r)}")
        label = r[0].strip()
        if label not in grid.line_index:
            raise GridFormatError(f"{source}:{lineno}: unknown line {label!r}")
        out[grid.line_index[label]] = _parse_float(r[1].strip(), f"{source}:{lineno}", column)
    return out


def load_line_values(path, grid: GridModel, column: str) -> np.ndarray:
    path = Path(path)
    return parse_line_values(path.read_text(encoding="utf-8"), grid, column, source=str(path))


def load_status(path, grid: GridModel) -> np.ndarray:
    """Binary line statuses; every line must be listed with 0 or 1."""
    vals = load_line_values(path, grid, "status")
    if np.any(np.isnan(vals)):
        missing = [grid.line_labels[i] for i in np.flatnonzero(np.isnan(vals))]
        raise GridFormatError(f"{path}: no status for line(s) {missing}")
    if not np.all((vals == 0) | (vals == 1)):
        raise GridFormatError(f"{path}: statuses must be 0 or 1")
    return vals


def format_line_values(grid: GridModel, values, column: str) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["line_id", column])
    for lab, v in zip(grid.line_labels, values):
        w.writerow([lab, int(v) if float(v).is_integer() else repr(float(v))])
    return out.getvalue()
