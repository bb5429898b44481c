"""Plain-text formats used by the command line front end.

Dataset files are wide CSV. The first line is a comment that carries the
grid, the second is the header::

    # grid: 0,0.25,0.5,0.75,1
    id,z,x1,x2,y_1,y_2,y_3,y_4,y_5
    u1,1,1,0.3,2.1,2.0,1.7,1.9,2.2
    u2,0,1,1.4,,,,,

Outcome fields may be empty only on rows with ``z = 0``. Every float written
by this module uses ``format(x, ".17g")``, so values survive a round trip
exactly and output files are byte-stable across platforms.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from fnmiss.bands import Band
from fnmiss.exceptions import SchemaError
from fnmiss.model import Dataset, Grid, MeanEstimate

__all__ = [
    "fmt",
    "read_dataset",
    "write_dataset",
    "write_curve_table",
    "read_curve_table",
    "write_saved_estimate",
    "read_saved_estimate",
    "write_rows",
    "write_json",
    "CURVE_COLUMNS",
]

CURVE_COLUMNS = (
    "t",
    "mu_hat",
    "se",
    "scb_lower",
    "scb_upper",
    "pcb_lower",
    "pcb_upper",
    "u_scb",
    "u_pcb",
)


def fmt(x) -> str:
    """Shortest exact text form used throughout: 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _open_out(path: Path):
    return open(path, "w", encoding="utf-8", newline="")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise SchemaError(f"{where}: non-finite value {text!r}")
    return value


def _read_grid_line(line: str, where: str) -> Grid:
    prefix = "# grid:"
    if not line.startswith(prefix):
        raise SchemaError(f"{where}: expected a '# grid: t1,...,tT' line")
    fields = [f.strip() for f in line[len(prefix):].strip().split(",")]
    if fields == [""]:
        raise SchemaError(f"{where}: grid line lists no points")
    try:
        return Grid(np.array([_float(f, where) for f in fields]))
    except SchemaError:
        raise
    except ValueError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def read_dataset(path) -> Dataset:
    """Read a wide-form dataset file and validate it.

    Raises
    ------
    SchemaError
        The layout is wrong; the message names the offending line.
    ValidationError
        The parsed arrays violate a dataset contract, e.g. too few observed
        units.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        grid = _read_grid_line(first, f"{path}:1")
        T = grid.T
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}:2: missing header row") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "z":
            raise SchemaError(f"{path}:2: header must start with 'id,z'")
        p = len(header) - 2 - T
        expected = ["id", "z"] + [f"x{j}" for j in range(1, p + 1)]
        expected += [f"y_{j}" for j in range(1, T + 1)]
        if p < 1 or header != expected:
            raise SchemaError(
                f"{path}:2: header must be id,z,x1..xp,y_1..y_{T} for a grid of {T} points"
            )

        ids, X, Z, Y = [], [], [], []
        for row in reader:
            lineno = reader.line_num + 1
            where = f"{path}:{lineno}"
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{where}: expected {len(header)} fields, found {len(row)}")
            if row[1] not in ("0", "1"):
                raise SchemaError(f"{where}: z must be 0 or 1, found {row[1]!r}")
            z = int(row[1])
            x = [_float(v, where) for v in row[2 : 2 + p]]
            ytext = row[2 + p :]
            if z == 1:
                if any(v == "" for v in ytext):
                    raise SchemaError(f"{where}: empty outcome on an observed row (z = 1)")
                y = [_float(v, where) for v in ytext]
            else:
                y = [math.nan if v == "" else _float(v, where) for v in ytext]
            ids.append(row[0])
            X.append(x)
            Z.append(z)
            Y.append(y)

    if not ids:
        raise SchemaError(f"{path}: no data rows")
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate unit ids")
    return Dataset.from_arrays(np.array(X), np.array(Z), np.array(Y).reshape(len(ids), T), grid)


def write_dataset(path, ds: Dataset, ids: Optional[Sequence[str]] = None) -> None:
    """Write ``ds`` in the wide layout; outcomes of missing units are left empty."""
    path = Path(path)
    ids = [f"u{i + 1}" for i in range(ds.n)] if ids is None else list(ids)
    with _open_out(path) as fh:
        fh.write("# grid: " + ",".join(fmt(t) for t in ds.grid.points) + "\n")
        w = _writer(fh)
        w.writerow(
            ["id", "z"]
            + [f"x{j}" for j in range(1, ds.p + 1)]
            + [f"y_{j}" for j in range(1, ds.T + 1)]
        )
        for i in range(ds.n):
            z = int(ds.Z[i])
            y = [fmt(v) for v in ds.Y[i]] if z == 1 else [""] * ds.T
            w.writerow([ids[i], str(z)] + [fmt(v) for v in ds.X[i]] + y)


def write_curve_table(path, est: MeanEstimate, scb: Band, pcb: Band) -> None:
    cols = [
        est.grid.points,
        est.mu_hat,
        est.se,
        scb.lower,
        scb.upper,
        pcb.lower,
        pcb.upper,
        scb.u,
        pcb.u,
    ]
    with _open_out(Path(path)) as fh:
        w = _writer(fh)
        w.writerow(CURVE_COLUMNS)
        for row in zip(*cols):
            w.writerow([fmt(v) for v in row])


def read_curve_table(path) -> Dict[str, np.ndarray]:
    """Read a curve table back as a column dictionary."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    data = np.array(rows)
    return {name: data[:, j] for j, name in enumerate(header)}


def write_saved_estimate(path, est: MeanEstimate) -> None:
    """Center curve plus the full covariance, enough to rebuild bands later.

    Layout: ``# method: DR`` and ``# n: 250`` comment lines, then a header
    ``t,mu_hat,c_1..c_T`` with row ``j`` holding ``C_hat[j, :]``.
    """
    T = est.grid.T
    with _open_out(Path(path)) as fh:
        fh.write(f"# method: {est.method}\n# n: {est.n}\n")
        w = _writer(fh)
        w.writerow(["t", "mu_hat"] + [f"c_{j}" for j in range(1, T + 1)])
        for j in range(T):
            w.writerow([fmt(est.grid.points[j]), fmt(est.mu_hat[j])] + [fmt(c) for c in est.C_hat[j]])


def read_saved_estimate(path) -> MeanEstimate:
    path = Path(path)
    meta = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno in (1, 2):
            line = fh.readline().rstrip("\r\n")
            if not line.startswith("# ") or ":" not in line:
                raise SchemaError(f"{path}:{lineno}: expected a '# key: value' line")
            key, value = line[2:].split(":", 1)
            meta[key.strip()] = value.strip()
        if set(meta) != {"method", "n"}:
            raise SchemaError(f"{path}: header comments must give 'method' and 'n'")
        try:
            n = int(meta["n"])
        except ValueError:
            raise SchemaError(f"{path}:2: n must be an integer") from None
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}:3: missing header row") from None
        T = len(header) - 2
        if T < 1 or header != ["t", "mu_hat"] + [f"c_{j}" for j in range(1, T + 1)]:
            raise SchemaError(f"{path}:3: header must be t,mu_hat,c_1..c_T")
        rows = []
        for row in reader:
            where = f"{path}:{reader.line_num + 2}"
            if not row:
                continue
            if len(row) != T + 2:
                raise SchemaError(f"{where}: expected {T + 2} fields, found {len(row)}")
            rows.append([_float(v, where) for v in row])
    if len(rows) != T:
        raise SchemaError(f"{path}: covariance has {T} columns but {len(rows)} rows")
    data = np.array(rows)
    C = data[:, 2:]
    if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise SchemaError(f"{path}: covariance is not symmetric")
    try:
        grid = Grid(data[:, 0])
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return MeanEstimate(method=meta["method"], mu_hat=data[:, 1], C_hat=C, n=n, grid=grid)


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV table, formatting numbers with :func:`fmt`."""
    with _open_out(Path(path)) as fh:
        w = _writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_json(path, obj) -> None:
    with _open_out(Path(path)) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_index_list(text: str) -> List[int]:
    """``"3,5"`` -> ``[3, 5]``; an empty string gives an empty list."""
    text = text.strip()
    return [int(v) for v in text.split(",")] if text else []
