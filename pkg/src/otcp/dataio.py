"""CSV contracts for calibration, test, and query files.

Regression columns: x_1..x_p, fhat_1..fhat_d, y_1..y_d. Classification
columns: x_1..x_p, pi_1..pi_K, label (labels are 1-based). Header row is
mandatory; floats are written in shortest round-trip form so identical
runs produce byte-identical files.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import MalformedData


def _group_columns(header: list[str]) -> dict[str, list[int]]:
    """Map column prefixes to positions, validating contiguous 1..m
    numbering per prefix."""
    groups: dict[str, list[tuple[int, int]]] = {}
    for pos, name in enumerate(header):
        name = name.strip()
        if name == "label":
            groups.setdefault("label", []).append((1, pos))
            continue
        if "_" not in name:
            raise MalformedData(f"unexpected column {name!r}")
        prefix, _, suffix = name.rpartition("_")
        if not suffix.isdigit():
            raise MalformedData(f"unexpected column {name!r}")
        groups.setdefault(prefix, []).append((int(suffix), pos))
    out = {}
    for prefix, entries in groups.items():
        entries.sort()
        if prefix != "label":
            numbers = [e[0] for e in entries]
            if numbers != list(range(1, len(numbers) + 1)):
                raise MalformedData(f"columns {prefix}_* must be numbered 1..{len(numbers)}")
        out[prefix] = [e[1] for e in entries]
    return out


@dataclass(frozen=True)
class Table:
    """Parsed CSV with named column groups."""

    groups: dict
    n_rows: int

    def has(self, prefix: str) -> bool:
        return prefix in self.groups

    def array(self, prefix: str) -> np.ndarray:
        return self.groups[prefix]


def read_table(path: str) -> Table:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise MalformedData(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise MalformedData(f"cannot read {path}: {exc}") from exc
    positions = _group_columns(header)
    if not rows:
        raise MalformedData(f"{path}: no data rows")
    width = len(header)
    data = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MalformedData(f"{path}: row {r + 2} has {len(row)} fields, expected {width}")
        try:
            data[r] = [float(v) for v in row]
        except ValueError as exc:
            raise MalformedData(f"{path}: row {r + 2}: {exc}") from exc
    groups = {}
    for prefix, cols in positions.items():
        block = data[:, cols]
        if prefix == "label":
            labels = block[:, 0]
            as_int = labels.astype(np.int64)
            if np.any(as_int != labels):
                raise MalformedData(f"{path}: labels must be integers")
            groups[prefix] = as_int
        else:
            groups[prefix] = block
    return Table(groups=groups, n_rows=len(rows))


def _fmt(value) -> str:
    return repr(float(value))


def write_csv(path: str, header: list[str], columns: list[np.ndarray]) -> None:
    """Atomic CSV write; numeric cells use shortest round-trip form."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    n = len(columns[0])
    for r in range(n):
        row = []
        for col in columns:
            v = col[r]
            if isinstance(v, (str, np.str_)):
                row.append(str(v))
            elif isinstance(v, (int, np.integer)):
                row.append(str(int(v)))
            else:
                row.append(_fmt(v))
        writer.writerow(row)
    from .artifact import atomic_write_text

    atomic_write_text(path, buf.getvalue())


def regression_header(p: int, d: int) -> list[str]:
    return (
        [f"x_{i}" for i in range(1, p + 1)]
        + [f"fhat_{i}" for i in range(1, d + 1)]
        + [f"y_{i}" for i in range(1, d + 1)]
    )


def classification_header(p: int, k: int) -> list[str]:
    return [f"x_{i}" for i in range(1, p + 1)] + [f"pi_{i}" for i in range(1, k + 1)] + ["label"]


def write_regression(path: str, x, fhat, y) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cols = [x[:, i] for i in range(x.shape[1])]
    cols += [fhat[:, i] for i in range(fhat.shape[1])]
    cols += [y[:, i] for i in range(y.shape[1])]
    write_csv(path, regression_header(x.shape[1], fhat.shape[1]), cols)


def write_classification(path: str, x, probs, labels) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cols = [x[:, i] for i in range(x.shape[1])]
    cols += [probs[:, i] for i in range(probs.shape[1])]
    cols += [np.asarray(labels, dtype=np.int64)]
    write_csv(path, classification_header(x.shape[1], probs.shape[1]), cols)


def detect_task(table: Table) -> str:
    """'classification' when pi_* columns exist, else 'regression'."""
    if table.has("pi"):
        return "classification"
    if table.has("fhat") and table.has("y"):
        return "regression"
    raise MalformedData("need either pi_*/label or fhat_*/y_* columns")


def require(table: Table, prefix: str, path: str = "input") -> np.ndarray:
    if not table.has(prefix):
        raise MalformedData(f"{path}: missing {prefix}_* columns")
    return table.array(prefix)
