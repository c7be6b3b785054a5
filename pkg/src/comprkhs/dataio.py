"""CSV ingestion and the flat text formats used by the command line tool."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .geometry import ZERO_TOL, SUM_TOL, D_MAX
from .representer import KernelExpansion

__all__ = [
    "IngestError",
    "Dataset",
    "RunConfig",
    "ingest",
    "fmt",
    "format_rows",
    "header_lines",
    "expansion_to_text",
    "expansion_from_text",
    "barycentric_grid",
]

RENORMALIZE_TOL = 1e-2
_MAX_LISTED = 20


class IngestError(ValueError):
    """Unreadable or invalid input file."""


def fmt(x):
    """17 significant digits: enough to round-trip any double."""
    return "%.17g" % x


@dataclass(frozen=True)
class Dataset:
    rows: np.ndarray
    labels: tuple
    source: str
    line_numbers: np.ndarray
    n_adjusted: int = 0
    max_adjustment: float = 0.0
    response: np.ndarray | None = None

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1] - 1


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def ingest(path, renormalize=False, renormalize_counts=False, response=False):
    """Read comma-separated compositions, one per line.

    Blank lines and lines starting with '#' are skipped. A first row with a
    non-numeric field is taken as column labels. With ``response=True`` the
    last column is split off as a real-valued response.

    Row rules: entries below -1e-12 reject the row, entries in [-1e-12, 0)
    are clamped to zero. Rows summing to one within 1e-6 are accepted;
    ``renormalize`` also rescales rows within 1e-2 of one, and
    ``renormalize_counts`` rescales any row with a positive sum. Any rejected
    row makes the whole file fail, with every offending line listed.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc

    labels = ()
    records = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = [t.strip() for t in line.split(",")]
        if not records and not labels and not all(_is_number(t) for t in toks):
            labels = tuple(toks)
            continue
        records.append((lineno, toks))
    if not records:
        raise IngestError(f"{path}: no data rows")

    width = len(labels) if labels else len(records[0][1])
    bad_width = [ln for ln, t in records if len(t) != width]
    if bad_width:
        raise IngestError(f"{path}: expected {width} columns; inconsistent lines {_listing(bad_width)}")
    try:
        values = np.array([[float(t) for t in toks] for _, toks in records], dtype=float)
    except ValueError as exc:
        raise IngestError(f"{path}: non-numeric entry ({exc})") from exc
    line_numbers = np.array([ln for ln, _ in records], dtype=np.int64)

    y = None
    if response:
        if width < 3:
            raise IngestError(f"{path}: need at least two composition columns plus a response")
        y = values[:, -1].copy()
        values = values[:, :-1]
        if not np.all(np.isfinite(y)):
            raise IngestError(f"{path}: non-finite responses on lines {_listing(line_numbers[~np.isfinite(y)])}")
    if values.shape[1] < 2:
        raise IngestError(f"{path}: a composition needs at least two parts")
    if values.shape[1] - 1 > D_MAX:
        raise IngestError(f"{path}: {values.shape[1]} parts exceeds the cap of {D_MAX + 1}")

    finite = np.all(np.isfinite(values), axis=1)
    nonneg = np.all(values >= -ZERO_TOL, axis=1)
    X = np.where(values < 0, 0.0, values)
    s = X.sum(axis=1)
    dev = np.abs(s - 1.0)
    if renormalize_counts:
        ok = finite & nonneg & (s > 0)
    elif renormalize:
        ok = finite & nonneg & (dev <= RENORMALIZE_TOL)
    else:
        ok = finite & nonneg & (dev <= SUM_TOL)
    if not np.all(ok):
        raise IngestError(f"{path}: invalid compositions on lines {_listing(line_numbers[~ok])}")
    adjusted = dev > 0
    X = X / s[:, None]
    return Dataset(
        rows=X,
        labels=labels,
        source=str(path),
        line_numbers=line_numbers,
        n_adjusted=int(adjusted.sum()),
        max_adjustment=float(dev.max()),
        response=y,
    )


def _listing(nums):
    nums = [int(k) for k in nums]
    shown = ", ".join(str(k) for k in nums[:_MAX_LISTED])
    if len(nums) > _MAX_LISTED:
        shown += f" and {len(nums) - _MAX_LISTED} more"
    return shown


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines an output file. Worker count is deliberately absent."""

    command: str
    input: str | None = None
    output: str | None = None
    d: int | None = None
    m: int | None = None
    h: float | None = None
    mu: float | None = None
    n_mc: int | None = None
    n_sim: int | None = None
    seed: int | None = None
    kernel: str | None = None
    renormalize: str = "off"
    extra: tuple = field(default=())

    def items(self):
        for f in fields(self):
            if f.name == "extra":
                continue
            yield f.name, getattr(self, f.name)
        yield from self.extra


def _fmt_value(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return fmt(v)
    return str(v)


def header_lines(config, version):
    out = [f"# comprkhs {version}"]
    out.extend(f"# {k}={_fmt_value(v)}" for k, v in config.items())
    return out


def format_rows(A, sep=","):
    A = np.atleast_2d(A)
    return [sep.join(fmt(x) for x in row) for row in A]


def expansion_to_text(exp, header=()):
    lines = list(header)
    lines += [f"# d={exp.dim}", f"# m={exp.degree}", f"# n={exp.n}"]
    body = np.hstack([exp.centers, exp.coefficients[:, None]]) if exp.n else np.empty((0, exp.dim + 2))
    lines += format_rows(body, sep=" ") if exp.n else []
    return "\n".join(lines) + "\n"


def expansion_from_text(text):
    meta = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            k, sep, v = line[1:].strip().partition("=")
            if sep:
                meta[k.strip()] = v.strip()
            continue
        rows.append([float(t) for t in line.split()])
    try:
        d, m, n = int(meta["d"]), int(meta["m"]), int(meta["n"])
    except KeyError as exc:
        raise ValueError(f"expansion file lacks the {exc.args[0]!r} header") from None
    A = np.array(rows, dtype=float).reshape(-1, d + 2)
    if len(A) != n:
        raise ValueError(f"expansion file declares n={n} but has {len(A)} rows")
    return KernelExpansion(A[:, :-1], A[:, -1], m)


def barycentric_grid(resolution):
    """Lattice points (i, j, k)/R of the 2-simplex, i + j + k = R, i descending."""
    R = int(resolution)
    if R < 1:
        raise ValueError("resolution must be a positive integer")
    pts = [(i, j, R - i - j) for i in range(R, -1, -1) for j in range(R - i, -1, -1)]
    return np.array(pts, dtype=float) / R

