"""Regular-grid count series: loading, validation, splitting and persistence."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SeriesError(ValueError):
    """Raised when a count series fails validation."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


class GapError(SeriesError):
    """Raised when time indices are not consecutive."""


@dataclass(frozen=True)
class CountSeries:
    """Nonnegative integer counts ``N(1..T)`` on a regular grid.

    ``origin_index`` is the integer time label of the first bin. The counts
    array is made read-only on construction.
    """

    counts: np.ndarray
    step_label: str = "step"
    origin_index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if arr.ndim != 1:
            raise SeriesError("counts must be one-dimensional")
        if arr.size == 0:
            raise SeriesError("series is empty")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)):
                raise SeriesError("counts contain missing or non-finite values")
            if np.any(arr != np.round(arr)):
                raise SeriesError("counts must be integers")
        elif arr.dtype.kind not in "iub":
            raise SeriesError(f"unsupported count dtype {arr.dtype}")
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            bad = int(np.flatnonzero(arr < 0)[0])
            raise SeriesError("counts must be nonnegative", row=bad + 1)
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    @property
    def T(self) -> int:
        return len(self)

    @property
    def index(self) -> np.ndarray:
        return self.origin_index + np.arange(len(self))

    def as_float(self) -> np.ndarray:
        return self.counts.astype(np.float64)


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous train/validation/test prefixes, as 1-based inclusive ends.

    Train covers bins ``1..train_end``, validation ``train_end+1..valid_end``
    and test ``valid_end+1..test_end``.
    """

    train_end: int
    valid_end: int
    test_end: int

    def validate(self, T: int | None = None) -> None:
        if not (1 <= self.train_end < self.valid_end <= self.test_end):
            raise SeriesError(
                f"invalid split {self.train_end},{self.valid_end},{self.test_end}: "
                "need 1 <= train_end < valid_end <= test_end"
            )
        if T is not None and self.test_end > T:
            raise SeriesError(f"split end {self.test_end} exceeds series length {T}")

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise SeriesError("split must be 'train_end,valid_end,test_end'")
        spec = cls(*(int(p) for p in parts))
        spec.validate()
        return spec


@dataclass(frozen=True)
class SeriesView:
    """A contiguous window ``[start, stop)`` (0-based) of a parent series.

    The parent is kept so predictions inside the window can use every
    earlier bin as history.
    """

    parent: CountSeries
    start: int
    stop: int
    name: str = ""

    def __len__(self) -> int:
        return self.stop - self.start

    @property
    def counts(self) -> np.ndarray:
        return self.parent.counts[self.start : self.stop]

    @property
    def history(self) -> np.ndarray:
        """All counts up to the end of this window."""
        return self.parent.counts[: self.stop]

    def to_series(self) -> CountSeries:
        return CountSeries(
            np.array(self.counts),
            self.parent.step_label,
            self.parent.origin_index + self.start,
        )


def split_series(s: CountSeries, spec: SplitSpec) -> tuple[SeriesView, SeriesView, SeriesView]:
    spec.validate(len(s))
    return (
        SeriesView(s, 0, spec.train_end, "train"),
        SeriesView(s, spec.train_end, spec.valid_end, "valid"),
        SeriesView(s, spec.valid_end, spec.test_end, "test"),
    )


def _parse_count(text: str, row: int) -> int:
    text = text.strip()
    if text == "":
        raise SeriesError("missing count", row=row)
    try:
        value = int(text)
    except ValueError:
        try:
            f = float(text)
        except ValueError:
            raise SeriesError(f"count {text!r} is not a number", row=row) from None
        if not math.isfinite(f) or f != int(f):
            raise SeriesError(f"count {text!r} is not an integer", row=row) from None
        value = int(f)
    if value < 0:
        raise SeriesError(f"negative count {value}", row=row)
    return value


def parse_counts(text: str, step_label: str = "step") -> CountSeries:
    """Parse CSV text with columns ``(t, count)`` or ``(count)``; header optional."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise SeriesError("no data rows")
    first = rows[0]
    header = False
    try:
        [float(c) for c in first]
    except ValueError:
        header = True
    data = rows[1:] if header else rows
    if not data:
        raise SeriesError("no data rows")
    width = len(data[0])
    if width not in (1, 2):
        raise SeriesError(f"expected 1 or 2 columns, got {width}")
    counts = []
    indices = []
    for i, r in enumerate(data, start=1):
        if len(r) != width:
            raise SeriesError(f"expected {width} columns, got {len(r)}", row=i)
        if width == 2:
            try:
                indices.append(int(r[0].strip()))
            except ValueError:
                raise SeriesError(f"index {r[0]!r} is not an integer", row=i) from None
        counts.append(_parse_count(r[-1], i))
    origin = 0
    if indices:
        idx = np.asarray(indices)
        steps = np.diff(idx)
        if np.any(steps != 1):
            bad = int(np.flatnonzero(steps != 1)[0]) + 2
            raise GapError(f"non-consecutive index {idx[bad - 1]} after {idx[bad - 2]}", row=bad)
        origin = int(idx[0])
    return CountSeries(np.asarray(counts, dtype=np.int64), step_label, origin)


def load_counts(path, format: str = "csv", step_label: str = "step") -> CountSeries:
    if format != "csv":
        raise SeriesError(f"unsupported format {format!r}; only csv is read")
    text = Path(path).read_text(encoding="utf-8")
    return parse_counts(text, step_label)


def save_counts(s: CountSeries, path) -> None:
    lines = ["t,count"]
    lines.extend(f"{t},{n}" for t, n in zip(s.index.tolist(), s.counts.tolist()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n", encoding="utf-8")


def write_columns(path, columns: dict) -> None:
    """Write equal-length numeric columns as a plain CSV with a header row."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    out = [",".join(names)]
    for i in range(n):
        out.append(",".join(_fmt(c[i]) for c in cols))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def _fmt(x) -> str:
    if isinstance(x, (np.integer, int)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass
class Artifacts:
    """Helper bundling an output directory."""

    root: Path
    written: list = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.root / name
        self.written.append(name)
        return p
