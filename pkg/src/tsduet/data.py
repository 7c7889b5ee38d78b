"""CSV ingestion and export.

Formats:
- series, wide layout: one column per channel, one row per time point,
  optional header; a missing-value sentinel maps to observed=False.
- series, long layout: columns (timestamp, channel, value); timestamps keep
  first-appearance order, channels are sorted by name.
- window corpus: one window per row, columns v0..v{S-1} and optionally
  f0..f{F-1} future points, plus optional id/family/fine label columns.
- labeled samples: one sample per row, a label column followed by
  channel-major values c{ci}_t{ti} (channel 0's points first).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .preprocess import Series


@dataclass
class DatasetHandle:
    path: str
    layout: str = "wide"  # "wide" | "long"
    label_column: str | None = None
    missing_sentinel: str | None = None

    def __post_init__(self):
        if self.layout not in ("wide", "long"):
            raise DataError(f"unknown layout {self.layout!r}; expected 'wide' or 'long'")


def _parse_cell(text: str, sentinel: str | None):
    """Returns (value, observed)."""
    t = text.strip()
    if sentinel is not None and t == sentinel:
        return np.nan, False
    try:
        return float(t), True
    except ValueError:
        raise DataError(f"cannot parse {text!r} as a number") from None


def _read_rows(path):
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]


def _looks_numeric(row, sentinel):
    for cell in row:
        t = cell.strip()
        if sentinel is not None and t == sentinel:
            continue
        try:
            float(t)
        except ValueError:
            return False
    return True


def read_series_csv(handle: DatasetHandle) -> Series:
    """Load one multivariate series; see module docstring for layouts."""
    rows = _read_rows(handle.path)
    if not rows:
        raise DataError(f"{handle.path}: empty file")
    if handle.layout == "long":
        return _read_long(rows, handle)
    start = 0
    if not _looks_numeric(rows[0], handle.missing_sentinel):
        start = 1
        if len(rows) == 1:
            raise DataError(f"{handle.path}: header only, no data rows")
    width = len(rows[start])
    values, observed = [], []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise DataError(
                f"{handle.path}:{lineno}: ragged row has {len(row)} cells, expected {width}"
            )
        try:
            parsed = [_parse_cell(c, handle.missing_sentinel) for c in row]
        except DataError as e:
            raise DataError(f"{handle.path}:{lineno}: {e}") from None
        values.append([p[0] for p in parsed])
        observed.append([p[1] for p in parsed])
    obs = np.array(observed, dtype=bool)
    return Series(np.array(values), obs if not obs.all() else None)


def _read_long(rows, handle: DatasetHandle) -> Series:
    start = 0
    if not _looks_numeric([rows[0][2]], handle.missing_sentinel):
        start = 1
    stamps: list[str] = []
    stamp_pos: dict[str, int] = {}
    cells: dict[tuple[int, str], tuple[float, bool]] = {}
    channels = set()
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if len(row) != 3:
            raise DataError(f"{handle.path}:{lineno}: long rows need (timestamp, channel, value)")
        ts, ch, raw = row[0].strip(), row[1].strip(), row[2]
        if ts not in stamp_pos:
            stamp_pos[ts] = len(stamps)
            stamps.append(ts)
        channels.add(ch)
        try:
            cells[(stamp_pos[ts], ch)] = _parse_cell(raw, handle.missing_sentinel)
        except DataError as e:
            raise DataError(f"{handle.path}:{lineno}: {e}") from None
    chans = sorted(channels)
    values = np.full((len(stamps), len(chans)), np.nan)
    observed = np.zeros((len(stamps), len(chans)), dtype=bool)
    for (ti, ch), (v, obs) in cells.items():
        ci = chans.index(ch)
        values[ti, ci] = v
        observed[ti, ci] = obs
    return Series(values, observed if not observed.all() else None)


def read_labeled_series(path, label_column: str = "label", sentinel: str | None = None):
    """Wide series CSV with a per-time-point 0/1 label column.

    Returns (Series, labels bool array). Header is required.
    """
    rows = _read_rows(path)
    if len(rows) < 2:
        raise DataError(f"{path}: need a header and at least one data row")
    header = [c.strip() for c in rows[0]]
    if label_column not in header:
        raise DataError(f"{path}: no {label_column!r} column in header")
    li = header.index(label_column)
    values, observed, labels = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: ragged row")
        try:
            labels.append(bool(int(float(row[li]))))
            parsed = [_parse_cell(c, sentinel) for i, c in enumerate(row) if i != li]
        except (ValueError, DataError):
            raise DataError(f"{path}:{lineno}: non-numeric cell") from None
        values.append([p[0] for p in parsed])
        observed.append([p[1] for p in parsed])
    obs = np.array(observed, dtype=bool)
    series = Series(np.array(values), obs if not obs.all() else None)
    return series, np.array(labels, dtype=bool)


def read_labeled_samples(path, channels: int, label_column: str = "label"):
    """Classification split: label column + channel-major sample values.

    Returns (X of shape (n, S0, C), y int labels).
    """
    rows = _read_rows(path)
    if len(rows) < 2:
        raise DataError(f"{path}: need a header and at least one sample row")
    header = [c.strip() for c in rows[0]]
    if label_column not in header:
        raise DataError(f"{path}: no {label_column!r} column in header")
    li = header.index(label_column)
    n_values = len(header) - 1
    if n_values % channels:
        raise DataError(
            f"{path}: {n_values} value columns not divisible by {channels} channels"
        )
    s0 = n_values // channels
    X, y = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: ragged row")
        try:
            label = int(float(row[li]))
            vals = [float(c) for i, c in enumerate(row) if i != li]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric cell") from None
        X.append(np.array(vals).reshape(channels, s0).T)  # channel-major -> (S0, C)
        y.append(label)
    return np.stack(X), np.array(y, dtype=int)


def write_labeled_samples(path, X, y, label_column: str = "label") -> None:
    X = np.asarray(X, dtype=np.float64)
    n, s0, c = X.shape
    header = [label_column] + [f"c{ci}_t{ti}" for ci in range(c) for ti in range(s0)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for xi, yi in zip(X, y):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi.T.reshape(-1)])


def write_series_csv(path, series: Series, sentinel: str = "NA") -> None:
    """Wide layout with header; unobserved cells become the sentinel."""
    values = series.values
    observed = series.observed
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"ch{c}" for c in range(values.shape[1])])
        for i, row in enumerate(values):
            out = []
            for c, v in enumerate(row):
                if observed is not None and not observed[i, c]:
                    out.append(sentinel)
                else:
                    out.append(repr(float(v)))
            w.writerow(out)


def write_window_corpus(path, windows, families=None, fines=None) -> None:
    """One window per row; (context, future) tuples or plain arrays."""
    rows = []
    for item in windows:
        ctx, fut = item if isinstance(item, tuple) else (item, None)
        ctx = np.asarray(ctx, dtype=np.float64).reshape(-1)
        fut = np.asarray(fut, dtype=np.float64).reshape(-1) if fut is not None else np.array([])
        rows.append((ctx, fut))
    S = rows[0][0].size
    F = rows[0][1].size
    header = []
    if families is not None:
        header += ["family", "fine"]
    header += [f"v{i}" for i in range(S)] + [f"f{i}" for i in range(F)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, (ctx, fut) in enumerate(rows):
            lead = [families[i], fines[i]] if families is not None else []
            w.writerow(lead + [repr(float(v)) for v in ctx] + [repr(float(v)) for v in fut])


def read_window_corpus(path):
    """Inverse of write_window_corpus.

    Returns (windows, families, fines); label lists are None when absent.
    """
    rows = _read_rows(path)
    if len(rows) < 2:
        raise DataError(f"{path}: need a header and at least one window row")
    header = [c.strip() for c in rows[0]]
    has_labels = header[:2] == ["family", "fine"]
    off = 2 if has_labels else 0
    v_cols = [i for i, h in enumerate(header) if h.startswith("v")]
    f_cols = [i for i, h in enumerate(header) if h.startswith("f") and h != "family" and h != "fine"]
    windows, families, fines = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: ragged row")
        try:
            ctx = np.array([float(row[i]) for i in v_cols])
            fut = np.array([float(row[i]) for i in f_cols])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric cell") from None
        windows.append((ctx, fut) if fut.size else ctx)
        if has_labels:
            families.append(row[0])
            fines.append(row[1])
    return windows, (families if has_labels else None), (fines if has_labels else None)
