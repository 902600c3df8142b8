"""Ingest, align, smooth, normalise and window minute-resolution series.

The aligned series is held column-wise on a contiguous minute grid
(:class:`AlignedSeries`); windows are index views into it
(:class:`WindowedDataset`) so nine months of data never get copied 720 times.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
DAY_SECONDS = 86400

WEATHER_REQUIRED = ("timestamp_utc", "temperature_c", "solar_radiation_kj_m2", "relative_humidity_pct")
WEATHER_OPTIONAL = ("pressure_hpa", "wind_speed_m_s", "snow_on_ground_cm")
SCINT_COLUMNS = ("timestamp_utc", "cn2_m_minus_2_3")

# CSV column -> record attribute
_WEATHER_FIELDS = {
    "temperature_c": "temperature",
    "solar_radiation_kj_m2": "solar_radiation",
    "relative_humidity_pct": "relative_humidity",
    "pressure_hpa": "pressure",
    "wind_speed_m_s": "wind_speed",
    "snow_on_ground_cm": "snow_on_ground",
}
WEATHER_FEATURES = tuple(_WEATHER_FIELDS.values())
CORE_WEATHER = ("temperature", "solar_radiation", "relative_humidity")
DEFAULT_FEATURES = ("temperature", "solar_radiation", "relative_humidity", "log10_cn2", "t_x", "t_y")
TARGET = "log10_cn2"
LOG10_CN2_BAND = (-18.0, -11.0)


class TimeseriesError(ValueError):
    pass


class SchemaError(TimeseriesError):
    pass


class EmptyInputError(TimeseriesError):
    pass


class AlignmentError(TimeseriesError):
    pass


class DegenerateFeatureError(TimeseriesError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    timestamp: datetime
    temperature: float = math.nan
    solar_radiation: float = math.nan
    relative_humidity: float = math.nan
    log10_cn2: float | None = None
    pressure: float | None = None
    wind_speed: float | None = None
    snow_on_ground: float | None = None


@dataclass
class IngestResult:
    """Parsed records plus the bookkeeping produced while reading a file."""

    records: list
    rejected: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)
    duplicates: int = 0
    gaps: list[tuple[datetime, datetime, int]] = field(default_factory=list)  # (after, before, minutes missing)
    columns: tuple[str, ...] = ()

    def __iter__(self) -> Iterator:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 at minute resolution; naive stamps are taken as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    if ts.second or ts.microsecond:
        raise ValueError(f"timestamp {text!r} is not on a whole minute")
    return ts


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def to_minutes(ts: datetime) -> int:
    return int((ts - EPOCH).total_seconds() // 60)


def from_minutes(m: int) -> datetime:
    return EPOCH + timedelta(minutes=int(m))


def _read_rows(path: str | Path, required: Sequence[str]):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyInputError(f"{path} is empty") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
        rows = [(reader.line_num, row) for row in reader if any(cell.strip() for cell in row)]
    if not rows:
        raise EmptyInputError(f"{path} has a header but no data rows")
    return header, rows


def _cell(value: str) -> float:
    value = value.strip()
    return math.nan if value == "" else float(value)


def _dedupe(stamped: list[tuple[datetime, object]]) -> tuple[list, int]:
    stamped.sort(key=lambda p: p[0])  # stable: file order kept within equal stamps
    out: dict[datetime, object] = {}
    dups = 0
    for ts, rec in stamped:
        if ts in out:
            dups += 1
        out[ts] = rec
    return list(out.values()), dups


def _gap_index(stamps: Sequence[datetime]) -> list[tuple[datetime, datetime, int]]:
    gaps = []
    for a, b in zip(stamps, stamps[1:]):
        step = int((b - a).total_seconds() // 60)
        if step > 1:
            gaps.append((a, b, step - 1))
    return gaps


def ingest_weather_csv(path: str | Path) -> IngestResult:
    """Read a weather CSV into :class:`SampleRecord` objects sorted by time.

    Rows with unparsable values or humidity outside [0, 100] are skipped and
    listed in ``rejected``; a repeated timestamp keeps the last row.
    """
    header, rows = _read_rows(path, WEATHER_REQUIRED)
    idx = {name: header.index(name) for name in WEATHER_REQUIRED + WEATHER_OPTIONAL if name in header}
    stamped, rejected = [], []
    for line, row in rows:
        try:
            ts = parse_timestamp(row[idx["timestamp_utc"]])
            values = {}
            for col, attr in _WEATHER_FIELDS.items():
                if col in idx:
                    values[attr] = _cell(row[idx[col]]) if idx[col] < len(row) else math.nan
            rh = values["relative_humidity"]
            if not math.isnan(rh) and not 0 <= rh <= 100:
                raise ValueError(f"relative humidity {rh} outside [0, 100]")
        except (ValueError, IndexError) as exc:
            rejected.append((line, str(exc)))
            continue
        stamped.append((ts, SampleRecord(ts, **values)))
    records, dups = _dedupe(stamped)
    if dups:
        logger.warning("%s: %d duplicate timestamp(s), kept last", path, dups)
    for line, why in rejected:
        logger.warning("%s:%d rejected: %s", path, line, why)
    cols = tuple(c for c in header if c in idx)
    return IngestResult(records, rejected, dups, _gap_index([r.timestamp for r in records]), cols)


def ingest_scintillometer_csv(path: str | Path) -> IngestResult:
    """Read scintillometer Cn2 (m^-2/3) rows as ``(timestamp, cn2)`` pairs.

    Non-positive Cn2 and values whose log10 falls outside the physical band
    are rejected; gaps longer than one minute are indexed in ``gaps``.
    """
    header, rows = _read_rows(path, SCINT_COLUMNS)
    it, ic = header.index("timestamp_utc"), header.index("cn2_m_minus_2_3")
    stamped, rejected = [], []
    for line, row in rows:
        try:
            ts = parse_timestamp(row[it])
            cn2 = float(row[ic])
            if not cn2 > 0:
                raise ValueError(f"cn2 must be positive, got {cn2}")
            lg = math.log10(cn2)
            if not LOG10_CN2_BAND[0] <= lg <= LOG10_CN2_BAND[1]:
                raise ValueError(f"log10 cn2 {lg:.2f} outside {LOG10_CN2_BAND}")
        except (ValueError, IndexError) as exc:
            rejected.append((line, str(exc)))
            continue
        stamped.append((ts, (ts, cn2)))
    records, dups = _dedupe(stamped)
    if dups:
        logger.warning("%s: %d duplicate timestamp(s), kept last", path, dups)
    for line, why in rejected:
        logger.warning("%s:%d rejected: %s", path, line, why)
    return IngestResult(records, rejected, dups, _gap_index([r[0] for r in records]), SCINT_COLUMNS)


@dataclass
class AlignedSeries:
    """Columns on a contiguous minute grid; ``gap[i]`` marks unusable minutes."""

    start_minute: int
    columns: dict[str, np.ndarray]
    gap: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.gap)
        for name, col in self.columns.items():
            if len(col) != n:
                raise ValueError(f"column {name} has length {len(col)}, expected {n}")

    def __len__(self) -> int:
        return len(self.gap)

    @property
    def minutes(self) -> np.ndarray:
        return self.start_minute + np.arange(len(self), dtype=np.int64)

    def timestamp(self, i: int) -> datetime:
        return from_minutes(self.start_minute + i)

    def index_of(self, ts: datetime) -> int:
        i = to_minutes(ts) - self.start_minute
        if not 0 <= i < len(self):
            raise IndexError(f"{ts} outside series span")
        return i

    def with_column(self, name: str, values: np.ndarray, gap: np.ndarray | None = None) -> "AlignedSeries":
        cols = dict(self.columns)
        cols[name] = values
        return AlignedSeries(self.start_minute, cols, self.gap if gap is None else gap, dict(self.meta))

    def records(self) -> list[SampleRecord]:
        names = [n for n in ("temperature", "solar_radiation", "relative_humidity", "log10_cn2",
                             "pressure", "wind_speed", "snow_on_ground") if n in self.columns]
        out = []
        for i in range(len(self)):
            vals = {n: float(self.columns[n][i]) for n in names}
            out.append(SampleRecord(self.timestamp(i), **vals))
        return out

    def gap_summary(self) -> dict:
        runs = _runs(self.gap)
        return {
            "minutes": len(self),
            "gap_minutes": int(self.gap.sum()),
            "gap_runs": len(runs),
            "longest_gap_minutes": max((b - a for a, b in runs), default=0),
        }

    def write_csv(self, path: str | Path) -> None:
        names = list(self.columns)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp_utc", *names, "gap"])
            for i in range(len(self)):
                w.writerow([format_timestamp(self.timestamp(i)),
                            *(_fmt(self.columns[n][i]) for n in names), int(self.gap[i])])

    @classmethod
    def read_csv(cls, path: str | Path) -> "AlignedSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        if not rows:
            raise EmptyInputError(f"{path} has no rows")
        names = header[1:-1]
        start = to_minutes(parse_timestamp(rows[0][0]))
        data = np.array([[_cell(v) for v in r[1:-1]] for r in rows], dtype=float).reshape(len(rows), len(names))
        gap = np.array([r[-1] == "1" for r in rows])
        if to_minutes(parse_timestamp(rows[-1][0])) - start != len(rows) - 1:
            raise TimeseriesError(f"{path} is not on a contiguous minute grid")
        return cls(start, {n: data[:, k] for k, n in enumerate(names)}, gap)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges where ``mask`` is true."""
    m = np.concatenate([[False], np.asarray(mask, bool), [False]])
    d = np.diff(m.astype(np.int8))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def align_series(weather: Iterable[SampleRecord], scint: Iterable[tuple[datetime, float]],
                 fill_horizon: int = 60) -> AlignedSeries:
    """Join weather and Cn2 onto the minute grid spanning both sources.

    Weather values are carried forward for at most ``fill_horizon`` minutes;
    a minute lacking Cn2 or any core weather value is a gap.
    """
    weather = list(weather)
    scint = list(scint)
    if not weather or not scint:
        raise AlignmentError("both sources must be non-empty")
    wm = np.array([to_minutes(r.timestamp) for r in weather], dtype=np.int64)
    sm = np.array([to_minutes(t) for t, _ in scint], dtype=np.int64)
    # the span is the intersection of the two sources' time ranges
    lo, hi = max(wm[0], sm[0]), min(wm[-1], sm[-1])
    if hi < lo:
        raise AlignmentError("weather and scintillometer time ranges do not overlap")
    minutes = np.arange(lo, hi + 1, dtype=np.int64)
    n = len(minutes)

    log_cn2 = np.full(n, np.nan)
    sel = (sm >= lo) & (sm <= hi)
    log_cn2[sm[sel] - lo] = np.log10([c for (_, c), s in zip(scint, sel) if s])

    present = [a for a in WEATHER_FEATURES if any(getattr(r, a) is not None for r in weather)]
    columns: dict[str, np.ndarray] = {}
    for attr in present:
        vals = np.array([np.nan if getattr(r, attr) is None else getattr(r, attr) for r in weather], dtype=float)
        ok = ~np.isnan(vals)
        src_m, src_v = wm[ok], vals[ok]
        col = np.full(n, np.nan)
        if len(src_m):
            pos = np.searchsorted(src_m, minutes, side="right") - 1
            valid = pos >= 0
            age = np.where(valid, minutes - src_m[np.clip(pos, 0, None)], np.iinfo(np.int64).max)
            use = valid & (age <= fill_horizon)
            col[use] = src_v[pos[use]]
        columns[attr] = col
    columns[TARGET] = log_cn2

    gap = np.isnan(log_cn2)
    for attr in CORE_WEATHER:
        gap |= np.isnan(columns[attr])
    if gap.all():
        raise AlignmentError("no minute has both weather and Cn2 data")
    series = AlignedSeries(int(lo), columns, gap, {"fill_horizon": fill_horizon})
    logger.info("aligned %d minutes, %d gap minutes", n, int(gap.sum()))
    return series


def moving_average_log_cn2(series: AlignedSeries, window: int = 60, max_gap_fraction: float = 0.25,
                           centered: bool = False, domain: str = "log") -> AlignedSeries:
    """Smooth log10 Cn2 with a trailing (default) or centred moving average.

    Means are taken over non-missing minutes of the window; if more than
    ``max_gap_fraction`` of the window is missing (minutes outside the series
    count as missing) the minute becomes a gap.  ``domain="linear"`` averages
    Cn2 itself and takes the log afterwards.
    """
    if window < 2:
        raise TimeseriesError("averaging window must cover at least 2 samples")
    if domain not in ("log", "linear"):
        raise TimeseriesError(f"domain must be 'log' or 'linear', got {domain!r}")
    raw = series.columns[TARGET]
    vals = raw if domain == "log" else 10.0**raw
    have = ~np.isnan(raw)
    filled = np.where(have, vals, 0.0)
    n = len(raw)
    # window [i - back, i + fwd]
    fwd = (window - 1) // 2 if centered else 0
    back = window - 1 - fwd
    cs = np.concatenate([[0.0], np.cumsum(filled)])
    cc = np.concatenate([[0], np.cumsum(have)])
    hi = np.minimum(np.arange(n) + fwd + 1, n)
    lo = np.maximum(np.arange(n) - back, 0)
    total = cs[hi] - cs[lo]
    count = cc[hi] - cc[lo]
    missing = window - count
    ok = (missing <= max_gap_fraction * window) & (count > 0)
    mean = np.full(n, np.nan)
    mean[ok] = total[ok] / count[ok]
    if domain == "linear":
        mean = np.log10(mean)
    gap = ~ok
    for attr in CORE_WEATHER:
        if attr in series.columns:
            gap |= np.isnan(series.columns[attr])
    out = series.with_column(TARGET, mean, gap)
    out.columns["log10_cn2_raw"] = raw
    out.meta.update(average_window=window, average_centered=centered, average_domain=domain,
                    max_gap_fraction=max_gap_fraction)
    return out


def periodic_time_features(t) -> tuple:
    """Map UTC time to the unit circle with a one-day period.

    ``t`` is a datetime or seconds since the Unix epoch (scalar or array).
    """
    if isinstance(t, datetime):
        t = (t.astimezone(timezone.utc) - EPOCH).total_seconds()
    t = np.asarray(t, dtype=float)
    ang = 2 * np.pi * np.mod(t, DAY_SECONDS) / DAY_SECONDS
    tx, ty = np.cos(ang), np.sin(ang)
    if tx.ndim == 0:
        return float(tx), float(ty)
    return tx, ty


def add_time_features(series: AlignedSeries) -> AlignedSeries:
    tx, ty = periodic_time_features(series.minutes * 60.0)
    out = series.with_column("t_x", tx)
    out.columns["t_y"] = ty
    stamps = series.minutes.astype("datetime64[m]")
    doy = (stamps.astype("datetime64[D]") - stamps.astype("datetime64[Y]")).astype(np.int64) + 1
    out.columns["day_of_year"] = doy.astype(float)
    return out


@dataclass(frozen=True)
class NormalizationStats:
    names: tuple[str, ...]
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if len(self.names) != len(self.minimum) or len(self.names) != len(self.maximum):
            raise ValueError("stats arrays must match feature names")
        for name, lo, hi in zip(self.names, self.minimum, self.maximum):
            if not hi > lo:
                raise DegenerateFeatureError(f"feature {name!r} has max == min ({lo}) over the training data")

    def index(self, name: str) -> int:
        return self.names.index(name)

    def as_dict(self) -> dict:
        return {n: [float(a), float(b)] for n, a, b in zip(self.names, self.minimum, self.maximum)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        names = tuple(d)
        return cls(names, np.array([d[n][0] for n in names], float), np.array([d[n][1] for n in names], float))


def compute_stats(dataset: "WindowedDataset") -> NormalizationStats:
    """Per-feature min/max over every minute the dataset's windows touch.

    Input and target Cn2 share the log10 Cn2 feature's range.
    """
    if len(dataset) == 0:
        raise TimeseriesError("cannot compute statistics from an empty training split")
    # mark minutes covered by any window (difference array)
    d = np.zeros(len(dataset.values) + 1, np.int64)
    np.add.at(d, dataset.starts, 1)
    np.add.at(d, dataset.starts + dataset.span, -1)
    covered = np.cumsum(d[:-1]) > 0
    block = dataset.values[covered]
    return NormalizationStats(tuple(dataset.features), block.min(axis=0), block.max(axis=0))


def normalize(x: np.ndarray, stats: NormalizationStats, feature: str | None = None) -> np.ndarray:
    """Affine map onto the training range, ``(x - min) / (max - min)``; no clamping.

    With ``feature`` set, ``x`` holds values of that single feature; otherwise
    the last axis runs over ``stats.names``.
    """
    lo, hi = _bounds(stats, feature)
    return (np.asarray(x, float) - lo) / (hi - lo)


def denormalize(x: np.ndarray, stats: NormalizationStats, feature: str | None = None) -> np.ndarray:
    lo, hi = _bounds(stats, feature)
    return np.asarray(x, float) * (hi - lo) + lo


def _bounds(stats, feature):
    if feature is None:
        return stats.minimum, stats.maximum
    i = stats.index(feature)
    return stats.minimum[i], stats.maximum[i]


@dataclass(frozen=True)
class WindowedExample:
    inputs: np.ndarray  # (in_len, F)
    target: np.ndarray  # (n_out,)
    start_timestamp: datetime


@dataclass
class WindowedDataset:
    """Windows over a feature matrix, stored as start offsets.

    ``values`` is ``(T, F)`` on a contiguous minute grid beginning at
    ``start_minute``; example ``i`` reads rows ``starts[i] .. starts[i] + in_len``
    and targets at ``out_res, 2 out_res, ..`` minutes after its last input row.
    """

    values: np.ndarray
    features: tuple[str, ...]
    starts: np.ndarray
    start_minute: int
    in_len: int = 720
    out_len: int = 360
    out_res: int = 15
    target_feature: str = TARGET
    stats: NormalizationStats | None = None

    @property
    def n_out(self) -> int:
        return n_outputs(self.out_len, self.out_res)

    @property
    def span(self) -> int:
        return self.in_len + self.out_len

    @property
    def target_offsets(self) -> np.ndarray:
        return self.in_len - 1 + self.out_res * np.arange(1, self.n_out + 1)

    def __len__(self) -> int:
        return len(self.starts)

    def inputs(self, idx=None) -> np.ndarray:
        s = self.starts if idx is None else self.starts[np.asarray(idx)]
        rows = s[:, None] + np.arange(self.in_len)[None, :]
        return self.values[rows]

    def targets(self, idx=None) -> np.ndarray:
        s = self.starts if idx is None else self.starts[np.asarray(idx)]
        col = self.features.index(self.target_feature)
        return self.values[s[:, None] + self.target_offsets[None, :], col]

    def start_timestamps(self) -> list[datetime]:
        return [from_minutes(self.start_minute + int(s)) for s in self.starts]

    def end_minutes(self) -> np.ndarray:
        """Absolute minute just past each window's span."""
        return self.start_minute + self.starts + self.span

    def __getitem__(self, i: int) -> WindowedExample:
        return WindowedExample(self.inputs([i])[0], self.targets([i])[0],
                               from_minutes(self.start_minute + int(self.starts[i])))

    def __iter__(self) -> Iterator[WindowedExample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "WindowedDataset":
        return replace(self, starts=self.starts[np.asarray(idx, dtype=np.int64)])

    def head(self, n: int) -> "WindowedDataset":
        return self.subset(np.arange(min(n, len(self))))

    def normalized(self, stats: NormalizationStats) -> "WindowedDataset":
        if self.stats is not None:
            raise TimeseriesError("dataset is already normalized")
        cols = [stats.index(f) for f in self.features]
        lo, hi = stats.minimum[cols], stats.maximum[cols]
        return replace(self, values=(self.values - lo) / (hi - lo), stats=stats)

    def write_csv(self, path: str | Path) -> None:
        """Flattened export: one row per example, inputs row-major by time step."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = ["start_timestamp_utc"]
            head += [f"x{t:03d}_{f}" for t in range(self.in_len) for f in self.features]
            head += [f"y{k:02d}" for k in range(self.n_out)]
            w.writerow(head)
            for i in range(len(self)):
                ex = self[i]
                w.writerow([format_timestamp(ex.start_timestamp),
                            *map(repr, ex.inputs.ravel().tolist()), *map(repr, ex.target.tolist())])


def n_outputs(horizon_minutes: int = 360, resolution_minutes: int = 15) -> int:
    """Number of forecast points, horizon / resolution."""
    if resolution_minutes <= 0 or horizon_minutes % resolution_minutes:
        raise TimeseriesError(f"resolution {resolution_minutes} min must divide the {horizon_minutes} min horizon")
    return horizon_minutes // resolution_minutes


def feature_matrix(series: AlignedSeries, features: Sequence[str] = DEFAULT_FEATURES) -> np.ndarray:
    if "t_x" in features and "t_x" not in series.columns:
        series = add_time_features(series)
    missing = [f for f in features if f not in series.columns]
    if missing:
        raise TimeseriesError(f"series lacks feature column(s) {missing}")
    return np.stack([series.columns[f] for f in features], axis=1)


def make_windows(series: AlignedSeries, in_len: int = 720, out_len: int = 360, out_res: int = 15,
                 stride: int = 15, features: Sequence[str] = DEFAULT_FEATURES) -> WindowedDataset:
    """Slide a gap-free ``in_len + out_len`` minute span over the series."""
    if in_len < 1 or stride < 1:
        raise TimeseriesError("in_len and stride must be positive")
    n_outputs(out_len, out_res)
    features = tuple(features)
    if TARGET not in features:
        raise TimeseriesError("log10_cn2 must be among the input features")
    values = feature_matrix(series, features)
    span = in_len + out_len
    n = len(series)
    bad = series.gap | np.isnan(values).any(axis=1)
    if n < span:
        logger.warning("series of %d minutes is shorter than one %d-minute window", n, span)
        starts = np.zeros(0, np.int64)
    else:
        cbad = np.concatenate([[0], np.cumsum(bad)])
        cand = np.arange(0, n - span + 1, stride, dtype=np.int64)
        starts = cand[(cbad[cand + span] - cbad[cand]) == 0]
    values = np.where(np.isnan(values), 0.0, values)
    return WindowedDataset(values, features, starts, series.start_minute, in_len, out_len, out_res)


@dataclass
class DatasetSplit:
    train: WindowedDataset
    validation: WindowedDataset
    test: WindowedDataset
    descriptor: dict


def _trim_after(prev: WindowedDataset, nxt: WindowedDataset) -> WindowedDataset:
    """Drop windows of ``nxt`` whose span overlaps any span in ``prev``."""
    if len(prev) == 0 or len(nxt) == 0:
        return nxt
    last_end = prev.start_minute + int(prev.starts.max()) + prev.span
    first = prev.start_minute + int(prev.starts.min())
    s = nxt.start_minute + nxt.starts
    e = s + nxt.span
    keep = (s >= last_end) | (e <= first)
    return nxt.subset(np.flatnonzero(keep))


def _ratio_cuts(n: int, ratios: Sequence[float]) -> list[int]:
    total = float(sum(ratios))
    cuts, acc = [0], 0.0
    for r in ratios[:-1]:
        acc += r
        cuts.append(int(round(n * acc / total)))
    cuts.append(n)
    return cuts


def split_dataset(ds: WindowedDataset, mode: str = "B", month: int = 10,
                  ratios: Sequence[float] | None = None) -> DatasetSplit:
    """Chronological split into train / validation / test.

    Mode ``"A"`` holds out every window lying entirely inside calendar
    ``month`` as test and splits the rest 85:15; mode ``"B"`` splits
    75:15:10.  Windows whose span would overlap a neighbouring split are
    dropped.
    """
    order = np.argsort(ds.starts, kind="stable")
    ds = ds.subset(order)
    mode = mode.upper()
    if mode == "A":
        ratios = tuple(ratios or (85, 15))
        starts_abs = ds.start_minute + ds.starts
        m_start = np.array([from_minutes(int(s)).month for s in starts_abs])
        m_end = np.array([from_minutes(int(s) + ds.span - 1).month for s in starts_abs])
        in_month = (m_start == month) & (m_end == month)
        if not in_month.any():
            raise TimeseriesError(f"no complete window lies inside month {month}")
        test = ds.subset(np.flatnonzero(in_month))
        rest = ds.subset(np.flatnonzero(~in_month & (m_start != month) & (m_end != month)))
        cuts = _ratio_cuts(len(rest), ratios)
        train = rest.subset(np.arange(cuts[0], cuts[1]))
        val = _trim_after(train, rest.subset(np.arange(cuts[1], cuts[2])))
        # test is disjoint from train/val by construction of the month filter
        val = _trim_after(test, val)
        train = _trim_after(test, train)
        desc = {"mode": "A", "month": month, "ratios": list(ratios)}
    elif mode == "B":
        ratios = tuple(ratios or (75, 15, 10))
        cuts = _ratio_cuts(len(ds), ratios)
        train = ds.subset(np.arange(cuts[0], cuts[1]))
        val = _trim_after(train, ds.subset(np.arange(cuts[1], cuts[2])))
        test = _trim_after(val, _trim_after(train, ds.subset(np.arange(cuts[2], cuts[3]))))
        desc = {"mode": "B", "ratios": list(ratios)}
    else:
        raise TimeseriesError(f"unknown split mode {mode!r} (expected 'A' or 'B')")
    desc.update(sizes=[len(train), len(val), len(test)])
    return DatasetSplit(train, val, test, desc)


def prepare_series(weather_path, scint_path, fill_horizon: int = 60, window: int = 60,
                   max_gap_fraction: float = 0.25, centered: bool = False, domain: str = "log") -> AlignedSeries:
    """Ingest both CSVs, align them and smooth log10 Cn2."""
    weather = ingest_weather_csv(weather_path)
    scint = ingest_scintillometer_csv(scint_path)
    aligned = align_series(weather, scint, fill_horizon)
    aligned.meta.update(weather_rejected=len(weather.rejected), scint_rejected=len(scint.rejected),
                        weather_duplicates=weather.duplicates, scint_duplicates=scint.duplicates)
    return moving_average_log_cn2(aligned, window, max_gap_fraction, centered, domain)
