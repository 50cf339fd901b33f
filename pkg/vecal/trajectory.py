"""Loading, validation and resampling of raw OBD run logs.

Input CSV files carry the header ``run_id,mode,t,maf_gps,soc,speed_mps`` (or
``soc_pct`` instead of ``soc``). Rows of several runs may share a file; runs
are keyed by ``(vehicle_mode, run_id)`` because both modes number their runs
from 1. Leading ``#`` lines are treated as comments.

Resampling puts a run on a fixed ``dt`` grid:

* ``maf_integral`` of tick ``k`` is the trapezoidal integral of the raw MAF
  curve over ``[t0 + k*dt, t0 + (k+1)*dt]``;
* ``soc`` and ``speed`` are linearly interpolated at the window start
  (boundary samples, not window means);
* a trailing partial window is dropped.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ArtifactIOError, ParseError, SchemaError, ValidationError
from .logger import log_event
from .models import ObdRecord, Tick, TrajectorySeries, VehicleMode

RunKey = Tuple[VehicleMode, int]

BASE_COLUMNS = ("run_id", "mode", "t", "maf_gps", "speed_mps")
SOC_COLUMNS = ("soc", "soc_pct")
CSV_HEADER = "run_id,mode,t,maf_gps,soc,speed_mps"

# Slack when flooring span/dt so that spans computed from float timestamps
# (e.g. 0.02 s raw steps) do not lose a whole tick to rounding.
_SPAN_TOLERANCE = 1e-9

Source = Union[bytes, str, Path, BinaryIO]


@dataclass(frozen=True)
class IngestOptions:
    """Options for :func:`load_runs`.

    ``allow_unsorted`` sorts each run by timestamp before validating instead
    of requiring rows in file order; equal timestamps are rejected either way.
    ``expected_mode`` is set from a dataset manifest and must match every row.
    """
    allow_unsorted: bool = False
    expected_mode: Optional[VehicleMode] = None
    source_name: str = "<stream>"


def _read_text(source: Source) -> Tuple[str, str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise ArtifactIOError(path, "input file not found") from None
        except OSError as e:
            raise ArtifactIOError(path, str(e)) from e
        name = str(path)
    elif isinstance(source, bytes):
        raw, name = source, "<bytes>"
    else:
        raw, name = source.read(), getattr(source, "name", "<stream>")
    try:
        return raw.decode("utf-8-sig"), name
    except UnicodeDecodeError as e:
        raise ParseError(f"{name} is not valid UTF-8: {e}") from e


def _strip_comments(text: str) -> Tuple[str, int]:
    lines = text.splitlines(keepends=True)
    skipped = 0
    while skipped < len(lines) and lines[skipped].lstrip().startswith("#"):
        skipped += 1
    return "".join(lines[skipped:]), skipped


def _check_header(columns: Sequence[str]) -> str:
    missing = [c for c in BASE_COLUMNS if c not in columns]
    if missing:
        raise SchemaError(f"missing required columns: {missing} (expected {CSV_HEADER})")
    soc_cols = [c for c in SOC_COLUMNS if c in columns]
    if len(soc_cols) != 1:
        raise SchemaError("exactly one of the columns 'soc' or 'soc_pct' must be present")
    unknown = [c for c in columns if c not in BASE_COLUMNS + SOC_COLUMNS]
    if unknown:
        raise SchemaError(f"unexpected columns: {unknown}")
    return soc_cols[0]


def load_runs(source: Source, options: Optional[IngestOptions] = None) -> Dict[RunKey, List[ObdRecord]]:
    """Parse one OBD CSV into validated records grouped by run.

    Returns a dict ordered by ``(mode, run_id)``; each run's records are in
    strictly increasing timestamp order.
    """
    options = options or IngestOptions()
    text, name = _read_text(source)
    if options.source_name != "<stream>":
        name = options.source_name
    body, comment_lines = _strip_comments(text)
    if not body.strip():
        raise SchemaError(f"{name}: missing header (expected {CSV_HEADER})")

    # blank lines are dropped; remember the physical line of every kept row
    numbered = [(comment_lines + k + 1, line) for k, line in enumerate(body.splitlines()) if line.strip()]
    row_lines = [number for number, _ in numbered[1:]]
    body = "\n".join(line for _, line in numbered) + "\n"

    try:
        frame = pd.read_csv(io.StringIO(body), dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise ParseError(f"{name}: {e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    soc_col = _check_header(list(frame.columns))
    if frame.empty:
        return {}

    line_of = lambda i: row_lines[int(i)]  # noqa: E731

    numeric = {}
    for col in ("run_id", "t", "maf_gps", soc_col, "speed_mps"):
        values = pd.to_numeric(frame[col].str.strip(), errors="coerce")
        bad = values.index[~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))]
        if len(bad):
            i = bad[0]
            raise ParseError(f"{name}: malformed value {frame[col].iloc[i]!r} in column '{col}'", line_of(i))
        numeric[col] = values.to_numpy(dtype=float)

    run_ids = numeric["run_id"]
    soc = numeric[soc_col] / 100.0 if soc_col == "soc_pct" else numeric[soc_col]

    runs: Dict[RunKey, List[ObdRecord]] = {}
    for i in range(len(frame)):
        line = line_of(i)
        if run_ids[i] != int(run_ids[i]) or run_ids[i] < 1:
            raise ParseError(f"{name}: run_id must be a positive integer, got {frame['run_id'].iloc[i]!r}", line)
        try:
            mode = VehicleMode.parse(frame["mode"].iloc[i])
        except ValidationError as e:
            raise ParseError(f"{name}: {e}", line) from None
        if options.expected_mode is not None and mode != options.expected_mode:
            raise ValidationError(
                f"{name} line {line}: mode {mode.value} differs from manifest mode {options.expected_mode.value}"
            )
        if not 0.0 <= soc[i] <= 1.0:
            raise ValidationError(f"{name} line {line}: soc out of range ({frame[soc_col].iloc[i]})")
        if numeric["maf_gps"][i] < 0:
            raise ValidationError(f"{name} line {line}: maf must be non-negative")
        if numeric["speed_mps"][i] < 0:
            raise ValidationError(f"{name} line {line}: speed must be non-negative")
        record = ObdRecord(
            run_id=int(run_ids[i]),
            vehicle_mode=mode,
            timestamp=float(numeric["t"][i]),
            maf=float(numeric["maf_gps"][i]),
            soc=float(soc[i]),
            speed=float(numeric["speed_mps"][i]),
        )
        runs.setdefault((mode, record.run_id), []).append(record)

    for key, records in runs.items():
        if options.allow_unsorted:
            records.sort(key=lambda r: r.timestamp)
        for prev, cur in zip(records, records[1:]):
            if not cur.timestamp > prev.timestamp:
                raise ValidationError(
                    f"{name}: run {key[1]} ({key[0].value}) has non-monotone timestamp {cur.timestamp} "
                    f"after {prev.timestamp}"
                )

    return dict(sorted(runs.items(), key=lambda kv: (kv[0][0] != VehicleMode.ACC, kv[0][1])))


def load_manifest_files(manifest_path: Path) -> List[Tuple[Path, Optional[VehicleMode]]]:
    """Return the CSV files (and their modes) listed in a dataset manifest."""
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ArtifactIOError(manifest_path, "manifest not found") from None
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON in {manifest_path}: {e}") from e
    entries = doc.get("files") if isinstance(doc, dict) else None
    if not isinstance(entries, list):
        raise SchemaError(f"{manifest_path}: manifest needs a 'files' list")
    files = []
    for entry in entries:
        if not isinstance(entry, dict) or "path" not in entry:
            raise SchemaError(f"{manifest_path}: every file entry needs a 'path'")
        mode = VehicleMode.parse(entry["mode"]) if entry.get("mode") else None
        files.append((manifest_path.parent / entry["path"], mode))
    return files


def load_dataset(paths: Iterable[Union[str, Path]], allow_unsorted: bool = False) -> Dict[RunKey, List[ObdRecord]]:
    """Load CSV files and/or JSON dataset manifests into one run map."""
    sources: List[Tuple[Path, Optional[VehicleMode]]] = []
    for raw in paths:
        path = Path(raw)
        if path.suffix.lower() == ".json":
            sources.extend(load_manifest_files(path))
        else:
            sources.append((path, None))

    runs: Dict[RunKey, List[ObdRecord]] = {}
    for path, mode in sources:
        options = IngestOptions(allow_unsorted=allow_unsorted, expected_mode=mode, source_name=str(path))
        for key, records in load_runs(path, options).items():
            if key in runs:
                raise ValidationError(f"run {key[1]} ({key[0].value}) appears in more than one input file")
            runs[key] = records
    return dict(sorted(runs.items(), key=lambda kv: (kv[0][0] != VehicleMode.ACC, kv[0][1])))


def resample(records: Sequence[ObdRecord], dt: float = 1.0) -> TrajectorySeries:
    """Put one run's raw records on a fixed ``dt`` grid."""
    if not records:
        raise ValidationError("run is empty")
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    run_id, mode = records[0].run_id, records[0].vehicle_mode

    t = np.array([r.timestamp for r in records], dtype=float)
    maf = np.array([r.maf for r in records], dtype=float)
    soc = np.array([r.soc for r in records], dtype=float)
    speed = np.array([r.speed for r in records], dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValidationError(f"run {run_id}: timestamps must be strictly increasing")

    span = t[-1] - t[0]
    n = math.floor(span / dt + _SPAN_TOLERANCE)
    if n < 1:
        raise ValidationError(f"run {run_id}: run too short (span {span:g} s < dt {dt:g} s)")

    boundaries = t[0] + dt * np.arange(n + 1)
    boundaries[-1] = min(boundaries[-1], t[-1])

    # integrate the piecewise-linear MAF curve window by window on the merged grid
    inside = t[(t > boundaries[0]) & (t < boundaries[-1])]
    grid = np.union1d(boundaries, inside)
    rate = np.interp(grid, t, maf)
    segments = np.diff(grid) * (rate[1:] + rate[:-1]) / 2.0
    window = np.searchsorted(boundaries, grid[:-1], side="right") - 1
    integrals = np.bincount(window, weights=segments, minlength=n)[:n]

    soc_b = np.interp(boundaries, t, soc)
    speed_b = np.interp(boundaries, t, speed)
    ticks = tuple(
        Tick(t=k, maf_integral=float(integrals[k]), soc=float(soc_b[k]), speed=float(speed_b[k]))
        for k in range(n)
    )
    log_event("run_resampled", run_id=run_id, mode=mode.value, raw_records=len(records), ticks=n)
    return TrajectorySeries(
        run_id=run_id, vehicle_mode=mode, dt=dt, ticks=ticks,
        end_soc=float(soc_b[n]), end_speed=float(speed_b[n]),
    )


def to_records(series: TrajectorySeries, t0: float = 0.0) -> List[ObdRecord]:
    """Emit raw records that resample back to ``series`` exactly.

    Records are placed at every tick boundary and window midpoint. Boundary
    MAF rates are the smaller neighbouring window mean, the midpoint rate is
    solved so each window's trapezoid integral equals ``maf_integral``; this
    keeps every rate non-negative.
    """
    dt, n = series.dt, len(series)
    integrals = series.maf_integrals
    socs = np.append(series.socs, series.end_soc if series.end_soc is not None else series.ticks[-1].soc)
    speeds = np.append(series.speeds, series.end_speed if series.end_speed is not None else series.ticks[-1].speed)

    means = integrals / dt
    edge = np.empty(n + 1)
    edge[0], edge[n] = means[0], means[-1]
    edge[1:n] = np.minimum(means[:-1], means[1:])
    mid = (4.0 * means - edge[:-1] - edge[1:]) / 2.0

    def record(ts: float, rate: float, s: float, v: float) -> ObdRecord:
        return ObdRecord(series.run_id, series.vehicle_mode, ts, float(max(rate, 0.0)), float(s), float(v))

    out: List[ObdRecord] = []
    for k in range(n):
        out.append(record(t0 + k * dt, edge[k], socs[k], speeds[k]))
        out.append(record(t0 + k * dt + dt / 2.0, mid[k], (socs[k] + socs[k + 1]) / 2.0,
                          (speeds[k] + speeds[k + 1]) / 2.0))
    out.append(record(t0 + n * dt, edge[n], socs[n], speeds[n]))
    return out


def records_to_frame(records: Sequence[ObdRecord]) -> pd.DataFrame:
    return pd.DataFrame({
        "run_id": [r.run_id for r in records],
        "mode": [r.vehicle_mode.value for r in records],
        "t": [r.timestamp for r in records],
        "maf_gps": [r.maf for r in records],
        "soc": [r.soc for r in records],
        "speed_mps": [r.speed for r in records],
    })
