"""CSV ingestion/emission and report files.

Every emitted file starts with ``#`` comment lines carrying the format
version and the run configuration; readers skip them.  Floats are written
with 12 significant digits.
"""
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import AccelDataset, Specimen
from .errors import DomainError, ValidationError
from .fitting import CombinedFit
from .path import CombinedParams, ExposureConditions
from .spectral import CELL_CENTERS, DosageSeries
from .weather import CovariateHistory

FORMAT_VERSION = "1"
FLOAT_FMT = "{:.12g}"

SPECIMEN_HEADER = ["specimen_id", "group_id", "bp", "nd", "temp_c", "rh"]
MEASUREMENT_HEADER = ["specimen_id", "time_h", "damage"]
DOSAGE_HEADER = ["specimen_id", "time_h", "cum_dosage"]
COVARIATE_HEADER = ["timestamp_iso8601", "temp_c", "rh_pct"] + [f"d{int(c)}" for c in CELL_CENTERS]
OUTDOOR_HEADER = ["specimen_id", "group_id", "time_h", "damage"]
PREDICTION_HEADER = ["timestamp", "s_star_cum", "point", "lower", "upper"]
FAILURE_HEADER = ["specimen_id", "point_h", "lower_h", "upper_h", "multiple"]
LONG_HEADER = ["specimen_id", "time_h", "series", "value"]


def fmt(x):
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if not np.isfinite(x) else FLOAT_FMT.format(float(x))
    return str(x)


def header_lines(meta=None):
    lines = [f"# photodeg format_version={FORMAT_VERSION}"]
    if meta:
        lines.append("# config=" + json.dumps(_plain(meta), sort_keys=True, separators=(",", ":")))
    return lines


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_csv(path, header, rows, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header_lines(meta):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path, header):
    """Rows as ``(line_number, dict)`` after checking the header."""
    path = Path(path)
    if not path.exists():
        raise ValidationError("file not found", path)
    rows = []
    with open(path, newline="") as fh:
        seen_header = False
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#") or not line.strip():
                continue
            fields = next(csv.reader([line]))
            if not seen_header:
                if [f.strip() for f in fields] != header:
                    raise ValidationError(f"header {fields[:6]}... does not match expected {header[:6]}...", path, lineno)
                seen_header = True
                continue
            if len(fields) != len(header):
                raise ValidationError(f"expected {len(header)} fields, found {len(fields)}", path, lineno)
            rows.append((lineno, dict(zip(header, fields))))
    if not seen_header:
        raise ValidationError("missing header row", path)
    return rows


def _num(value, path, line, name, allow_empty=False):
    if value.strip() == "":
        if allow_empty:
            return np.nan
        raise ValidationError(f"empty {name}", path, line)
    try:
        x = float(value)
    except ValueError:
        raise ValidationError(f"{name} {value!r} is not a number", path, line) from None
    if not np.isfinite(x):
        raise ValidationError(f"{name} must be finite", path, line)
    return x


def _num_block(rows, names, path):
    """Columns ``names`` of ``rows`` as a float matrix; empty fields become NaN."""
    text = np.array([[r[c].strip() for c in names] for _, r in rows], dtype=str).reshape(len(rows), len(names))
    text[text == ""] = "nan"
    try:
        values = text.astype(float)
    except ValueError:
        values = None
    if values is None or not np.all(np.isfinite(values) | (text == "nan")):
        # slow path only to locate the offending field
        for lineno, r in rows:
            for c in names:
                _num(r[c], path, lineno, c, allow_empty=True)
    return values


# ---------------------------------------------------------------------------
# accelerated data
# ---------------------------------------------------------------------------

ACCEL_FILES = {"specimens": "specimens.csv", "measurements": "measurements.csv", "dosage": "dosage.csv"}


def _group_series(rows, path, cols):
    """Per-specimen arrays with strictly increasing times; ``cols`` = (time col, value col)."""
    out = {}
    for lineno, r in rows:
        sid = r["specimen_id"].strip()
        if not sid:
            raise ValidationError("empty specimen_id", path, lineno)
        t = _num(r[cols[0]], path, lineno, cols[0])
        v = _num(r[cols[1]], path, lineno, cols[1])
        entry = out.setdefault(sid, ([], [], []))
        if entry[0] and t <= entry[0][-1]:
            raise ValidationError(f"specimen {sid}: {cols[0]} {t:g} is not after the previous value {entry[0][-1]:g}", path, lineno)
        entry[0].append(t)
        entry[1].append(v)
        entry[2].append(lineno)
    return out


def ingest_accel(paths):
    """Read an accelerated-test dataset.

    ``paths`` is a directory holding ``specimens.csv``, ``measurements.csv``
    and ``dosage.csv`` or a mapping with those three keys.  Per-specimen
    row counts are stored in ``dataset.cleaning`` until :func:`clean`
    replaces them with its own report.
    """
    if isinstance(paths, (str, Path)):
        base = Path(paths)
        paths = {k: base / v for k, v in ACCEL_FILES.items()}
    spec_path, meas_path, dose_path = (Path(paths[k]) for k in ("specimens", "measurements", "dosage"))
    spec_rows = read_csv(spec_path, SPECIMEN_HEADER)
    conds = {}
    for lineno, r in spec_rows:
        sid = r["specimen_id"].strip()
        if not sid:
            raise ValidationError("empty specimen_id", spec_path, lineno)
        if sid in conds:
            raise ValidationError(f"duplicate specimen id {sid}", spec_path, lineno)
        try:
            bp = int(_num(r["bp"], spec_path, lineno, "bp"))
            cond = ExposureConditions(
                bp,
                _num(r["nd"], spec_path, lineno, "nd"),
                _num(r["temp_c"], spec_path, lineno, "temp_c"),
                _num(r["rh"], spec_path, lineno, "rh"),
            )
        except DomainError as exc:
            raise ValidationError(str(exc), spec_path, lineno) from None
        conds[sid] = (cond, r["group_id"].strip(), lineno)
    if not conds:
        raise ValidationError("no specimens", spec_path)
    meas = _group_series(read_csv(meas_path, MEASUREMENT_HEADER), meas_path, ("time_h", "damage"))
    dose = _group_series(read_csv(dose_path, DOSAGE_HEADER), dose_path, ("time_h", "cum_dosage"))
    for sid, (_, _, lines) in {**meas, **dose}.items():
        if sid not in conds:
            src = meas_path if sid in meas else dose_path
            raise ValidationError(f"specimen {sid} is not listed in {spec_path.name}", src, lines[0])
    specimens = []
    for sid, (cond, group, lineno) in conds.items():
        if sid not in meas:
            raise ValidationError(f"specimen {sid} has no measurements", spec_path, lineno)
        if sid not in dose:
            raise ValidationError(f"specimen {sid} has no dosage series", spec_path, lineno)
        dt, dv, dl = dose[sid]
        try:
            series = DosageSeries(np.array(dt), np.array(dv))
        except DomainError as exc:
            raise ValidationError(f"specimen {sid}: {exc}", dose_path, dl[0]) from None
        mt, mv, ml = meas[sid]
        if mt[0] < dt[0] or mt[-1] > dt[-1]:
            raise ValidationError(f"specimen {sid}: measurements fall outside the dosage record", meas_path, ml[0])
        specimens.append(Specimen(sid, cond, np.array(mt), np.array(mv), series, group_id=group))
    counts = {sid: {"measurement_rows": len(meas[sid][0]), "dosage_rows": len(dose[sid][0])} for sid in conds}
    return AccelDataset(tuple(specimens), cleaning=counts)


def emit_accel(dataset, directory, meta=None):
    directory = Path(directory)
    spec_rows, meas_rows, dose_rows = [], [], []
    for s in dataset.specimens:
        c = s.conditions
        spec_rows.append([s.id, s.group_id, int(c.bp), float(c.nd), float(c.temp_c), float(c.rh)])
        meas_rows += [[s.id, float(t), float(y)] for t, y in zip(s.times, s.y)]
        dose_rows += [[s.id, float(t), float(d)] for t, d in zip(s.dosage.times, s.dosage.cumulative)]
    write_csv(directory / ACCEL_FILES["specimens"], SPECIMEN_HEADER, spec_rows, meta)
    write_csv(directory / ACCEL_FILES["measurements"], MEASUREMENT_HEADER, meas_rows, meta)
    write_csv(directory / ACCEL_FILES["dosage"], DOSAGE_HEADER, dose_rows, meta)
    return directory


def read_id_list(path):
    """Specimen ids, one per line; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ValidationError("file not found", path)
    out = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line)
    return out


# ---------------------------------------------------------------------------
# outdoor data
# ---------------------------------------------------------------------------


def ingest_covariates(path, specimen_id=None):
    """Outdoor weather records; empty fields become NaN (missing)."""
    path = Path(path)
    rows = read_csv(path, COVARIATE_HEADER)
    if not rows:
        raise ValidationError("no records", path)
    n = len(rows)
    ts = np.empty(n, dtype="datetime64[m]")
    cols = COVARIATE_HEADER[3:]
    for i, (lineno, r) in enumerate(rows):
        try:
            ts[i] = np.datetime64(r["timestamp_iso8601"].strip(), "m")
        except ValueError:
            raise ValidationError(f"bad timestamp {r['timestamp_iso8601']!r}", path, lineno) from None
        if i and ts[i] <= ts[i - 1]:
            raise ValidationError("timestamps must be strictly increasing", path, lineno)
    temp = _num_block(rows, ["temp_c"], path)[:, 0]
    rh = _num_block(rows, ["rh_pct"], path)[:, 0]
    dos = _num_block(rows, cols, path)
    bad = np.any(dos < 0, axis=1)
    if np.any(bad):
        raise ValidationError("negative dosage", path, rows[int(np.argmax(bad))][0])
    sid = specimen_id if specimen_id is not None else path.stem.replace("covariates_", "")
    return CovariateHistory(ts, temp, rh, dos, specimen_id=sid)


def emit_covariates(history, path, meta=None):
    values = np.column_stack([history.temp_c, history.rh_pct, history.dosage]).tolist()
    stamps = history.timestamps.astype(str).tolist()
    # plain floats skip the per-value type dispatch in ``fmt``
    rows = ([stamp, *(FLOAT_FMT.format(x) if x == x else "" for x in vals)] for stamp, vals in zip(stamps, values))
    return write_csv(path, COVARIATE_HEADER, rows, meta)


@dataclass(frozen=True)
class OutdoorRecord:
    id: str
    group_id: str
    times: np.ndarray
    y: np.ndarray


def ingest_outdoor_measurements(path):
    path = Path(path)
    rows = read_csv(path, OUTDOOR_HEADER)
    grouped = {}
    groups = {}
    for lineno, r in rows:
        sid = r["specimen_id"].strip()
        t = _num(r["time_h"], path, lineno, "time_h")
        y = _num(r["damage"], path, lineno, "damage")
        entry = grouped.setdefault(sid, ([], []))
        if entry[0] and t <= entry[0][-1]:
            raise ValidationError(f"specimen {sid}: time_h {t:g} is not after the previous value", path, lineno)
        entry[0].append(t)
        entry[1].append(y)
        groups[sid] = r["group_id"].strip()
    return {sid: OutdoorRecord(sid, groups[sid], np.array(t), np.array(y)) for sid, (t, y) in grouped.items()}


def emit_outdoor_measurements(records, path, meta=None):
    rows = []
    for rec in records:
        rows += [[rec.id, rec.group_id, float(t), float(y)] for t, y in zip(rec.times, rec.y)]
    return write_csv(path, OUTDOOR_HEADER, rows, meta)


def ingest_outdoor(directory):
    """``(histories, measurements)`` from an outdoor directory.

    The directory holds ``covariates_<id>.csv`` per specimen and an optional
    ``outdoor_measurements.csv``.
    """
    directory = Path(directory)
    files = sorted(directory.glob("covariates_*.csv"))
    if not files:
        raise ValidationError("no covariates_<id>.csv files", directory)
    histories = {}
    for f in files:
        h = ingest_covariates(f)
        histories[h.specimen_id] = h
    meas_path = directory / "outdoor_measurements.csv"
    meas = ingest_outdoor_measurements(meas_path) if meas_path.exists() else {}
    for sid in meas:
        if sid not in histories:
            raise ValidationError(f"measurements for {sid} have no covariate file", meas_path)
    return histories, meas


# ---------------------------------------------------------------------------
# prediction artefacts
# ---------------------------------------------------------------------------


def emit_band(band, path, meta=None):
    stamps = band.timestamps if band.timestamps is not None else band.times
    rows = [
        [str(s) if band.timestamps is not None else float(s), sc, p, lo, up]
        for s, sc, p, lo, up in zip(stamps, band.s_star_cum, band.point, band.lower, band.upper)
    ]
    return write_csv(path, PREDICTION_HEADER, rows, meta)


def emit_failures(summaries, path, meta=None):
    rows = [[f.specimen_id, f.point, f.lower, f.upper, f.multiple] for f in summaries]
    return write_csv(path, FAILURE_HEADER, rows, meta)


def emit_long(rows, path, meta=None):
    return write_csv(path, LONG_HEADER, rows, meta)


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------


def write_json(path, obj, meta=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(_plain(obj))
    doc.setdefault("format_version", FORMAT_VERSION)
    if meta is not None:
        doc["run_config"] = _plain(meta)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError("file not found", path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None


def fit_document(fit):
    doc = fit.to_dict()
    doc["combined_params"] = fit.params.as_dict()
    return doc


def load_fit(path):
    """CombinedFit from a document written by :func:`fit_document`."""
    doc = read_json(path)
    try:
        names = tuple(doc["covariance"]["names"])
        params = CombinedParams(**{k: float(v) for k, v in doc["combined_params"].items()})
        est = np.array([doc["parameters"][n]["estimate"] for n in names], dtype=float)
        return CombinedFit(
            names=names,
            estimates=est,
            full_covariance=np.array(doc["covariance"]["matrix"], dtype=float).reshape(len(names), len(names)),
            loglik=float(doc["loglik"]),
            n_params=int(doc["n_params"]),
            model_kind=doc["model_kind"],
            diagnostics=doc.get("diagnostics", {}),
            params=params,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"not a combined fit document ({exc})", path) from None
