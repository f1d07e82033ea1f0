"""Dataset readers, CSV writers and provenance sidecars.

Every writer is atomic: it writes to a temporary file in the destination
directory and renames it into place, so an interrupted write never leaves a
partial file at the target path. Floats are written with 12 significant
digits.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .engine import OpessResult
from .models import Dataset

__all__ = [
    "ROW_COLUMNS",
    "HIST_COLUMNS",
    "Provenance",
    "ResultEnvelope",
    "config_digest",
    "canonical_json",
    "read_dataset",
    "format_float",
    "atomic_write_text",
    "rows_to_csv",
    "histogram_to_csv",
    "read_rows_csv",
    "read_histogram_csv",
    "write_result",
    "bins_to_csv",
    "read_metadata",
    "metadata_path",
]

ROW_COLUMNS = (
    "dataset_id",
    "xstat",
    "mopess",
    "q05",
    "q50",
    "q95",
    "mean_min_distance",
    "boundary_fraction",
)
HIST_COLUMNS = ("m_n", "count", "frequency")

_FAMILIES = ("gaussian", "bernoulli", "regression")


def format_float(x) -> str:
    return format(float(x), ".12g")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_digest(config) -> str:
    """SHA-256 of the canonical JSON form of ``config`` (a plain mapping)."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Provenance:
    version: str
    seed: int
    config_digest: str
    timestamp: Optional[str] = None
    S: Optional[int] = None
    L: Optional[int] = None

    @classmethod
    def create(cls, config, seed: int, S=None, L=None) -> "Provenance":
        """Provenance for ``config``; the timestamp is taken from
        ``SOURCE_DATE_EPOCH`` when set and omitted otherwise, which keeps
        reruns byte-identical."""
        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        stamp = None
        if epoch is not None:
            from datetime import datetime, timezone

            stamp = datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
        return cls(__version__, int(seed), config_digest(config), stamp, S, L)


@dataclass
class ResultEnvelope:
    """A payload to persist: an :class:`OpessResult`, a list of study rows,
    or a histogram, plus provenance."""

    payload: object
    provenance: Provenance


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------


def read_dataset(path, family: str) -> Dataset:
    """Read one observation per line (``x,y`` per line for regression).

    Blank lines and ``#`` comments are skipped. Malformed lines raise
    ``ValueError`` naming the line number.
    """
    if family not in _FAMILIES:
        raise ValueError(f"family must be one of {_FAMILIES}")
    path = Path(path)
    xs, ys = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            want = 2 if family == "regression" else 1
            if len(fields) != want:
                raise ValueError(f"{path}:{lineno}: expected {want} value(s), got {len(fields)}")
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
            if not all(np.isfinite(vals)):
                raise ValueError(f"{path}:{lineno}: value must be finite")
            if family == "bernoulli" and vals[0] not in (0.0, 1.0):
                raise ValueError(f"{path}:{lineno}: bernoulli value must be 0 or 1, got {fields[0]}")
            if family == "regression":
                xs.append(vals[0])
            ys.append(vals[-1])
    if not ys:
        raise ValueError(f"{path}: no observations")
    return Dataset(np.array(ys), np.array(xs) if family == "regression" else None)


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _extra_columns(rows):
    cols = []
    for row in rows:
        for key in row.extra:
            if key not in cols:
                cols.append(key)
    return cols


def rows_to_csv(rows) -> str:
    """Study rows (objects with the :data:`ROW_COLUMNS` attributes and an
    ``extra`` mapping) as CSV text. Extra columns follow the fixed ones."""
    rows = list(rows)
    extra = _extra_columns(rows)
    body = []
    for row in rows:
        vals = [str(int(row.dataset_id))]
        vals += [format_float(getattr(row, c)) for c in ROW_COLUMNS[1:]]
        vals += [format_float(row.extra[c]) for c in extra]
        body.append(vals)
    return _csv_text(list(ROW_COLUMNS) + extra, body)


def histogram_to_csv(values, counts, theory_pmf=None) -> str:
    values = np.asarray(values, dtype=int)
    counts = np.asarray(counts, dtype=int)
    freq = counts / counts.sum()
    header = list(HIST_COLUMNS) + (["theory_pmf"] if theory_pmf is not None else [])
    body = []
    for i in range(values.size):
        line = [str(values[i]), str(counts[i]), format_float(freq[i])]
        if theory_pmf is not None:
            line.append(format_float(theory_pmf[i]))
        body.append(line)
    return _csv_text(header, body)


BIN_COLUMNS = ("bin", "x_lo", "x_hi", "x_mean", "count", "mopess_mean", "q05", "q50", "q95")


def bins_to_csv(bins) -> str:
    """Binned study summaries (harness ``BinSummary``) as CSV text."""
    body = []
    for i, b in enumerate(bins):
        body.append([str(i), format_float(b.x_lo), format_float(b.x_hi), format_float(b.x_mean),
                     str(int(b.count)), format_float(b.mopess_mean), format_float(b.q05),
                     format_float(b.q50), format_float(b.q95)])
    return _csv_text(BIN_COLUMNS, body)


def read_rows_csv(path):
    """Inverse of :func:`rows_to_csv`; returns harness ``StudyRow`` objects."""
    from .harness import StudyRow

    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if tuple(header[: len(ROW_COLUMNS)]) != ROW_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        extra = header[len(ROW_COLUMNS):]
        rows = []
        for rec in reader:
            rows.append(StudyRow(
                dataset_id=int(rec["dataset_id"]),
                **{c: float(rec[c]) for c in ROW_COLUMNS[1:]},
                extra={c: float(rec[c]) for c in extra},
            ))
    return rows


def read_histogram_csv(path):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        recs = list(reader)
    values = np.array([int(r["m_n"]) for r in recs], dtype=int)
    counts = np.array([int(r["count"]) for r in recs], dtype=int)
    theory = None
    if recs and "theory_pmf" in recs[0]:
        theory = np.array([float(r["theory_pmf"]) for r in recs])
    return values, counts, theory


def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _result_row(result: OpessResult, xstat: float):
    from .harness import StudyRow

    return StudyRow(0, float(xstat), result.mopess, result.quantiles[0.05], result.quantiles[0.5],
                    result.quantiles[0.95], result.mean_min_distance, result.boundary_fraction)


def write_result(env: ResultEnvelope, path, xstat: float = float("nan")) -> list:
    """Write ``env`` as CSV plus a ``.meta.json`` sidecar; returns the paths.

    An :class:`OpessResult` becomes a one-row summary CSV plus a histogram
    CSV (``<stem>_pmf.csv``); a list of study rows becomes one CSV; a
    histogram (harness ``Histogram``) becomes a histogram CSV.
    """
    path = Path(path)
    payload = env.payload
    written = []
    meta = {"provenance": asdict(env.provenance)}
    if isinstance(payload, OpessResult):
        atomic_write_text(path, rows_to_csv([_result_row(payload, xstat)]))
        written.append(path)
        values, counts = payload.histogram()
        pmf_path = path.with_name(path.stem + "_pmf" + path.suffix)
        atomic_write_text(pmf_path, histogram_to_csv(values, counts))
        written.append(pmf_path)
        meta["result"] = {"n": payload.n, "S": payload.S, "L": payload.L, "seed": payload.seed}
    elif hasattr(payload, "counts") and hasattr(payload, "values"):
        atomic_write_text(path, histogram_to_csv(payload.values, payload.counts,
                                                 getattr(payload, "theory_pmf", None)))
        written.append(path)
    else:
        atomic_write_text(path, rows_to_csv(payload))
        written.append(path)
    meta_file = metadata_path(path)
    atomic_write_text(meta_file, json.dumps(meta, sort_keys=True, indent=2) + "\n")
    written.append(meta_file)
    return written


def read_metadata(path) -> dict:
    return json.loads(metadata_path(path).read_text(encoding="utf-8"))
