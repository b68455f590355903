"""File formats: plain CSV tables and a deterministic zip archive of arrays.

CSV files are comma separated with a header row; the first column is an
integer step index or an ISO-8601 timestamp and is not part of the data.
Column headers may carry a unit in square brackets, e.g. ``Te [degC]``.

Archives are zip containers holding ``.npy`` members plus ``manifest.json``.
Member timestamps are pinned so equal content gives equal bytes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import zipfile
from datetime import datetime

import numpy as np

ARCHIVE_FORMAT = "qbcal-archive"
ARCHIVE_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class DataFormatError(ValueError):
    """An input file does not follow the expected layout."""


def split_unit(header):
    """``"Te [degC]"`` -> ``("Te", "degC")``; headers without a unit give ``""``."""
    h = header.strip()
    if h.endswith("]") and "[" in h:
        name, unit = h[:-1].split("[", 1)
        return name.strip(), unit.strip()
    return h, ""


def _format(x):
    return repr(float(x))


def write_table(path, columns, data, index=None, index_name="step"):
    """Write a 2-D array with one header per column and a leading index column."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[1] != len(columns):
        raise ValueError("one header per data column is required")
    if not np.all(np.isfinite(data)):
        raise ValueError("refusing to write non-finite values")
    if index is None:
        index = range(data.shape[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([index_name, *columns])
        for i, row in zip(index, data):
            w.writerow([i, *map(_format, row)])


def _parse_index(token):
    try:
        return int(token)
    except ValueError:
        pass
    try:
        datetime.fromisoformat(token)
    except ValueError as exc:
        raise DataFormatError(f"first column must be a step index or timestamp: {token!r}") from exc
    return token


def read_table(path):
    """Return (headers, data, index) from a CSV written in the format above."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataFormatError(f"{path}: expected a header row and at least one data row")
    header = rows[0]
    if len(header) < 2:
        raise DataFormatError(f"{path}: no data columns")
    index, values = [], []
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise DataFormatError(f"{path}, line {k}: {len(r)} fields, header has {len(header)}")
        index.append(_parse_index(r[0].strip()))
        try:
            values.append([float(v) for v in r[1:]])
        except ValueError as exc:
            raise DataFormatError(f"{path}, line {k}: {exc}") from exc
    data = np.array(values, dtype=float)
    if not np.all(np.isfinite(data)):
        raise DataFormatError(f"{path}: non-finite values")
    return [h.strip() for h in header[1:]], data, index


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def array_sha256(a) -> str:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    return hashlib.sha256(a.tobytes()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


# -- archive ---------------------------------------------------------------

def _member(name):
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def save_archive(path, arrays: dict, manifest: dict):
    """Write ``arrays`` and ``manifest`` to a zip archive with fixed metadata."""
    manifest = dict(manifest, format=ARCHIVE_FORMAT, formatVersion=ARCHIVE_VERSION,
                    members=sorted(arrays))
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_member("manifest.json"),
                    json.dumps(manifest, sort_keys=True, indent=1, default=_json_default))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(_member(f"{name}.npy"), buf.getvalue())


def load_archive(path):
    """Return (arrays, manifest) from an archive written by :func:`save_archive`."""
    try:
        zf = zipfile.ZipFile(path, "r")
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataFormatError(f"cannot open archive {path}: {exc}") from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError as exc:
            raise DataFormatError(f"{path}: archive has no manifest") from exc
        if manifest.get("format") != ARCHIVE_FORMAT:
            raise DataFormatError(f"{path}: not a {ARCHIVE_FORMAT} file")
        if manifest.get("formatVersion", 0) > ARCHIVE_VERSION:
            raise DataFormatError(f"{path}: archive version {manifest['formatVersion']} "
                                  f"is newer than supported ({ARCHIVE_VERSION})")
        arrays = {}
        for name in manifest.get("members", []):
            with zf.open(f"{name}.npy") as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()),
                                                        allow_pickle=False)
    return arrays, manifest
