"""Persistence for SPD matrices, dictionaries, datasets, codes and manifests.

Binary containers are little-endian: a four-byte magic, ``u32`` header
fields, then row-major ``f64`` entries.

========  ==========================  ==================================
magic     header                      payload
========  ==========================  ==================================
``SPD1``  dim                         one matrix
``SPDD``  dim, n_atoms                n_atoms matrices (order preserved)
``SPDS``  dim, count                  count matrices, then count ``i32``
========  ==========================  ==================================

JSON forms carry the same content with flat row-major ``entries`` lists.
Symmetry is re-enforced on every load.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .datasets import LabeledDataset
from .linalg import check_spd, sym


class FormatError(ValueError):
    pass


def _is_json(path):
    return Path(path).suffix.lower() == ".json"


def _read_header(buf, magic, n_fields):
    if buf[:4] != magic:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {magic!r}")
    end = 4 + 4 * n_fields
    if len(buf) < end:
        raise FormatError("truncated header")
    return struct.unpack(f"<{n_fields}I", buf[4:end]), end


def _read_matrices(buf, offset, count, dim):
    nbytes = 8 * count * dim * dim
    if len(buf) < offset + nbytes:
        raise FormatError("truncated payload")
    arr = np.frombuffer(buf, dtype="<f8", count=count * dim * dim, offset=offset)
    return arr.reshape(count, dim, dim).astype(np.float64), offset + nbytes


def _as_le_bytes(mats):
    return np.ascontiguousarray(mats, dtype="<f8").tobytes()


# -- single matrix ------------------------------------------------------


def spd_to_json(X):
    X = np.asarray(X, dtype=np.float64)
    return {"dim": int(X.shape[0]), "entries": X.ravel().tolist()}


def spd_from_json(obj):
    d = int(obj["dim"])
    entries = np.asarray(obj["entries"], dtype=np.float64)
    if entries.size != d * d:
        raise FormatError(f"expected {d * d} entries, got {entries.size}")
    return check_spd(sym(entries.reshape(d, d)))


def save_spd(path, X):
    X = check_spd(X)
    if _is_json(path):
        Path(path).write_text(json.dumps(spd_to_json(X)))
    else:
        Path(path).write_bytes(b"SPD1" + struct.pack("<I", X.shape[0]) + _as_le_bytes(X))


def load_spd(path):
    if _is_json(path):
        return spd_from_json(json.loads(Path(path).read_text()))
    buf = Path(path).read_bytes()
    (d,), off = _read_header(buf, b"SPD1", 1)
    mats, _ = _read_matrices(buf, off, 1, d)
    return check_spd(sym(mats[0]))


# -- dictionary ---------------------------------------------------------


def save_dictionary(path, D):
    D = np.stack([check_spd(B, f"atom {i}") for i, B in enumerate(np.asarray(D))])
    n, d, _ = D.shape
    if _is_json(path):
        obj = {"dim": d, "n_atoms": n, "atoms": [B.ravel().tolist() for B in D]}
        Path(path).write_text(json.dumps(obj))
    else:
        Path(path).write_bytes(b"SPDD" + struct.pack("<II", d, n) + _as_le_bytes(D))


def load_dictionary(path):
    if _is_json(path):
        obj = json.loads(Path(path).read_text())
        d, n = int(obj["dim"]), int(obj["n_atoms"])
        if len(obj["atoms"]) != n:
            raise FormatError("n_atoms does not match the atom list")
        return np.stack([spd_from_json({"dim": d, "entries": a}) for a in obj["atoms"]])
    buf = Path(path).read_bytes()
    (d, n), off = _read_header(buf, b"SPDD", 2)
    mats, _ = _read_matrices(buf, off, n, d)
    return np.stack([check_spd(sym(B), f"atom {i}") for i, B in enumerate(mats)])


# -- dataset ------------------------------------------------------------


def save_dataset(path, dataset):
    mats = np.asarray(dataset.matrices, dtype=np.float64)
    count, d, _ = mats.shape
    if _is_json(path):
        obj = {
            "dim": d,
            "count": count,
            "matrices": [X.ravel().tolist() for X in mats],
            "labels": [int(v) for v in dataset.labels],
            "splits": {k: [int(i) for i in v] for k, v in dataset.splits.items()},
        }
        Path(path).write_text(json.dumps(obj))
        return
    labels = np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes()
    Path(path).write_bytes(b"SPDS" + struct.pack("<II", d, count) + _as_le_bytes(mats) + labels)


def load_dataset(path, splits=None):
    """Load a dataset container.

    The binary container holds no splits; pass them explicitly (for example
    from the ``splits.json`` written next to it by the CLI).
    """
    if _is_json(path):
        obj = json.loads(Path(path).read_text())
        d, count = int(obj["dim"]), int(obj["count"])
        mats = np.asarray(obj["matrices"], dtype=np.float64).reshape(count, d, d)
        labels = np.asarray(obj["labels"], dtype=np.int32)
        splits = obj.get("splits", {}) if splits is None else splits
    else:
        buf = Path(path).read_bytes()
        (d, count), off = _read_header(buf, b"SPDS", 2)
        mats, off = _read_matrices(buf, off, count, d)
        if len(buf) < off + 4 * count:
            raise FormatError("truncated labels")
        labels = np.frombuffer(buf, dtype="<i4", count=count, offset=off).astype(np.int32)
    mats = np.stack([check_spd(sym(X), f"matrix {i}") for i, X in enumerate(mats)]) if count else mats
    return LabeledDataset(mats, labels, splits or {})


# -- codes and manifests ------------------------------------------------


def write_codes(path, rows):
    """Write one JSON object per line.

    Each row carries ``index``, ``label``, ``coeffs``, ``objective``,
    ``iterations`` and ``wall_ms``.
    """
    with open(path, "w") as fh:
        for row in rows:
            out = dict(row)
            out["coeffs"] = [float(v) for v in np.asarray(out["coeffs"]).ravel()]
            fh.write(json.dumps(out) + "\n")


def read_codes(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                row = json.loads(line)
                row["coeffs"] = np.asarray(row["coeffs"], dtype=np.float64)
                rows.append(row)
    return rows


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
