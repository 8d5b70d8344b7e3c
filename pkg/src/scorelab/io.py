"""File formats.

Binary layout (datasets, samples, checkpoints)::

    b"SCLB"                  4-byte magic
    uint32 little-endian     header length H
    H bytes                  UTF-8 JSON header
    body                     little-endian float64, arrays concatenated in
                             header["arrays"] order, C-contiguous

The header always lists ``arrays`` as ``[[name, shape], ...]``.
CSV files are RFC-4180 with a mandatory header row and '.' decimals.
"""

import csv
import hashlib
import io as _io
import json
import struct

import numpy as np

from scorelab.schedule import NoisedDataset, Schedule

MAGIC = b"SCLB"


def write_binary(path, header, arrays):
    """Write ``arrays`` (name -> ndarray) after a JSON ``header``."""
    header = dict(header)
    header["arrays"] = [[name, list(np.shape(a))] for name, a in arrays.items()]
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_binary(path):
    """Return ``(header, {name: ndarray})``."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a scorelab binary file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        body = fh.read()
    out, offset = {}, 0
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(body):
        raise ValueError(f"{path}: body has {len(body) - offset} trailing bytes")
    return header, out


def save_dataset(path, ds):
    header = {
        "type": "dataset",
        "m": ds.m,
        "N": ds.n,
        "d": ds.d,
        "seed": ds.seed,
        "schedule_kind": ds.schedule.kind,
        "T": ds.schedule.horizon,
        "dependent": ds.dependent,
        "schedule": ds.schedule.to_dict(),
    }
    write_binary(path, header, {"x0": ds.x0, "x": ds.x})


def load_dataset(path):
    header, arrays = read_binary(path)
    if header.get("type") != "dataset":
        raise ValueError(f"{path}: not a dataset file")
    return NoisedDataset(
        arrays["x0"],
        arrays["x"],
        Schedule.from_dict(header["schedule"]),
        header["seed"],
        header.get("dependent", True),
    )


def fmt(v):
    """Shortest round-tripping text for a float (deterministic across runs)."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def csv_text(header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(csv_text(header, rows))


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def dataset_to_csv(path, ds):
    """Long-format CSV: one row per (trajectory, timestep)."""
    d = ds.d
    header = ["i", "j", "t"] + [f"x0_{k}" for k in range(d)] + [f"x_{k}" for k in range(d)] + [
        f"z_{k}" for k in range(d)
    ]
    rows = []
    for i in range(ds.m):
        for j in range(ds.n):
            z = ds.x[i, j] - np.exp(-ds.schedule.times[j]) * ds.x0[i]
            rows.append([i, j, ds.schedule.times[j], *ds.x0[i], *ds.x[i, j], *z])
    write_csv(path, header, rows)


def samples_to_csv(path, samples):
    samples = np.atleast_2d(samples)
    write_csv(path, [f"x_{k}" for k in range(samples.shape[1])], samples.tolist())


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
