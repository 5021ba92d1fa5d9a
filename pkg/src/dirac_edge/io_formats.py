"""Binary array dumps and CSV tables.

Binary layout (little endian): int64 ndim, ndim x int64 dims, then the data
as float64 in row-major order. Complex arrays are stored as real arrays with
a trailing dimension of length 2 (real, imaginary).
"""

import csv
import json

import numpy as np


def write_array(path, arr):
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        arr = np.stack([arr.real, arr.imag], axis=-1)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    with open(path, "wb") as f:
        f.write(np.array([arr.ndim], dtype="<i8").tobytes())
        f.write(np.array(arr.shape, dtype="<i8").tobytes())
        f.write(arr.tobytes(order="C"))


def read_array(path, complex_=False):
    with open(path, "rb") as f:
        ndim = int(np.frombuffer(f.read(8), dtype="<i8")[0])
        shape = tuple(int(v) for v in np.frombuffer(f.read(8 * ndim), dtype="<i8"))
        data = np.frombuffer(f.read(), dtype="<f8")
    arr = data.reshape(shape)
    if complex_:
        if shape[-1] != 2:
            raise ValueError("complex dump needs a trailing dimension of 2")
        arr = arr[..., 0] + 1j * arr[..., 1]
    return arr


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def _default(o):
    if isinstance(o, np.ndarray):
        if np.iscomplexobj(o):
            return {"real": o.real.tolist(), "imag": o.imag.tolist()}
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (complex, np.complexfloating)):
        return {"real": float(o.real), "imag": float(o.imag)}
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, default=_default, sort_keys=True)
        f.write("\n")
