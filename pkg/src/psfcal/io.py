"""File formats: 16-bit PNG, little-endian PFM, kernel JSON and PSF-field directories."""
import json
import os

import cv2
import numpy as np

from .errors import InvalidInput
from .imagecore import validate_kernel

# ------------------------------------------------------------------ PNG


def write_png16(path, img):
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.round(img * 65535.0).astype(np.uint16)
    if data.ndim == 3:
        data = data[..., ::-1]  # cv2 stores BGR
    if not cv2.imwrite(str(path), data):
        raise OSError(f"could not write {path}")


def read_png(path):
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise OSError(f"could not read {path}")
    scale = 65535.0 if data.dtype == np.uint16 else 255.0
    img = data.astype(np.float64) / scale
    if img.ndim == 3:
        img = img[..., :3][..., ::-1]
    return np.ascontiguousarray(img)


# ------------------------------------------------------------------ PFM


def write_pfm(path, img):
    """Little-endian PFM; rows are stored bottom-to-top as the format requires."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        header = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = "PF"
    else:
        raise InvalidInput("PFM holds 1 or 3 channels")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(img).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        header = f.readline().strip()
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        ch = 3 if header == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * ch)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_flow_pfm(path, flow):
    """Two displacement planes packed as a 3-channel PFM (third plane zero)."""
    write_pfm(path, np.stack([flow.dx, flow.dy, np.zeros_like(flow.dx)], axis=-1))


def write_flow_csv(path, flow, step=1):
    h, w = flow.shape
    with open(path, "w") as f:
        f.write("x,y,dx,dy\n")
        for y in range(0, h, step):
            for x in range(0, w, step):
                f.write(f"{x},{y},{float(flow.dx[y, x])!r},{float(flow.dy[y, x])!r}\n")


# --------------------------------------------------------------- kernels


def kernel_to_dict(k):
    k = np.asarray(k, dtype=np.float64)
    return {"side": int(k.shape[0]), "data": [float(v) for v in k.ravel()]}


def kernel_from_dict(d):
    side = int(d["side"])
    data = np.asarray(d["data"], dtype=np.float64)
    if data.size != side * side:
        raise InvalidInput("kernel JSON data length does not match side")
    return validate_kernel(data.reshape(side, side))


def write_kernel_json(path, k):
    with open(path, "w") as f:
        json.dump(kernel_to_dict(k), f)


def read_kernel_json(path):
    with open(path) as f:
        return kernel_from_dict(json.load(f))


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def read_json(path):
    with open(path) as f:
        return json.load(f)


def _kernel_name(i, j, c):
    return f"k_r{i:02d}_c{j:02d}_ch{c}.json"


def write_psf_field(directory, field):
    """Write ``index.json`` plus one kernel JSON per valid cell under ``kernels/``."""
    os.makedirs(os.path.join(directory, "kernels"), exist_ok=True)
    rows, cols = field.grid
    cells = []
    for i in range(rows):
        for j in range(cols):
            for c in range(field.channels):
                entry = {"row": i, "col": j, "channel": c, "valid": bool(field.valid[i, j, c])}
                if field.field_pos is not None:
                    entry["field_pos"] = [float(x) for x in field.field_pos[i, j]]
                if field.valid[i, j, c]:
                    name = _kernel_name(i, j, c)
                    write_kernel_json(os.path.join(directory, "kernels", name), field.kernels[i, j, c])
                    entry["file"] = f"kernels/{name}"
                cells.append(entry)
    index = {"rows": rows, "cols": cols, "channels": field.channels, "side": field.side, "cells": cells}
    if field.diagnostics:
        index["diagnostics"] = field.diagnostics
    write_json(os.path.join(directory, "index.json"), index)


def read_psf_field(directory):
    from .optics_sim import PsfField

    index = read_json(os.path.join(directory, "index.json"))
    rows, cols, ch, side = index["rows"], index["cols"], index["channels"], index["side"]
    kernels = np.zeros((rows, cols, ch, side, side))
    valid = np.zeros((rows, cols, ch), dtype=bool)
    pos = np.zeros((rows, cols, 2))
    has_pos = False
    for cell in index["cells"]:
        i, j, c = cell["row"], cell["col"], cell["channel"]
        if "field_pos" in cell:
            pos[i, j] = cell["field_pos"]
            has_pos = True
        if cell.get("valid") and "file" in cell:
            kernels[i, j, c] = read_kernel_json(os.path.join(directory, cell["file"]))
            valid[i, j, c] = True
    return PsfField(kernels, valid, pos if has_pos else None, index.get("diagnostics", {}))


def write_raw(path, raw):
    """16-bit single-channel PNG plus a JSON sidecar naming the CFA layout."""
    write_png16(path, raw.data)
    write_json(str(path) + ".json", {"pattern": raw.pattern})


def read_raw(path):
    from .sensor import RawMosaic

    side = str(path) + ".json"
    pattern = read_json(side)["pattern"] if os.path.exists(side) else "RGGB"
    data = read_png(path)
    if data.ndim == 3:
        raise InvalidInput(f"{path} is not a single-channel mosaic")
    return RawMosaic(data, pattern)
