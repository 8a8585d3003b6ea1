"""Binary and text interchange formats.

See FORMATS.md at the repository root for the byte-level layout.  Noise
slices and field snapshots share one 64-byte header followed by little-endian
float64 payload, row-major over (channel, lattice index).  Point clouds and
weighted measures use a whitespace-separated text format, one point per line
with an optional trailing weight column.
"""

from __future__ import annotations

import json
import struct
import subprocess
from pathlib import Path

import numpy as np

MAGIC = b"RZHTGRD1"
HEADER_STRUCT = struct.Struct("<8sIIQddQQQ")
assert HEADER_STRUCT.size == 64

__all__ = [
    "MAGIC",
    "write_lattice_payload",
    "read_lattice_payload",
    "write_noise_slice",
    "read_noise_slice",
    "write_field_snapshots",
    "build_manifest",
    "load_points_text",
    "save_points_text",
]


def write_lattice_payload(path, k, d, points, length, dt, seed, replica, step, values):
    """Write one lattice block: 64-byte header + float64 LE payload."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.shape != (d,) + (points,) * k:
        raise ValueError(f"payload shape {values.shape} inconsistent with header")
    header = HEADER_STRUCT.pack(MAGIC, k, d, points, float(length), float(dt),
                                seed & (2**64 - 1), replica, step)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())


def read_lattice_payload(path):
    """Read a lattice block; returns (header dict, values array)."""
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_STRUCT.size)
        magic, k, d, points, length, dt, seed, replica, step = HEADER_STRUCT.unpack(raw)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    values = payload.reshape((d,) + (points,) * k)
    header = dict(k=k, d=d, points=points, length=length, dt=dt, seed=seed,
                  replica=replica, step=step)
    return header, values


def write_noise_slice(path, slc, master_seed: int):
    replica, step = slc.seed_path
    g = slc.grid
    write_lattice_payload(path, g.k, slc.values.shape[0], g.points, g.length,
                          g.dt, master_seed, replica, step, slc.values)


def read_noise_slice(path):
    return read_lattice_payload(path)


def _build_description() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except Exception:
        pass
    from . import __version__

    return f"rieszheat-{__version__}"


def build_manifest(config_echo: dict, master_seed: int, extra: dict | None = None) -> dict:
    manifest = {
        "config": config_echo,
        "master_seed": master_seed,
        "build": _build_description(),
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_field_snapshots(directory, field, master_seed: int, config_echo: dict):
    """Dump each recorded time of a LatticeField plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    g = field.grid
    files = []
    for i, t in enumerate(field.times):
        name = f"snap_r{field.replica:05d}_t{i:04d}.bin"
        step = int(round(t / g.dt))
        write_lattice_payload(directory / name, g.k, field.data.shape[1], g.points,
                              g.length, g.dt, master_seed, field.replica, step,
                              field.data[i])
        files.append({"file": name, "time": t})
    manifest = build_manifest(config_echo, master_seed, {"snapshots": files})
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return directory / "manifest.json"


def load_points_text(path):
    """Load a point cloud: one point per line, optional trailing weight column.

    Returns (points, weights) where weights is None when absent.  Lines
    starting with '#' are comments; the weight column is detected from a
    '# columns: ... weight' header or by an explicit odd trailing column via
    keyword 'weight' marker being impossible to guess, so: every row must
    have the same width; pass ``weighted=True`` in the header comment
    '# weighted' to mark the last column as weights.
    """
    weighted = False
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "weighted" in line:
                    weighted = True
                continue
            rows.append([float(tok) for tok in line.split()])
    if not rows:
        raise ValueError(f"{path}: no points")
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: ragged rows")
    if weighted:
        if arr.shape[1] < 2:
            raise ValueError(f"{path}: weighted file needs >= 2 columns")
        return arr[:, :-1], arr[:, -1]
    return arr, None


def save_points_text(path, points, weights=None):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w") as fh:
        if weights is not None:
            fh.write("# weighted\n")
        for i, p in enumerate(points):
            cols = " ".join(repr(float(c)) for c in p)
            if weights is not None:
                cols += f" {float(weights[i])!r}"
            fh.write(cols + "\n")
