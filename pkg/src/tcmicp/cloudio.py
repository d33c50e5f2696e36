"""Point cloud files: whitespace XYZ and PLY (ASCII or binary little-endian).

Every writer goes through :func:`atomic_write`, so a crash never leaves a
half-written file under the final name.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geometry import GeometryError, PointCloud

FORMATS = ("xyz", "ply", "ply-ascii")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class CloudFormatError(ValueError):
    """A cloud file could not be parsed. ``line`` is 1-based when known."""

    def __init__(self, path: str | os.PathLike, message: str, line: int | None = None):
        where = f"{path}" if line is None else f"{path}, line {line}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to a temporary file next to ``path``, then rename it into place."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


# -- reading ---------------------------------------------------------------------

def read_cloud(path: str | os.PathLike, id: str | None = None) -> PointCloud:
    """Load an XYZ or PLY file; the format is sniffed from the first bytes."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    pts = _read_ply(path, raw) if raw.startswith(b"ply") else _read_xyz(path, raw)
    if len(pts) == 0:
        raise CloudFormatError(path, "no points")
    try:
        return PointCloud(pts, str(path) if id is None else id)
    except GeometryError as exc:
        raise CloudFormatError(path, str(exc)) from exc


def _read_xyz(path: Path, raw: bytes) -> NDArray[np.float64]:
    rows = []
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CloudFormatError(path, "not a text file") from exc
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 3:
            raise CloudFormatError(path, f"expected 'x y z', got {line!r}", no)
        try:
            rows.append([float(v) for v in parts[:3]])
        except ValueError:
            raise CloudFormatError(path, f"bad number in {line!r}", no) from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _read_ply(path: Path, raw: bytes) -> NDArray[np.float64]:
    # header is ASCII, terminated by "end_header" and a newline
    elements: list[tuple[str, int, list[tuple[str, str | None, str]]]] = []
    fmt = None
    pos = 0
    no = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise CloudFormatError(path, "header not terminated", no + 1)
        no += 1
        line = raw[pos:end].decode("ascii", "replace").strip()
        pos = end + 1
        words = line.split()
        if no == 1:
            if line != "ply":
                raise CloudFormatError(path, "missing 'ply' magic", no)
            continue
        if not words or words[0] in ("comment", "obj_info"):
            continue
        key = words[0]
        if key == "format":
            if len(words) != 3 or words[1] not in ("ascii", "binary_little_endian"):
                raise CloudFormatError(path, f"unsupported format {line!r}", no)
            fmt = words[1]
        elif key == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise CloudFormatError(path, f"bad element line {line!r}", no)
            elements.append((words[1], int(words[2]), []))
        elif key == "property":
            if not elements:
                raise CloudFormatError(path, "property before any element", no)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise CloudFormatError(path, f"unknown type in {line!r}", no)
                elements[-1][2].append((words[3], words[2], words[4]))
            elif len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1][2].append((words[1], None, words[2]))
            else:
                raise CloudFormatError(path, f"bad property line {line!r}", no)
        elif key == "end_header":
            break
        else:
            raise CloudFormatError(path, f"unknown header keyword {key!r}", no)
    if fmt is None:
        raise CloudFormatError(path, "no format line")
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise CloudFormatError(path, "no vertex element")
    vprops = [p[2] for p in elements[names.index("vertex")][2]]
    for axis in "xyz":
        if axis not in vprops:
            raise CloudFormatError(path, f"vertex element lacks property {axis!r}")
    if fmt == "ascii":
        return _ply_ascii(path, raw[pos:], elements, no)
    return _ply_binary(path, raw[pos:], elements)


def _ply_ascii(path, body: bytes, elements, header_lines: int) -> NDArray[np.float64]:
    lines = body.decode("ascii", "replace").splitlines()
    row = 0
    for name, count, props in elements:
        if name != "vertex":
            row += count  # every element record is one line in ASCII PLY
            continue
        cols = [p[2] for p in props]
        idx = [cols.index(a) for a in "xyz"]
        if any(props[i][1] is not None for i in range(max(idx) + 1)):
            raise CloudFormatError(path, "list property before a vertex coordinate")
        out = np.empty((count, 3))
        for k in range(count):
            no = header_lines + row + k + 1
            if row + k >= len(lines):
                raise CloudFormatError(path, "file ends inside the vertex list", no)
            parts = lines[row + k].split()
            try:
                out[k] = [float(parts[i]) for i in idx]
            except (ValueError, IndexError):
                raise CloudFormatError(path, f"bad vertex record {lines[row + k]!r}", no) from None
        return out
    raise AssertionError("vertex element vanished")


def _ply_binary(path, body: bytes, elements) -> NDArray[np.float64]:
    offset = 0
    for name, count, props in elements:
        if any(p[1] is not None for p in props):
            raise CloudFormatError(path, f"list properties in binary element {name!r} are not supported")
        dtype = np.dtype([(p[2], "<" + _PLY_TYPES[p[0]]) for p in props])
        if name != "vertex":
            offset += count * dtype.itemsize
            continue
        need = count * dtype.itemsize
        if offset + need > len(body):
            raise CloudFormatError(path, f"vertex data truncated ({len(body) - offset} of {need} bytes)")
        rec = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
        return np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
    raise AssertionError("vertex element vanished")


# -- writing ---------------------------------------------------------------------

def format_for(path: str | os.PathLike) -> str:
    """Binary PLY for ``.ply`` paths, XYZ otherwise."""
    return "ply" if str(path).lower().endswith(".ply") else "xyz"


def encode_cloud(cloud: PointCloud, fmt: str = "xyz") -> bytes:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    pts = cloud.points
    if fmt == "xyz":
        return "".join(f"{x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in pts.tolist()).encode()
    kind = "ascii" if fmt == "ply-ascii" else "binary_little_endian"
    header = (
        f"ply\nformat {kind} 1.0\nelement vertex {len(pts)}\n"
        "property double x\nproperty double y\nproperty double z\nend_header\n"
    ).encode("ascii")
    if fmt == "ply-ascii":
        return header + encode_cloud(cloud, "xyz")
    return header + np.ascontiguousarray(pts, dtype="<f8").tobytes()


def write_cloud(cloud: PointCloud, path: str | os.PathLike, fmt: str | None = None) -> None:
    """Write ``cloud`` atomically; ``fmt`` defaults to :func:`format_for`."""
    atomic_write(path, encode_cloud(cloud, fmt or format_for(path)))
