"""Binary file formats: PRTW checkpoints, PRTM meshes.

All integers little-endian. Checkpoints carry an explicit (name, shape,
offset) table followed by a float64 payload; meshes are indexed triangle
lists in float32/uint32.
"""

import hashlib
import struct

import numpy as np


class FormatError(ValueError):
    pass


PRTW_MAGIC = b"PRTW"
PRTW_VERSION = 1
PRTM_MAGIC = b"PRTM"
PRTM_VERSION = 1


def save_params(path, params):
    """params: dict name -> ndarray (float64). Deterministic byte layout."""
    names = sorted(params)
    table = b""
    payload = b""
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        nb = name.encode("utf-8")
        table += struct.pack("<H", len(nb)) + nb
        table += struct.pack("<B", arr.ndim)
        table += struct.pack(f"<{arr.ndim}I", *arr.shape)
        table += struct.pack("<Q", offset)
        payload += arr.tobytes()
        offset += arr.nbytes
    blob = PRTW_MAGIC + struct.pack("<II", PRTW_VERSION, len(names)) + table + payload
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def load_params(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PRTW_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != PRTW_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    entries = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            (offset,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            entries.append((name, tuple(shape), offset))
        params = {}
        for name, shape, offset in entries:
            size = int(np.prod(shape)) if shape else 1
            start = pos + offset
            if start + 8 * size > len(blob):
                raise FormatError("truncated checkpoint payload")
            params[name] = np.frombuffer(
                blob, dtype="<f8", count=size, offset=start).reshape(shape).copy()
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated checkpoint file: {exc}") from None
    return params


def params_fingerprint(path):
    """32-byte sha256 of the checkpoint file."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).digest()


def save_meshes(path, meshes):
    """meshes: list of (part_id, verts nx3, faces mx3)."""
    out = PRTM_MAGIC + struct.pack("<II", PRTM_VERSION, len(meshes))
    for pid, verts, faces in meshes:
        v = np.ascontiguousarray(verts, dtype="<f4")
        f = np.ascontiguousarray(faces, dtype="<u4")
        out += struct.pack("<III", int(pid), v.shape[0], f.shape[0])
        out += v.tobytes() + f.tobytes()
    with open(path, "wb") as fh:
        fh.write(out)


def load_meshes(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PRTM_MAGIC:
        raise FormatError(f"bad mesh magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != PRTM_VERSION:
        raise FormatError(f"unsupported mesh version {version}")
    pos = 12
    meshes = []
    for _ in range(count):
        pid, nv, nf = struct.unpack_from("<III", blob, pos)
        pos += 12
        v = np.frombuffer(blob, dtype="<f4", count=nv * 3, offset=pos).reshape(nv, 3)
        pos += nv * 12
        f = np.frombuffer(blob, dtype="<u4", count=nf * 3, offset=pos).reshape(nf, 3)
        pos += nf * 12
        meshes.append((int(pid), v.astype(np.float64), f.astype(np.int64)))
    return meshes
