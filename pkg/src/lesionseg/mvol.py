"""MVOL: a minimal bit-exact binary volume file format.

Layout, all little-endian:

    offset  size  field
    0       4     magic "MVOL" (bytes 0x4D 0x56 0x4F 0x4C)
    4       4     format version, u32 (currently 1)
    8       12    dims x, y, z as 3 x u32
    20      12    spacing in mm as 3 x f32
    32      1     orientation code: 0 axial, 1 coronal, 2 sagittal
    33      1     dtype code: 0 = 32-bit float (the only one defined)
    34      2     reserved, must be zero
    36      ...   payload: x*y*z little-endian f32, x varying fastest

Writes go through a temp file and an atomic rename, so an interrupted run
never leaves a corrupt or partial file behind. Reads validate the header
and refuse truncated payloads rather than returning a partial volume.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .volume import ORIENTATIONS, Volume

MAGIC = b"MVOL"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIfffBB2s")

_ORIENT_TO_CODE = {name: i for i, name in enumerate(ORIENTATIONS)}


class MVolFormatError(ValueError):
    """The file is not a valid MVOL (bad magic, version, dtype, or header)."""


class MVolTruncationError(MVolFormatError):
    """The payload is shorter than the header declares."""


def write_mvol(path: str, volume: Volume) -> None:
    """Serialize a Volume; write_mvol then read_mvol is the identity."""
    x, y, z = volume.dims
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        x,
        y,
        z,
        *volume.spacing,
        _ORIENT_TO_CODE[volume.orientation],
        0,
        b"\x00\x00",
    )
    payload = volume.data.astype("<f4").tobytes(order="F")
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def read_mvol(path: str) -> Volume:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise MVolTruncationError(f"{path}: file shorter than the MVOL header")
    magic, version, x, y, z, sx, sy, sz, ocode, dtype, reserved = _HEADER.unpack_from(
        raw
    )
    if magic != MAGIC:
        raise MVolFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MVolFormatError(f"{path}: unsupported version {version}")
    if dtype != 0:
        raise MVolFormatError(f"{path}: unknown dtype code {dtype}")
    if ocode >= len(ORIENTATIONS):
        raise MVolFormatError(f"{path}: unknown orientation code {ocode}")
    if reserved != b"\x00\x00":
        raise MVolFormatError(f"{path}: reserved bytes are not zero")
    expected = x * y * z * 4
    payload = raw[_HEADER.size :]
    if len(payload) < expected:
        raise MVolTruncationError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    if len(payload) > expected:
        raise MVolFormatError(f"{path}: {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype="<f4").reshape((x, y, z), order="F")
    return Volume(data.astype(np.float32), (sx, sy, sz), ORIENTATIONS[ocode])
