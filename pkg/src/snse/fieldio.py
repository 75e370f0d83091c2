"""Binary field files with a JSON sidecar.

Layout of ``<name>.snsf`` (all integers little-endian ``uint32``):

=======  =====  =============================================
offset   size   content
=======  =====  =============================================
0        4      magic ``b"SNSF"``
4        4      format version (1)
8        4      dimension ``d``
12       4      points per axis ``n``
16       4      component count ``c``
20       4      flags (bit 0: divergence-free)
24       16 m   ``m = c * n**d`` complex coefficients, C order over
                ``(c, n, ..., n)``, each as ``float64`` real then
                imaginary part, little-endian
=======  =====  =============================================

Coefficients use the package convention (normalised by ``n**d``, FFT
ordering along every axis). The sidecar ``<name>.snsf.json`` repeats the
header and carries the SHA-256 of the binary file plus free metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .spectral import Grid, SpectralField

MAGIC = b"SNSF"
VERSION = 1
HEADER = struct.Struct("<4s5I")
FLAG_DIVERGENCE_FREE = 1


class FieldFormatError(ValueError):
    """Malformed or inconsistent field file."""


def encode_field(field: SpectralField) -> bytes:
    if field.batch_shape:
        raise FieldFormatError("only unbatched fields can be written")
    g = field.grid
    flags = FLAG_DIVERGENCE_FREE if field.divergence_free else 0
    header = HEADER.pack(MAGIC, VERSION, g.dim, g.n_per_axis, field.ncomp, flags)
    payload = np.ascontiguousarray(field.coeffs, dtype="<c16").tobytes()
    return header + payload


def decode_field(data: bytes) -> SpectralField:
    if len(data) < HEADER.size:
        raise FieldFormatError("file shorter than the header")
    magic, version, dim, n, ncomp, flags = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FieldFormatError(f"unsupported version {version}")
    grid = Grid(dim, n)
    count = ncomp * n ** dim
    if len(data) != HEADER.size + 16 * count:
        raise FieldFormatError(f"payload has {len(data) - HEADER.size} bytes, expected {16 * count}")
    coeffs = np.frombuffer(data, dtype="<c16", offset=HEADER.size).astype(complex)
    coeffs = coeffs.reshape((ncomp,) + grid.shape)
    return SpectralField(grid, coeffs, bool(flags & FLAG_DIVERGENCE_FREE))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def write_field(path, field: SpectralField, metadata: dict | None = None) -> str:
    """Write ``path`` and ``path.json``; return the SHA-256 of the binary file."""
    path = Path(path)
    data = encode_field(field)
    path.write_bytes(data)
    digest = sha256_bytes(data)
    side = {
        "format": "snsf",
        "version": VERSION,
        "dim": field.grid.dim,
        "n_per_axis": field.grid.n_per_axis,
        "ncomp": field.ncomp,
        "divergence_free": bool(field.divergence_free),
        "normalisation": "coefficients divided by n**dim",
        "sha256": digest,
        "metadata": metadata or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return digest


def read_field(path, check: bool = True) -> tuple[SpectralField, dict]:
    """Read a field and its sidecar (empty dict if the sidecar is missing).

    With ``check`` the sidecar's hash and header copy must match.
    """
    path = Path(path)
    data = path.read_bytes()
    field = decode_field(data)
    side_path = Path(str(path) + ".json")
    side = json.loads(side_path.read_text()) if side_path.exists() else {}
    if check and side:
        if side.get("sha256") != sha256_bytes(data):
            raise FieldFormatError("sidecar hash does not match the binary file")
        for key, val in (("dim", field.grid.dim), ("n_per_axis", field.grid.n_per_axis),
                         ("ncomp", field.ncomp)):
            if side.get(key) != val:
                raise FieldFormatError(f"sidecar {key}={side.get(key)} but header has {val}")
    return field, side
