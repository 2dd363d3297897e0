"""Binary containers for fields, velocities and sinograms, plus PGM export.

Every container is one ASCII header line followed by little-endian float64
values. Sinograms carry a second ASCII line holding the projection angles.
"""

from __future__ import annotations

import os
from typing import Tuple, Union

import numpy as np

from .flow import VelocityField
from .grid import GridSpec, ScalarField
from .radon import DEFAULT_DETECTOR_LENGTH, RadonGeometry, Sinogram, level_of_bins

PathLike = Union[str, os.PathLike]
_LE = np.dtype("<f8")
_MAX_HEADER = 1 << 16


class FormatError(ValueError):
    """A container could not be read; carries the path and the byte offset of the problem."""

    def __init__(self, path: PathLike, offset: int, reason: str):
        self.path = os.fspath(path)
        self.offset = offset
        self.reason = reason
        super().__init__(f"{self.path}: byte {offset}: {reason}")


def _read_bytes(path: PathLike) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read file ({exc.strerror})") from exc


def _line(path, raw: bytes, start: int) -> Tuple[str, int]:
    end = raw.find(b"\n", start, start + _MAX_HEADER)
    if end < 0:
        raise FormatError(path, start, "missing newline after header")
    try:
        return raw[start:end].decode("ascii"), end + 1
    except UnicodeDecodeError as exc:
        raise FormatError(path, start + exc.start, "header is not ASCII") from exc


def _header(path, raw: bytes, magic: str, types: tuple):
    text, offset = _line(path, raw, 0)
    tokens = text.split()
    if not tokens or tokens[0] != magic:
        raise FormatError(path, 0, f"expected magic {magic!r}")
    if len(tokens) != len(types) + 1:
        raise FormatError(path, 0, f"{magic} header needs {len(types)} fields, found {len(tokens) - 1}")
    values = []
    for tok, kind in zip(tokens[1:], types):
        try:
            values.append(kind(tok))
        except ValueError:
            raise FormatError(path, text.find(tok), f"bad header field {tok!r}") from None
    return values, offset


def _payload(path, raw: bytes, offset: int, count=None) -> np.ndarray:
    nbytes = len(raw) - offset
    if nbytes % 8:
        raise FormatError(path, len(raw) - nbytes % 8, "payload is not a whole number of float64 values")
    if count is not None and nbytes != 8 * count:
        at = offset + min(nbytes, 8 * count)
        raise FormatError(path, at, f"expected {count} values, found {nbytes // 8}")
    return np.frombuffer(raw, dtype=_LE, offset=offset).astype(float)


def _write(path: PathLike, header: str, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype=_LE).tobytes())


# -- fields ------------------------------------------------------------------


def write_field(path: PathLike, f: ScalarField) -> None:
    _write(path, f"TBIR-F {f.grid.n} {f.grid.m}\n", f.samples)


def read_field(path: PathLike) -> ScalarField:
    raw = _read_bytes(path)
    (n, m), offset = _header(path, raw, "TBIR-F", (int, int))
    try:
        grid = GridSpec(n, m)
    except ValueError as exc:
        raise FormatError(path, 0, str(exc)) from None
    values = _payload(path, raw, offset, grid.size)
    return ScalarField(grid, values)


# -- velocities --------------------------------------------------------------


def write_velocity(path: PathLike, v: VelocityField) -> None:
    g = v.grid
    _write(path, f"TBIR-V {g.n} {g.m} {g.pad} {v.m_t}\n", v.dofs)


def read_velocity(path: PathLike) -> VelocityField:
    raw = _read_bytes(path)
    (n, m, pad, m_t), offset = _header(path, raw, "TBIR-V", (int, int, int, int))
    try:
        grid = GridSpec(n, m, pad)
        size = VelocityField.size_for(grid, m_t)
    except ValueError as exc:
        raise FormatError(path, 0, str(exc)) from None
    values = _payload(path, raw, offset, size)
    try:
        return VelocityField(grid, m_t, values)
    except ValueError as exc:
        raise FormatError(path, offset, str(exc)) from None


# -- sinograms ---------------------------------------------------------------


def write_sinogram(path: PathLike, s: Sinogram) -> None:
    g = s.geometry
    angles = " ".join(repr(a) for a in g.angles)
    _write(path, f"TBIR-S {g.p} {g.q} {g.L!r}\n{angles}\n", s.samples)


def read_sinogram(path: PathLike) -> Sinogram:
    """Read a TBIR-S file.

    The slice count follows from the payload length. A bin count of the form
    ``1.5 * 2**k`` yields a level-``k`` geometry.
    """
    raw = _read_bytes(path)
    (p, q, L), offset = _header(path, raw, "TBIR-S", (int, int, float))
    line_start = offset
    text, offset = _line(path, raw, offset)
    try:
        angles = tuple(float(a) for a in text.split())
    except ValueError:
        raise FormatError(path, line_start, "angle line is not a list of numbers") from None
    if len(angles) != p:
        raise FormatError(path, line_start, f"header announces {p} angles, found {len(angles)}")
    try:
        geom = RadonGeometry(angles, q, L, level_of_bins(q))
    except ValueError as exc:
        raise FormatError(path, line_start, str(exc)) from None
    values = _payload(path, raw, offset)
    per_slice = p * q
    if values.size == 0 or values.size % per_slice:
        raise FormatError(path, offset, f"payload of {values.size} values is not a multiple of p*q = {per_slice}")
    return Sinogram(geom, values, values.size // per_slice)


def read_any(path: PathLike):
    """Dispatch on the magic word of ``path``."""
    raw = _read_bytes(path)
    magic = raw[:6]
    readers = {b"TBIR-F": read_field, b"TBIR-V": read_velocity, b"TBIR-S": read_sinogram}
    if magic not in readers:
        raise FormatError(path, 0, "unknown container (expected TBIR-F, TBIR-V or TBIR-S)")
    return readers[magic](path)


# -- viewing -----------------------------------------------------------------


def export_pgm(path: PathLike, data) -> None:
    """Write a 2D field or sinogram as a 16-bit binary PGM, min-max normalised.

    Fields are shown with ``x1`` running left to right and ``x2`` bottom to
    top; sinograms with one row per angle.
    """
    if isinstance(data, ScalarField):
        if data.grid.n != 2:
            raise ValueError("PGM export needs a 2D field")
        img = data.as_array().T[::-1]
    elif isinstance(data, Sinogram):
        if data.slices != 1:
            raise ValueError("PGM export needs single-slice data")
        img = data.as_array()
    else:
        img = np.asarray(data, dtype=float)
        if img.ndim != 2:
            raise ValueError("PGM export needs a 2D array")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo if hi > lo else 1.0
    pixels = np.rint((img - lo) / span * 65535).astype(">u2")
    rows, cols = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(pixels.tobytes())


__all__ = [
    "DEFAULT_DETECTOR_LENGTH",
    "FormatError",
    "export_pgm",
    "read_any",
    "read_field",
    "read_sinogram",
    "read_velocity",
    "write_field",
    "write_sinogram",
    "write_velocity",
]
