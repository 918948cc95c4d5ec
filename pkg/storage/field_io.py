"""
Field I/O
Binary container for SpectralField dumps and CSV slices through the box.

Container layout (all little-endian):
    magic 'OUFIELD1' (8 bytes) | endianness tag 'LE' (2 bytes) | n (uint32)
    | N (uint32) | L (float64) | N^n complex values as interleaved re/im float64
"""

import os

import numpy as np
import pandas as pd

from engine.errors import GridMismatch
from engine.spectral_field import GridSpec, SpectralField

MAGIC = b"OUFIELD1"
ENDIAN_TAG = b"LE"
HEADER = np.dtype([("magic", "S8"), ("tag", "S2"), ("n", "<u4"), ("N", "<u4"), ("L", "<f8")])


def write_field(path: str, field: SpectralField) -> str:
    """Write one field; returns the path"""
    grid = field.grid
    header = np.array([(MAGIC, ENDIAN_TAG, grid.n, grid.N, grid.L)], dtype=HEADER)
    body = np.ascontiguousarray(field.values).astype("<c16")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'wb') as file:
        file.write(header.tobytes())
        file.write(body.view("<f8").tobytes())
    return path


def read_field(path: str) -> SpectralField:
    """
    Read a field written by write_field

    Raises:
        GridMismatch: the header is malformed or the payload size is wrong
    """
    with open(path, 'rb') as file:
        raw = file.read()
    if len(raw) < HEADER.itemsize:
        raise GridMismatch(f"{path}: truncated header")
    header = np.frombuffer(raw[:HEADER.itemsize], dtype=HEADER)[0]
    if header["magic"] != MAGIC or header["tag"] != ENDIAN_TAG:
        raise GridMismatch(f"{path}: not a field container")
    grid = GridSpec(n=int(header["n"]), L=float(header["L"]), N=int(header["N"]))
    payload = np.frombuffer(raw[HEADER.itemsize:], dtype="<f8")
    expected = 2 * grid.N ** grid.n
    if payload.size != expected:
        raise GridMismatch(f"{path}: expected {expected} doubles, found {payload.size}")
    values = payload.view("<c16").reshape(grid.shape)
    return SpectralField(grid, values)


def field_slice_frame(field: SpectralField, axis: int = 0) -> pd.DataFrame:
    """1-D slice through the box center as (x, re, im, abs) rows"""
    x, values = field.slice_1d(axis)
    return pd.DataFrame({"x": x, "re": values.real, "im": values.imag, "abs": np.abs(values)})


def write_field_slice(path: str, field: SpectralField, axis: int = 0) -> str:
    field_slice_frame(field, axis).to_csv(path, index=False, float_format="%.17g")
    return path
