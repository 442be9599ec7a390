#!/usr/bin/env python3
"""
LNSF binary field files.

Layout: magic b"LNSF", then little-endian u32 version, flags (bit 0 set = spectral),
three grid dims and the component count, followed by little-endian f64 data,
component-major and row-major per component. Spectral payloads interleave (re, im).
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .exceptions import FieldFormatError
from .spectral_field import FieldSeries, SpectralField, from_physical, to_physical
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

MAGIC = b"LNSF"
VERSION = 1
FLAG_SPECTRAL = 1
_HEADER = struct.Struct('<4sIIIIII')

PathLike = Union[str, Path]


def save_field(path: PathLike, f: SpectralField, physical: bool = False) -> Path:
    """Write a field as spectral coefficients, or as physical samples when physical=True"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    flags = 0 if physical else FLAG_SPECTRAL
    n0, n1, n2 = f.grid_dims
    header = _HEADER.pack(MAGIC, VERSION, flags, n0, n1, n2, f.n_components)
    if physical:
        payload = np.ascontiguousarray(to_physical(f), dtype='<f8')
    else:
        payload = np.ascontiguousarray(f.coeffs, dtype='<c16')

    with open(path, 'wb') as handle:
        handle.write(header)
        handle.write(payload.tobytes())
    return path


def load_field(path: PathLike) -> SpectralField:
    """Read an LNSF file back into a SpectralField"""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FieldFormatError(f"{path}: file shorter than the LNSF header")

    magic, version, flags, n0, n1, n2, n_components = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FieldFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FieldFormatError(f"{path}: unsupported LNSF version {version}")

    spectral = bool(flags & FLAG_SPECTRAL)
    count = n_components * n0 * n1 * n2
    dtype = np.dtype('<c16') if spectral else np.dtype('<f8')
    expected = _HEADER.size + count * dtype.itemsize
    if len(raw) != expected:
        raise FieldFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")

    data = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size).reshape((n_components, n0, n1, n2))
    if spectral:
        return SpectralField(data.astype(np.complex128))
    return from_physical(data.astype(float))


def save_series(directory: PathLike, name: str, series: FieldSeries, physical: bool = False) -> Path:
    """Write every slice of a series as name_XXXX.lnsf plus a name_times.csv index"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    series = series.materialize()
    files = []
    for i, f in enumerate(series.fields()):
        target = directory / f"{name}_{i:04d}.lnsf"
        save_field(target, f, physical=physical)
        files.append(target.name)
    write_csv(pd.DataFrame({'index': np.arange(len(series)), 't': series.times, 'file': files}),
              directory / f"{name}_times.csv")
    logger.info(f"Wrote {len(files)} slices of '{name}' to {directory}")
    return directory


def load_series(directory: PathLike, name: str) -> FieldSeries:
    """Read a series written by save_series"""
    directory = Path(directory)
    index_path = directory / f"{name}_times.csv"
    if not index_path.exists():
        raise FieldFormatError(f"{directory}: missing series index {index_path.name}")
    index = read_csv(index_path).sort_values('index')
    fields = [load_field(directory / file) for file in index['file']]
    return FieldSeries.from_fields(index['t'].to_numpy(), fields)
