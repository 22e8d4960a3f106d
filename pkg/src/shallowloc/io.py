"""
File formats: WAV records, curve tables, spectrogram rasters and JSON.

Raster layout (little-endian)::

    offset  type        content
    0       4 bytes     magic b"SLRS"
    4       uint32      format version (1)
    8       uint32      number of time rows, M
    12      uint32      number of frequency columns, K
    16      float64[M]  frame times, s
    ...     float64[K]  frequencies, Hz
    ...     float64[MK] power, row-major (one row per time)
"""

from __future__ import annotations

import csv
import json
import math
import struct
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .curves import DispersionCurveSet, ModeCurve
from .waveguide import TimeSeries

__all__ = [
    "InputFileError",
    "CURVE_COLUMNS",
    "RASTER_MAGIC",
    "write_wav",
    "read_wav",
    "write_curves_csv",
    "read_curves_csv",
    "curves_roundtrip",
    "write_raster",
    "read_raster",
    "write_json",
    "read_json",
]

CURVE_COLUMNS = ("mode", "freq_hz", "t_app_s", "ridge_power", "valid")
RASTER_MAGIC = b"SLRS"
_RASTER_VERSION = 1


class InputFileError(ValueError):
    """An input file that cannot be parsed (corrupt, truncated or malformed)."""


def write_wav(path, ts):
    """Write a record as 64-bit float WAV, which round-trips exactly.

    The sample rate must be an integer number of hertz.
    """
    rate = int(round(ts.sample_rate))
    if rate != ts.sample_rate:
        raise ValueError(f"WAV needs an integer sample rate, got {ts.sample_rate}")
    wavfile.write(str(path), rate, np.ascontiguousarray(ts.samples, dtype=np.float64))


def _to_float(data):
    if data.dtype.kind == "f":
        return data.astype(np.float64)
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    bits = data.dtype.itemsize * 8
    # 24-bit files are read left-justified into int32
    return data.astype(np.float64) / float(2 ** (bits - 1))


def read_wav(path, target_rate=None):
    """Read a mono WAV file.

    Integer PCM is scaled to [-1, 1).  With ``target_rate`` the record is
    resampled by a rational polyphase filter unless it already has that rate.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", wavfile.WavFileWarning)
        try:
            rate, data = wavfile.read(str(path))
        except (ValueError, struct.error, EOFError) as exc:
            raise InputFileError(f"{path}: unreadable WAV file ({exc})") from None
    for w in caught:
        if "EOF" in str(w.message):
            raise InputFileError(f"{path}: truncated WAV file ({w.message})")
    if data.ndim != 1:
        if data.shape[1] != 1:
            raise InputFileError(f"{path}: expected a mono recording, found {data.shape[1]} channels")
        data = data[:, 0]
    x = _to_float(data)
    fs = float(rate)
    if target_rate is not None and not math.isclose(fs, target_rate):
        ratio = Fraction(target_rate / fs).limit_denominator(1000)
        x = resample_poly(x, ratio.numerator, ratio.denominator)
        fs = fs * ratio.numerator / ratio.denominator
    return TimeSeries(x, fs)


def write_curves_csv(path, curves):
    """One row per (mode, frequency); invalid rows keep an empty time."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for n in curves:
            c = curves[n]
            for f, t, pw, v in zip(c.freq_hz, c.t_app, c.ridge_power, c.valid):
                w.writerow([n, repr(float(f)), repr(float(t)) if v else "",
                            repr(float(pw)), int(bool(v))])


def read_curves_csv(path):
    """Inverse of :func:`write_curves_csv`."""
    rows = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        missing = set(CURVE_COLUMNS) - set(r.fieldnames or ())
        if missing:
            raise InputFileError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(r, start=2):
            try:
                n = int(row["mode"])
                valid = bool(int(row["valid"]))
                t = float(row["t_app_s"]) if valid else np.nan
                item = (float(row["freq_hz"]), t, float(row["ridge_power"]), valid)
            except (TypeError, ValueError):
                raise InputFileError(f"{path}: malformed row on line {line}") from None
            rows.setdefault(n, []).append(item)
    curves = {}
    for n, items in rows.items():
        f, t, pw, v = (np.array(x) for x in zip(*items))
        curves[n] = ModeCurve(n, 2 * np.pi * f, t, v.astype(bool), pw)
    return DispersionCurveSet(curves)


def curves_roundtrip(curves):
    """The curve set exactly as it reads back from a CSV file."""
    out = {}
    for n in curves:
        c = curves[n]
        f = np.array([float(repr(float(x))) for x in c.freq_hz])
        out[n] = ModeCurve(n, 2 * np.pi * f, c.t_app.copy(), c.valid.copy(),
                           c.ridge_power.copy())
    return DispersionCurveSet(out, curves.threshold, dict(curves.meta))


def write_raster(path, times, freqs_hz, power):
    power = np.asarray(power, dtype="<f8")
    times = np.asarray(times, dtype="<f8")
    freqs_hz = np.asarray(freqs_hz, dtype="<f8")
    if power.shape != (times.size, freqs_hz.size):
        raise ValueError("raster shape does not match its axes")
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<III", _RASTER_VERSION, times.size, freqs_hz.size))
        fh.write(times.tobytes())
        fh.write(freqs_hz.tobytes())
        fh.write(np.ascontiguousarray(power).tobytes())


def read_raster(path):
    """Return (times, freqs_hz, power)."""
    buf = Path(path).read_bytes()
    if buf[:4] != RASTER_MAGIC:
        raise ValueError(f"{path}: not a raster file")
    version, m, k = struct.unpack_from("<III", buf, 4)
    if version != _RASTER_VERSION:
        raise ValueError(f"{path}: unsupported raster version {version}")
    expected = 16 + 8 * (m + k + m * k)
    if len(buf) != expected:
        raise ValueError(f"{path}: truncated raster ({len(buf)} of {expected} bytes)")
    data = np.frombuffer(buf, dtype="<f8", offset=16)
    return data[:m].copy(), data[m:m + k].copy(), data[m + k:].reshape(m, k).copy()


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
