"""CSV loaders and writers for IMU, GNSS and ground-truth logs, plus run reports.

Formats (one header line, then one record per line):

    IMU           timestamp,wx,wy,wz,ax,ay,az          rad/s, m/s^2
    ground truth  timestamp,px,py,pz,qw,qx,qy,qz[,vx,vy,vz,...]
    GNSS          timestamp,px,py,pz,sxx,syy,szz        variances in m^2

Timestamps are integer nanoseconds (EuRoC) or float seconds. Loaded streams
are expressed in seconds from a common origin, by default the first sample of
the file being read. Columns after the last one listed are ignored, so EuRoC
ground-truth files with bias columns load as they are.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NonMonotonicTimestamps, ParseError
from .preintegration import ImuSample
from .residuals import GnssMeasurement

NS = "ns"
SECONDS = "s"
AUTO = "auto"


@dataclass
class DatasetManifest:
    imu_path: str
    groundtruth_path: str | None = None
    gnss_path: str | None = None
    time_unit: str = AUTO
    # free-form note on the frame in which gravity points along -z
    gravity_frame: str = ""

    def __post_init__(self):
        if not self.imu_path:
            raise ValueError("a manifest needs an IMU file")
        if self.gnss_path is None and self.groundtruth_path is None:
            raise ValueError("need a GNSS file or ground truth to synthesize GNSS from")
        if self.time_unit not in (NS, SECONDS, AUTO):
            raise ValueError(f"unknown time unit {self.time_unit!r}")


@dataclass
class GroundTruthSample:
    timestamp: float
    position: np.ndarray
    R: np.ndarray
    velocity: np.ndarray | None = None


# -- parsing -------------------------------------------------------------------


def _rows(path, min_cols: int):
    """Yield ``(line_number, fields)`` for every data line of a CSV file."""
    with open(path, newline="") as fh:
        lines = list(csv.reader(fh))
    if not lines:
        raise ParseError(1, "empty file")
    header = lines[0]
    if not header or not header[0].strip().lstrip("#").strip():
        raise ParseError(1, "missing header")
    data = [(i + 2, row) for i, row in enumerate(lines[1:]) if row and any(c.strip() for c in row)]
    if not data:
        raise ParseError(2, "no records after the header")
    for lineno, row in data:
        if len(row) < min_cols:
            raise ParseError(lineno, f"expected at least {min_cols} fields, got {len(row)}")
        yield lineno, [c.strip() for c in row]


def _float(text: str, lineno: int) -> float:
    try:
        x = float(text)
    except ValueError:
        raise ParseError(lineno, f"not a number: {text!r}") from None
    if not math.isfinite(x):
        raise ParseError(lineno, f"non-finite value {text!r}")
    return x


def _is_integer(text: str) -> bool:
    return text.lstrip("+-").isdigit()


def _timestamps(raw: Sequence[tuple[int, str]], unit: str, origin) -> tuple[np.ndarray, object]:
    """Seconds from ``origin`` (same unit as the file); integer ns stay exact until the subtraction."""
    if unit == AUTO:
        unit = NS if all(_is_integer(t) and len(t.lstrip("+-")) > 12 for _, t in raw) else SECONDS
    if unit == NS:
        vals = []
        for lineno, t in raw:
            if not _is_integer(t):
                raise ParseError(lineno, f"nanosecond timestamp must be an integer: {t!r}")
            vals.append(int(t))
        base = vals[0] if origin is None else int(origin)
        out = np.array([(v - base) * 1e-9 for v in vals])
    else:
        vals = [_float(t, lineno) for lineno, t in raw]
        base = vals[0] if origin is None else float(origin)
        out = np.array([v - base for v in vals])
    for (lineno, _), a, b in zip(raw[1:], out[:-1], out[1:]):
        if not b > a:
            raise NonMonotonicTimestamps(f"line {lineno}: timestamp {b:.9f} s does not increase")
    return out, base


def raw_origin(path, time_unit: str = AUTO):
    """First timestamp of a file in its own unit, for aligning several files."""
    for lineno, row in _rows(path, 1):
        _, base = _timestamps([(lineno, row[0])], time_unit, None)
        return base


def load_imu(path, time_unit: str = AUTO, origin=None) -> list[ImuSample]:
    rows = list(_rows(path, 7))
    t, _ = _timestamps([(n, r[0]) for n, r in rows], time_unit, origin)
    out = []
    for tk, (lineno, r) in zip(t, rows):
        vals = [_float(x, lineno) for x in r[1:7]]
        out.append(ImuSample(float(tk), np.array(vals[:3]), np.array(vals[3:])))
    return out


def load_groundtruth(path, time_unit: str = AUTO, origin=None) -> list[GroundTruthSample]:
    rows = list(_rows(path, 8))
    t, _ = _timestamps([(n, r[0]) for n, r in rows], time_unit, origin)
    out = []
    for tk, (lineno, r) in zip(t, rows):
        p = np.array([_float(x, lineno) for x in r[1:4]])
        qw, qx, qy, qz = (_float(x, lineno) for x in r[4:8])
        if qw * qw + qx * qx + qy * qy + qz * qz == 0.0:
            raise ParseError(lineno, "zero quaternion")
        R = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        v = np.array([_float(x, lineno) for x in r[8:11]]) if len(r) >= 11 else None
        out.append(GroundTruthSample(float(tk), p, R, v))
    return out


def load_gnss(path, time_unit: str = AUTO, origin=None) -> list[GnssMeasurement]:
    rows = list(_rows(path, 7))
    t, _ = _timestamps([(n, r[0]) for n, r in rows], time_unit, origin)
    out = []
    for tk, (lineno, r) in zip(t, rows):
        p = np.array([_float(x, lineno) for x in r[1:4]])
        var = np.array([_float(x, lineno) for x in r[4:7]])
        if np.any(var <= 0.0):
            raise ParseError(lineno, "variances must be positive")
        out.append(GnssMeasurement(float(tk), p, np.diag(var)))
    return out


def load_dataset(manifest: DatasetManifest, sigma: float = 0.2, rate: float = 5.0, seed: int = 0):
    """IMU samples, GNSS fixes and ground truth (or None) on the IMU time origin."""
    origin = raw_origin(manifest.imu_path, manifest.time_unit)
    imu = load_imu(manifest.imu_path, manifest.time_unit, origin)
    gt = load_groundtruth(manifest.groundtruth_path, manifest.time_unit, origin) if manifest.groundtruth_path else None
    if manifest.gnss_path:
        gnss = load_gnss(manifest.gnss_path, manifest.time_unit, origin)
    else:
        gnss = synthesize_gnss(gt, sigma, rate, seed)
    return imu, gnss, gt


# -- synthesis -------------------------------------------------------------------


def synthesize_gnss(groundtruth: Sequence[GroundTruthSample], sigma: float, rate: float = 5.0, seed: int = 0) -> list[GnssMeasurement]:
    """Noisy position fixes at a uniform rate, linearly interpolated from ground truth."""
    if not groundtruth:
        raise ValueError("empty ground truth")
    if rate <= 0:
        raise ValueError("rate must be positive")
    t = np.array([g.timestamp for g in groundtruth])
    P = np.array([g.position for g in groundtruth])
    times = np.arange(t[0], t[-1] + 1e-12, 1.0 / rate)
    pos = np.column_stack([np.interp(times, t, P[:, i]) for i in range(3)])
    rng = np.random.default_rng(seed)
    pos = pos + sigma * rng.standard_normal(pos.shape)
    cov = max(sigma, 1e-6) ** 2 * np.eye(3)
    return [GnssMeasurement(float(tk), pk, cov.copy()) for tk, pk in zip(times, pos)]


def groundtruth_at(groundtruth: Sequence[GroundTruthSample], times: Iterable[float]) -> np.ndarray:
    """Ground-truth positions interpolated at ``times``."""
    t = np.array([g.timestamp for g in groundtruth])
    P = np.array([g.position for g in groundtruth])
    times = np.asarray(list(times), dtype=float)
    return np.column_stack([np.interp(times, t, P[:, i]) for i in range(3)])


# -- writers ---------------------------------------------------------------------


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_imu(samples: Sequence[ImuSample], path) -> None:
    _write(
        path,
        ["timestamp", "wx", "wy", "wz", "ax", "ay", "az"],
        ([repr(float(s.timestamp))] + [repr(float(x)) for x in (*s.gyro, *s.accel)] for s in samples),
    )


def write_gnss(meas: Sequence[GnssMeasurement], path) -> None:
    _write(
        path,
        ["timestamp", "px", "py", "pz", "sxx", "syy", "szz"],
        ([repr(float(m.timestamp))] + [repr(float(x)) for x in (*m.position, *np.diag(m.cov))] for m in meas),
    )


def write_groundtruth(samples: Sequence[GroundTruthSample], path) -> None:
    def row(g):
        qx, qy, qz, qw = Rotation.from_matrix(g.R).as_quat()
        vals = [*g.position, qw, qx, qy, qz] + ([] if g.velocity is None else list(g.velocity))
        return [repr(float(g.timestamp))] + [repr(float(x)) for x in vals]

    header = ["timestamp", "px", "py", "pz", "qw", "qx", "qy", "qz"]
    if samples and samples[0].velocity is not None:
        header += ["vx", "vy", "vz"]
    _write(path, header, (row(g) for g in samples))


# -- reports -----------------------------------------------------------------------

REPORT_FIELDS = ("sequence", "k_star", "ate_full", "ate_from_kstar", "runtime")


@dataclass
class RunRecord:
    """One line of a results table: ATE with global terms from the start and from k*."""

    sequence: str
    k_star: int | None
    ate_full: float
    ate_from_kstar: float
    runtime: float
    extra: dict = field(default_factory=dict)


def _is_json(path) -> bool:
    return Path(path).suffix.lower() == ".json"


def write_report(records: Sequence[RunRecord], path) -> None:
    """CSV or JSON chosen by the file extension."""
    if _is_json(path):
        with open(path, "w") as fh:
            json.dump([asdict(r) for r in records], fh, indent=2)
        return
    extra_keys = sorted({k for r in records for k in r.extra})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(REPORT_FIELDS) + extra_keys)
        for r in records:
            k = "" if r.k_star is None else str(r.k_star)
            w.writerow(
                [r.sequence, k, repr(float(r.ate_full)), repr(float(r.ate_from_kstar)), repr(float(r.runtime))]
                + [r.extra.get(key, "") for key in extra_keys]
            )


def read_report(path) -> list[RunRecord]:
    if _is_json(path):
        with open(path) as fh:
            return [RunRecord(**d) for d in json.load(fh)]
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            extra = {k: v for k, v in row.items() if k not in REPORT_FIELDS}
            out.append(
                RunRecord(
                    row["sequence"],
                    int(row["k_star"]) if row["k_star"] else None,
                    float(row["ate_full"]),
                    float(row["ate_from_kstar"]),
                    float(row["runtime"]),
                    extra,
                )
            )
    return out
