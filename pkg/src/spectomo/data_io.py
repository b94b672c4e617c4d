"""File formats: CSV tables, binary matrices, 16-bit PGM images, run configs.

All formats are documented in ``docs/formats.md``.  Loaders validate
eagerly and report the offending line; a failed load never returns a
partially filled object.  CSV files use a period as the decimal separator
regardless of locale.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import AttenuationTable, ChannelBinning, SourceSpectrum
from .tomo import Grid2D, ParallelGeometry

MATRIX_MAGIC = b"ADJM"
CONFIG_VERSION = 1
METHODS = ("adjust", "cjoint", "ru", "ur")


class FormatError(ValueError):
    """Malformed input file; the message carries the position when known."""


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

def load_attenuation_csv(path) -> AttenuationTable:
    """Read an attenuation table: header ``energy_keV,<mat1>,...``, one row
    per energy, energies strictly ascending, values nonnegative."""
    path = Path(path)
    lines = _read_csv_lines(path)
    header = lines[0][1]
    if len(header) < 2 or header[0] != "energy_keV":
        raise FormatError(f"{path}:1: header must be 'energy_keV,<mat1>,...', "
                          f"got {','.join(header)!r}")
    names = header[1:]
    energies, rows = [], []
    for ln, fields in lines[1:]:
        if len(fields) != len(header):
            raise FormatError(f"{path}:{ln}: expected {len(header)} fields, "
                              f"got {len(fields)}")
        values = [_parse_float(path, ln, f) for f in fields]
        if energies and values[0] <= energies[-1]:
            raise FormatError(f"{path}:{ln}: energy {values[0]} does not "
                              f"ascend past {energies[-1]}")
        if any(v < 0 for v in values[1:]):
            raise FormatError(f"{path}:{ln}: negative attenuation value")
        energies.append(values[0])
        rows.append(values[1:])
    if len(energies) < 2:
        raise FormatError(f"{path}: need at least two energy rows")
    return AttenuationTable(material_names=names,
                            energy_grid=np.array(energies),
                            mu=np.array(rows).T)


def save_attenuation_csv(path, table: AttenuationTable) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("energy_keV," + ",".join(table.material_names) + "\n")
        for i, e in enumerate(table.energy_grid):
            row = ",".join(_fmt(v) for v in table.mu[:, i])
            fh.write(f"{_fmt(e)},{row}\n")


def load_source_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a source spectrum: header ``energy_keV,intensity``."""
    path = Path(path)
    lines = _read_csv_lines(path)
    if lines[0][1] != ["energy_keV", "intensity"]:
        raise FormatError(f"{path}:1: header must be 'energy_keV,intensity'")
    energies, intensities = [], []
    for ln, fields in lines[1:]:
        if len(fields) != 2:
            raise FormatError(f"{path}:{ln}: expected 2 fields, got {len(fields)}")
        e = _parse_float(path, ln, fields[0])
        i = _parse_float(path, ln, fields[1])
        if energies and e <= energies[-1]:
            raise FormatError(f"{path}:{ln}: energies must ascend")
        if i <= 0:
            raise FormatError(f"{path}:{ln}: intensity must be positive")
        energies.append(e)
        intensities.append(i)
    if len(energies) < 2:
        raise FormatError(f"{path}: need at least two rows")
    return np.array(energies), np.array(intensities)


def source_from_csv(path, binning: ChannelBinning, scale: float = 1.0) -> SourceSpectrum:
    """Interpolate a tabulated source spectrum at the channel centers."""
    energies, intensities = load_source_csv(path)
    c = binning.centers
    if c[0] < energies[0] or c[-1] > energies[-1]:
        raise FormatError(
            f"{path}: channel centers [{c[0]}, {c[-1]}] keV outside the "
            f"tabulated range [{energies[0]}, {energies[-1]}] keV")
    return SourceSpectrum(scale * np.interp(c, energies, intensities))


def _read_csv_lines(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    out = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == "":
            continue
        out.append((ln, [f.strip() for f in raw.split(",")]))
    if not out:
        raise FormatError(f"{path}: empty file")
    return out


def _parse_float(path, ln, text) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise FormatError(f"{path}:{ln}: not a number: {text!r}") from exc
    if not np.isfinite(value):
        raise FormatError(f"{path}:{ln}: non-finite value: {text!r}")
    return value


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# binary matrix format
# ---------------------------------------------------------------------------

def save_matrix(path, matrix: np.ndarray) -> None:
    """Write magic ``ADJM``, u32 rows, u32 cols, then row-major
    little-endian float64 payload."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    rows, cols = struct.unpack("<II", blob[4:12])
    expected = 12 + rows * cols * 8
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for "
                          f"{rows}x{cols}, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", offset=12)
    return data.reshape(rows, cols).astype(np.float64)


# ---------------------------------------------------------------------------
# 16-bit PGM export
# ---------------------------------------------------------------------------

def export_pgm16(path, image: np.ndarray, vmin: float, vmax: float) -> None:
    """Binary 16-bit PGM with linear scaling of [vmin, vmax] to [0, 65535];
    values outside the range are clamped.  Samples are big-endian per the
    PGM specification."""
    if not vmin < vmax:
        raise ValueError(f"need vmin < vmax, got [{vmin}, {vmax}]")
    img = np.atleast_2d(np.asarray(image, dtype=np.float64))
    scaled = np.clip((img - vmin) / (vmax - vmin), 0.0, 1.0)
    q = np.rint(scaled * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Validated experiment description; see docs/formats.md for the schema."""

    phantom: dict
    geometry: dict
    binning: dict
    dictionary: dict
    source: dict
    noise: dict
    method: str
    method_params: dict
    output_dir: str
    seed: int
    material_rows: list[int] | None = None
    raw: dict = field(default_factory=dict)

    def grid(self) -> Grid2D:
        n = int(self.phantom["size"])
        return Grid2D(n, n, float(self.phantom.get("pixel_size", 1.0)))

    def parallel_geometry(self) -> ParallelGeometry:
        spec = self.geometry
        ang = spec["angles"]
        if "list" in ang:
            angles = np.asarray(ang["list"], dtype=np.float64)
        else:
            angles = np.linspace(float(ang.get("start", 0.0)),
                                 float(ang["stop"]),
                                 int(ang["count"]), endpoint=False)
        n_det = int(spec.get("detectors", self.phantom["size"]))
        spacing = float(spec.get("detector_spacing", 1.0))
        return ParallelGeometry(angles=angles, n_det=n_det, det_spacing=spacing)

    def channel_binning(self) -> ChannelBinning:
        b = self.binning
        return ChannelBinning.equidistant(int(b["channels"]),
                                          float(b["energy_min"]),
                                          float(b["energy_max"]))

    def n_phantom_materials(self) -> int:
        kind = self.phantom["kind"]
        if kind == "disks":
            return int(self.phantom["count"])
        return int(self.phantom["materials"])


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Path | str = ".") -> RunConfig:
    base_dir = Path(base_dir)
    version = raw.get("config_version")
    if version != CONFIG_VERSION:
        raise FormatError(f"unsupported config_version {version!r}, "
                          f"expected {CONFIG_VERSION}")
    for key in ("phantom", "geometry", "binning", "dictionary", "source",
                "method", "output_dir"):
        if key not in raw:
            raise FormatError(f"config missing required section {key!r}")

    method = raw["method"]
    if method not in METHODS:
        raise FormatError(f"unknown method {method!r}; choose from {METHODS}")

    phantom = dict(raw["phantom"])
    if phantom.get("kind") not in ("shepp_logan", "disks", "mixed_disks"):
        raise FormatError(f"unknown phantom kind {phantom.get('kind')!r}")

    geometry = dict(raw["geometry"])
    ang = geometry.get("angles", {})
    if "list" in ang:
        angles = np.asarray(ang["list"], dtype=np.float64)
        if angles.size and (angles.min() < 0 or angles.max() >= 2 * np.pi):
            raise FormatError("explicit angles must lie in [0, 2*pi)")
    else:
        for key in ("count", "stop"):
            if key not in ang:
                raise FormatError(f"geometry.angles missing {key!r}")
        start, stop = float(ang.get("start", 0.0)), float(ang["stop"])
        if not (0.0 <= start < stop <= 2 * np.pi):
            raise FormatError(f"angle range [{start}, {stop}) must be a "
                              "subset of [0, 2*pi)")

    raw = dict(raw)
    for section in ("dictionary", "source"):
        spec = dict(raw[section])
        if spec.get("type") == "csv":
            csv_path = Path(spec["path"])
            if not csv_path.is_absolute():
                csv_path = base_dir / csv_path
            if not csv_path.exists():
                raise FormatError(f"{section} file does not exist: {csv_path}")
            spec["path"] = str(csv_path)
        raw[section] = spec

    noise = dict(raw.get("noise", {"poisson": False, "gaussian_percent": 0.0}))
    cfg = RunConfig(
        phantom=phantom,
        geometry=geometry,
        binning=dict(raw["binning"]),
        dictionary=dict(raw["dictionary"]),
        source=dict(raw["source"]),
        noise=noise,
        method=method,
        method_params=dict(raw.get("method_params", {})),
        output_dir=str(raw["output_dir"]),
        seed=int(raw.get("seed", 0)),
        material_rows=list(raw["material_rows"]) if "material_rows" in raw else None,
        raw=dict(raw),
    )
    try:
        cfg.n_phantom_materials()
    except KeyError as exc:
        raise FormatError(f"phantom section missing key {exc}") from exc
    return cfg


def write_history_csv(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iter,objective,eps_abs,eps_rel,alpha,beta\n")
        for r in records:
            fh.write(f"{r.iteration},{_fmt(r.objective)},{_fmt(r.eps_abs)},"
                     f"{_fmt(r.eps_rel)},{_fmt(r.alpha)},{_fmt(r.beta)}\n")


def write_results_csv(path, method: str, match, psnr_saturation: float = 99.0) -> None:
    """Per-pair metric rows plus an ``average`` row; infinite PSNR values
    are written as the saturation value."""
    def cap(v):
        return psnr_saturation if np.isinf(v) else v

    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,material_rec,material_gt,mse,psnr,ssim\n")
        for (i, j), m, p, s in zip(match.pairs, match.mse_values,
                                   match.psnr_values, match.ssim_values):
            fh.write(f"{method},{i},{j},{_fmt(m)},{_fmt(cap(p))},{_fmt(s)}\n")
        psnr_avg = float(np.mean([cap(p) for p in match.psnr_values]))
        fh.write(f"{method},average,average,{_fmt(match.mse_avg)},"
                 f"{_fmt(psnr_avg)},{_fmt(match.ssim_avg)}\n")
