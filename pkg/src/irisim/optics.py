"""Optical chain of backside infrared imaging.

Silicon absorption, sensor response, the resulting signal budget and the
resolution arithmetic that decides what an IR camera can see through the
back of a die.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CurveRangeError, DomainError, ParseError, ValidationError

# Rayleigh criterion prefactor
RAYLEIGH = 0.61
# NA chosen so the 1070 nm diffraction limit lands on ~1.13 um
DEFAULT_NA = 0.58
DEFAULT_WAVELENGTH_NM = 1070.0
WAVELENGTH_RANGE_NM = (900.0, 1200.0)

ABSORPTION_CSV = "absorption_depth_si.csv"
SENSITIVITY_CSV = "sensor_response_cmos.csv"


@dataclass(frozen=True)
class SpectralCurve:
    """Sampled wavelength -> value function.

    ``interpolation`` is ``"linear"`` or ``"log"`` (linear in log(value)).
    Evaluation at a knot returns the knot value exactly; between knots the
    result is bounded by the two neighbouring values.
    """

    wavelengths: tuple
    values: tuple
    interpolation: str = "linear"
    name: str = ""

    def __post_init__(self):
        w = np.asarray(self.wavelengths, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if w.ndim != 1 or w.shape != v.shape:
            raise ValidationError("wavelengths and values must be 1-D and equally long")
        if w.size < 2:
            raise ValidationError("a spectral curve needs at least 2 samples")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(v)):
            raise ValidationError("curve samples must be finite")
        if np.any(np.diff(w) <= 0):
            raise ValidationError("curve wavelengths must be strictly increasing")
        if np.any(v <= 0):
            raise ValidationError("curve values must be positive")
        if self.interpolation not in ("linear", "log"):
            raise ValidationError(f"unknown interpolation {self.interpolation!r}")
        object.__setattr__(self, "wavelengths", tuple(float(x) for x in w))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @property
    def span(self):
        return self.wavelengths[0], self.wavelengths[-1]

    @property
    def peak_wavelength(self):
        return self.wavelengths[int(np.argmax(self.values))]

    def __call__(self, wavelength):
        return self.evaluate(wavelength)

    def evaluate(self, wavelength):
        x = np.asarray(wavelength, dtype=float)
        lo, hi = self.span
        if np.any(~np.isfinite(x)) or np.any(x < lo) or np.any(x > hi):
            raise CurveRangeError(
                f"wavelength {wavelength} nm outside the curve's sampled span "
                f"[{lo:g}, {hi:g}] nm"
            )
        w = np.asarray(self.wavelengths)
        v = np.asarray(self.values)
        i = np.clip(np.searchsorted(w, x, side="right") - 1, 0, w.size - 2)
        v0, v1 = v[i], v[i + 1]
        t = (x - w[i]) / (w[i + 1] - w[i])
        if self.interpolation == "log":
            out = np.exp(np.log(v0) + t * (np.log(v1) - np.log(v0)))
        else:
            out = v0 + t * (v1 - v0)
        out = np.clip(out, np.minimum(v0, v1), np.maximum(v0, v1))
        # knots are returned verbatim
        hit = np.searchsorted(w, x)
        hit = np.clip(hit, 0, w.size - 1)
        out = np.where(w[hit] == x, v[hit], out)
        return float(out) if out.ndim == 0 else out

    def to_csv(self):
        buf = io.StringIO()
        buf.write("wavelength_nm,value\n")
        for wl, val in zip(self.wavelengths, self.values):
            buf.write(f"{wl:g},{val!r}\n")
        return buf.getvalue()


def parse_curve_csv(text, interpolation="linear", name=""):
    """Parse ``wavelength_nm,value`` CSV text into a :class:`SpectralCurve`.

    Errors carry the 1-based line number of the offending row.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip().lstrip("﻿") != "wavelength_nm,value":
        raise ParseError("line 1: expected header 'wavelength_nm,value'")
    wl, vals = [], []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ParseError(f"line {lineno}: expected 2 columns, got {len(row)}")
        try:
            w, v = float(row[0]), float(row[1])
        except ValueError:
            raise ParseError(f"line {lineno}: non-numeric value in {row!r}") from None
        if not (math.isfinite(w) and math.isfinite(v)):
            raise ParseError(f"line {lineno}: non-finite value in {row!r}")
        if wl and w <= wl[-1]:
            raise ParseError(
                f"line {lineno}: wavelength {w:g} not above previous {wl[-1]:g} (rows must be sorted)"
            )
        if v <= 0:
            raise ParseError(f"line {lineno}: value must be positive, got {v:g}")
        wl.append(w)
        vals.append(v)
    if len(wl) < 2:
        raise ParseError("curve file needs at least 2 data rows")
    return SpectralCurve(tuple(wl), tuple(vals), interpolation, name)


def load_curve(path, interpolation="linear"):
    path = Path(path)
    return parse_curve_csv(path.read_text(encoding="utf-8"), interpolation, path.stem)


@lru_cache(maxsize=None)
def _bundled(filename, interpolation):
    text = resources.files("irisim").joinpath("data", filename).read_text(encoding="utf-8")
    return parse_curve_csv(text, interpolation, filename.rsplit(".", 1)[0])


def default_absorption_curve():
    """Silicon absorption depth in um, log-interpolated."""
    return _bundled(ABSORPTION_CSV, "log")


def default_sensitivity_curve():
    """CMOS sensor response as a fraction of peak, linearly interpolated."""
    return _bundled(SENSITIVITY_CSV, "linear")


def load_curves_dir(path):
    """Load ``(absorption, sensitivity)`` from a directory holding both CSVs."""
    path = Path(path)
    return (load_curve(path / ABSORPTION_CSV, "log"), load_curve(path / SENSITIVITY_CSV, "linear"))


@dataclass(frozen=True)
class NoiseParams:
    """Sensor noise in full-scale intensity units (1.0 = saturation)."""

    read_noise_sigma: float = 0.005
    shot_noise: bool = False
    # signal level (full-scale units) per detected photo-electron, for shot noise
    shot_scale: float = 2e-5
    enabled: bool = True

    def __post_init__(self):
        if not (self.read_noise_sigma >= 0):
            raise ValidationError("read_noise_sigma must be >= 0")
        if not (self.shot_scale >= 0):
            raise ValidationError("shot_scale must be >= 0")


@dataclass(frozen=True)
class OpticalConfig:
    wavelength_nm: float = DEFAULT_WAVELENGTH_NM
    silicon_thickness_um: float = 300.0
    passes: int = 1
    numerical_aperture: float = DEFAULT_NA
    microns_per_pixel: float = 1.67
    illumination_elevation_deg: float = 0.0
    illumination_azimuth_deg: float = 45.0
    exposure_s: float = 1.0
    gain: float = 29.0
    noise: NoiseParams = field(default_factory=NoiseParams)
    seed: int = 0

    def __post_init__(self):
        lo, hi = WAVELENGTH_RANGE_NM
        if not (lo <= self.wavelength_nm <= hi):
            raise ValidationError(f"wavelength_nm must lie in [{lo:g}, {hi:g}], got {self.wavelength_nm}")
        if not (self.silicon_thickness_um >= 0):
            raise ValidationError("silicon_thickness_um must be >= 0")
        if self.passes not in (1, 2):
            raise ValidationError("passes must be 1 or 2")
        if not (0 < self.numerical_aperture <= 1):
            raise ValidationError("numerical_aperture must lie in (0, 1]")
        if not (self.microns_per_pixel > 0):
            raise ValidationError("microns_per_pixel must be > 0")
        if not (self.exposure_s > 0):
            raise ValidationError("exposure_s must be > 0")
        if not (self.gain > 0):
            raise ValidationError("gain must be > 0")
        if not (0 <= self.illumination_elevation_deg < 90):
            raise ValidationError("illumination_elevation_deg must lie in [0, 90)")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseParams(**self.noise))
        if not (0 <= int(self.seed) < 2**64):
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown optical config keys: {sorted(unknown)}")
        if "noise" in data and isinstance(data["noise"], dict):
            data["noise"] = NoiseParams(**data["noise"])
        return cls(**data)


@dataclass(frozen=True)
class SignalBudget:
    transmission: float
    sensitivity: float
    combined: float
    reduction_factor: float
    suggested_exposure: float

    def to_dict(self):
        return asdict(self)


def absorption_depth(curve, wavelength):
    """Absorption depth in um at ``wavelength`` nm."""
    return curve.evaluate(wavelength)


def transmission(depth, thickness, passes=1):
    """Beer-Lambert transmitted fraction ``exp(-passes * thickness / depth)``."""
    if not (depth > 0):
        raise DomainError(f"absorption depth must be > 0, got {depth}")
    if not (thickness >= 0):
        raise DomainError(f"thickness must be >= 0, got {thickness}")
    if passes not in (1, 2):
        raise DomainError(f"passes must be 1 or 2, got {passes}")
    return math.exp(-passes * thickness / depth)


def sensor_sensitivity(curve, wavelength):
    """Sensor response at ``wavelength`` nm as a fraction of the curve's peak."""
    return curve.evaluate(wavelength) / max(curve.values)


def signal_budget(config, absorption=None, sensitivity=None, base_exposure=0.033):
    """Signal left after the silicon and the sensor, relative to visible light.

    ``suggested_exposure`` scales ``base_exposure`` (a typical visible-light
    exposure) by the lost signal.
    """
    if not (base_exposure > 0):
        raise DomainError("base_exposure must be > 0")
    absorption = absorption or default_absorption_curve()
    sensitivity = sensitivity or default_sensitivity_curve()
    depth = absorption_depth(absorption, config.wavelength_nm)
    t = transmission(depth, config.silicon_thickness_um, config.passes)
    s = sensor_sensitivity(sensitivity, config.wavelength_nm)
    combined = t * s
    if combined <= 0:
        raise DomainError("combined signal underflowed to zero")
    return SignalBudget(
        transmission=t,
        sensitivity=s,
        combined=combined,
        reduction_factor=1.0 / combined,
        suggested_exposure=base_exposure / combined,
    )


def diffraction_limit(wavelength, numerical_aperture=DEFAULT_NA):
    """Rayleigh resolution ``0.61 * wavelength / NA`` in um (wavelength in nm)."""
    if not (numerical_aperture > 0):
        raise DomainError(f"numerical aperture must be > 0, got {numerical_aperture}")
    if numerical_aperture > 1:
        raise DomainError(f"numerical aperture must be <= 1, got {numerical_aperture}")
    return RAYLEIGH * (wavelength / 1000.0) / numerical_aperture


def microns_per_pixel(die_width, pixels_across):
    """Pixel pitch in um for a die ``die_width`` um wide spanning ``pixels_across`` px."""
    if not (pixels_across > 0):
        raise DomainError(f"pixels_across must be > 0, got {pixels_across}")
    return die_width / pixels_across
