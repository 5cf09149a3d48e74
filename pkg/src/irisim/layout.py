"""Procedural die layouts: M1-level reflectance maps with annotated blocks.

Die coordinates are in micrometres with the origin at the top-left corner,
x to the right and y downwards, so that row 0 of every raster is the top
edge of the die. Reflectance is a scalar in [0, 1] standing in for the
density of the lowest metal layer seen through the backside.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BoundsError, DomainError, ParseError, ValidationError
from .pnm import atomic_write_bytes, decode_pgm, encode_pgm

DEFAULT_GRID_PITCH = 0.25
BACKGROUND_REFLECTANCE = 0.12
FULL_SCALE_16 = 65535
LAYOUT_FORMAT = "irisim-layout/1"
LAYOUT_JSON = "layout.json"
REFLECTANCE_PGM = "reflectance.pgm"

# classify_scale defaults, in pixels
MICRO_PX = 2.0
MACRO_PX = 50.0


class BlockKind(str, enum.Enum):
    STANDARD_CELL = "standard_cell"
    RAM_MACRO = "ram_macro"
    IO_PAD = "io_pad"
    DATA_CONVERTER = "data_converter"
    NONVOLATILE_MEMORY = "nonvolatile_memory"
    OSCILLATOR = "oscillator"
    FILLER = "filler"


class ScaleClass(str, enum.Enum):
    MICRO = "micro"
    MESO = "meso"
    MACRO = "macro"


# Texture parameters per block kind; all lengths in um, levels are reflectance.
TEXTURE_DEFAULTS = {
    BlockKind.STANDARD_CELL: dict(
        row_pitch=0.8, cell_width_min=0.5, cell_width_max=3.0,
        density_min=0.2, density_max=0.5, modulation=0.06, modulation_scale=40.0,
    ),
    BlockKind.RAM_MACRO: dict(
        bit_pitch=2.0, cell_level=0.9, gap_level=0.7, gap_fraction=0.3,
        strap_every=8, strap_width=1.5, strap_level=0.5, straps=True,
        sense_amp_height=8.0, sense_amp_pitch=4.0, sense_amp_level=0.35,
    ),
    BlockKind.IO_PAD: dict(
        pad_diameter=None, pad_pitch=None, pad_level=0.95,
        finger_pitch=3.0, finger_level=0.6, base_level=0.3,
    ),
    BlockKind.DATA_CONVERTER: dict(
        unit_pitch=4.0, plate_fraction=0.75, plate_level=0.75, gap_level=0.35,
        channels=4, channel_gap=6.0,
    ),
    BlockKind.NONVOLATILE_MEMORY: dict(
        bit_pitch=1.5, cell_level=0.65, gap_level=0.45, gap_fraction=0.35,
        strap_every=16, strap_width=2.0, strap_level=0.3, straps=True,
        sense_amp_height=6.0, sense_amp_pitch=3.0, sense_amp_level=0.25,
    ),
    BlockKind.OSCILLATOR: dict(ring_pitch=6.0, ring_width=3.0, ring_level=0.8, base_level=0.2),
    BlockKind.FILLER: dict(grid_pitch=20.0, line_width=3.0, line_level=0.8, base_level=0.15),
}


@dataclass(frozen=True)
class Region:
    kind: BlockKind
    origin: tuple
    size: tuple
    texture: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "kind", BlockKind(self.kind))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "size", (float(self.size[0]), float(self.size[1])))
        unknown = set(self.texture) - set(TEXTURE_DEFAULTS[self.kind])
        if unknown:
            raise ValidationError(f"unknown texture params for {self.kind.value}: {sorted(unknown)}")

    @property
    def bounds(self):
        """``(x0, y0, x1, y1)`` in um."""
        (x, y), (w, h) = self.origin, self.size
        return x, y, x + w, y + h

    @property
    def params(self):
        merged = dict(TEXTURE_DEFAULTS[self.kind])
        merged.update(self.texture)
        return merged

    def contains(self, x, y):
        x0, y0, x1, y1 = self.bounds
        return x0 <= x < x1 and y0 <= y < y1

    def to_dict(self):
        return {
            "kind": self.kind.value,
            "origin_um": list(self.origin),
            "size_um": list(self.size),
            "texture": dict(sorted(self.texture.items())),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(BlockKind(d["kind"]), tuple(d["origin_um"]), tuple(d["size_um"]), dict(d.get("texture", {})))


@dataclass(frozen=True)
class Injection:
    """Ground truth of one ``inject_trojan`` call."""

    center: tuple
    area: float
    reflectance_delta: float

    @property
    def side(self):
        return math.sqrt(self.area)

    def to_dict(self):
        return {"center_um": list(self.center), "area_um2": self.area, "reflectance_delta": self.reflectance_delta}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(float(v) for v in d["center_um"]), float(d["area_um2"]), float(d["reflectance_delta"]))


def grid_shape(die_size, grid_pitch):
    """``(rows, cols)`` = ceil(die / pitch), tolerant of float round-off."""
    w, h = die_size
    return (max(1, math.ceil(h / grid_pitch - 1e-9)), max(1, math.ceil(w / grid_pitch - 1e-9)))


@dataclass(frozen=True, eq=False)
class DieLayout:
    die_size: tuple
    grid_pitch: float
    reflectance: np.ndarray
    regions: tuple = ()
    provenance: str = ""
    injections: tuple = ()

    def __post_init__(self):
        w, h = (float(v) for v in self.die_size)
        if not (w > 0 and h > 0):
            raise ValidationError("die size must be positive")
        if not (self.grid_pitch > 0):
            raise ValidationError("grid_pitch must be positive")
        r = np.array(self.reflectance, dtype=float)
        expected = grid_shape((w, h), self.grid_pitch)
        if r.shape != expected:
            raise ValidationError(f"reflectance grid {r.shape} does not match ceil(die/pitch) = {expected}")
        if np.any(~np.isfinite(r)) or r.min() < 0 or r.max() > 1:
            raise ValidationError("reflectance samples must lie in [0, 1]")
        r.flags.writeable = False
        object.__setattr__(self, "die_size", (w, h))
        object.__setattr__(self, "grid_pitch", float(self.grid_pitch))
        object.__setattr__(self, "reflectance", r)
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "injections", tuple(self.injections))

    def __eq__(self, other):
        if not isinstance(other, DieLayout):
            return NotImplemented
        return (
            self.die_size == other.die_size
            and self.grid_pitch == other.grid_pitch
            and self.regions == other.regions
            and self.provenance == other.provenance
            and self.injections == other.injections
            and np.array_equal(self.reflectance, other.reflectance)
        )

    __hash__ = None

    @property
    def shape(self):
        return self.reflectance.shape

    def sample_centers(self):
        """1-D arrays of sample-centre x and y coordinates in um."""
        rows, cols = self.shape
        g = self.grid_pitch
        return (np.arange(cols) + 0.5) * g, (np.arange(rows) + 0.5) * g

    def regions_of(self, kind):
        kind = BlockKind(kind)
        return [r for r in self.regions if r.kind == kind]

    def region_mask(self, region):
        rows, cols = self.shape
        cs, rs = _index_span(region, self.grid_pitch, rows, cols)
        mask = np.zeros(self.shape, dtype=bool)
        mask[rs, cs] = True
        return mask


def snap16(values):
    """Round reflectance onto the 16-bit lattice used by the layout file."""
    return np.round(np.clip(values, 0.0, 1.0) * FULL_SCALE_16) / FULL_SCALE_16


def validate_plan(die_size, regions):
    """Raise :class:`ValidationError` naming every out-of-bounds or overlapping region."""
    w, h = die_size
    problems = []
    for i, r in enumerate(regions):
        x0, y0, x1, y1 = r.bounds
        if not (r.size[0] > 0 and r.size[1] > 0):
            problems.append(f"region {i} ({r.kind.value}) has non-positive size {r.size}")
        elif x0 < 0 or y0 < 0 or x1 > w + 1e-9 or y1 > h + 1e-9:
            problems.append(f"region {i} ({r.kind.value}) bounds {r.bounds} exceed die {die_size}")
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            a, b = regions[i].bounds, regions[j].bounds
            if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
                problems.append(f"regions {i} ({regions[i].kind.value}) and {j} ({regions[j].kind.value}) overlap")
    if problems:
        raise ValidationError("invalid region plan: " + "; ".join(problems))


def _index_span(region, g, rows, cols):
    """Slices of the samples whose centres fall inside ``region``."""
    x0, y0, x1, y1 = region.bounds
    c0 = max(0, math.ceil(x0 / g - 0.5 - 1e-9))
    c1 = min(cols, math.ceil(x1 / g - 0.5 - 1e-9))
    r0 = max(0, math.ceil(y0 / g - 0.5 - 1e-9))
    r1 = min(rows, math.ceil(y1 / g - 0.5 - 1e-9))
    return slice(c0, c1), slice(r0, r1)


def _region_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), index]))


# -- textures --------------------------------------------------------------
# Each takes local sample coordinates (1-D x, 1-D y, um from the region's
# top-left), the region size, merged params and an RNG; returns (ny, nx).


def _smooth_field(xl, yl, scale, rng):
    nx = int(math.ceil(xl[-1] / scale)) + 4 if xl.size else 4
    ny = int(math.ceil(yl[-1] / scale)) + 4 if yl.size else 4
    coarse = rng.standard_normal((ny, nx))
    yy = (yl / scale + 1.0)[:, None] * np.ones((1, xl.size))
    xx = np.ones((yl.size, 1)) * (xl / scale + 1.0)[None, :]
    return ndimage.map_coordinates(coarse, [yy, xx], order=3, mode="nearest")


def _tex_standard_cell(xl, yl, size, p, rng):
    w, h = size
    n_rows = int(math.ceil(h / p["row_pitch"])) + 1
    per_row = int(math.ceil((w + p["cell_width_max"]) / p["cell_width_min"])) + 2
    widths = rng.uniform(p["cell_width_min"], p["cell_width_max"], (n_rows, per_row))
    edges = np.cumsum(widths, axis=1)
    # random phase so rows do not share a left edge
    edges -= rng.uniform(0, p["cell_width_max"], (n_rows, 1))
    density = rng.uniform(p["density_min"], p["density_max"], (n_rows, per_row + 1))
    span = edges[:, -1].max() + w + 1.0
    flat_edges = (edges + (np.arange(n_rows) * span)[:, None]).ravel()
    row = np.minimum((yl // p["row_pitch"]).astype(int), n_rows - 1)
    query = xl[None, :] + (row * span)[:, None]
    k = np.searchsorted(flat_edges, query.ravel(), side="right").reshape(query.shape)
    col = k - row[:, None] * per_row
    col = np.clip(col, 0, per_row)
    out = density[row[:, None], col]
    if p["modulation"]:
        out = out + p["modulation"] * _smooth_field(xl, yl, p["modulation_scale"], rng)
    return out


def _tex_memory(xl, yl, size, p, rng):
    w, h = size
    pitch = p["bit_pitch"]
    sa_h = min(p["sense_amp_height"], 0.5 * h)
    fx = (xl / pitch) % 1.0
    fy = (yl / pitch) % 1.0
    gap = (fx[None, :] >= 1 - p["gap_fraction"]) | (fy[:, None] >= 1 - p["gap_fraction"])
    out = np.where(gap, p["gap_level"], p["cell_level"])
    if p["straps"]:
        period = p["strap_every"] * pitch
        sx = (xl % period) < p["strap_width"]
        sy = (yl % (2 * period)) < p["strap_width"]
        out = np.where(sx[None, :] | sy[:, None], p["strap_level"], out)
    # sense-amplifier strip along the bottom edge
    strip = yl >= h - sa_h
    fingers = ((xl / p["sense_amp_pitch"]) % 1.0) < 0.5
    sa = np.where(fingers[None, :], p["cell_level"], p["sense_amp_level"])
    out = np.where(strip[:, None], sa, out)
    return out


def _tex_io_pad(xl, yl, size, p, rng):
    w, h = size
    along_x = w >= h
    long_c, cross_c = (xl, yl) if along_x else (yl, xl)
    long_len, cross_len = (w, h) if along_x else (h, w)
    dia = p["pad_diameter"] or 0.8 * cross_len
    pitch = p["pad_pitch"] or 1.6 * dia
    fingers = ((long_c / p["finger_pitch"]) % 1.0) < 0.5
    base = np.where(fingers, p["finger_level"], p["base_level"])
    n_pads = max(1, int(long_len // pitch))
    start = 0.5 * (long_len - (n_pads - 1) * pitch)
    centres = start + pitch * np.arange(n_pads)
    d_long = np.min(np.abs(long_c[:, None] - centres[None, :]), axis=1)
    d_cross = cross_c - 0.5 * cross_len
    inside = d_long[None, :] ** 2 + d_cross[:, None] ** 2 <= (0.5 * dia) ** 2
    out = np.where(inside, p["pad_level"], np.broadcast_to(base[None, :], inside.shape))
    return out if along_x else out.T


def _tex_data_converter(xl, yl, size, p, rng):
    w, h = size
    pitch = p["unit_pitch"]
    fx = (xl / pitch) % 1.0
    fy = (yl / pitch) % 1.0
    plate = (fx[None, :] < p["plate_fraction"]) & (fy[:, None] < p["plate_fraction"])
    out = np.where(plate, p["plate_level"], p["gap_level"])
    n = max(1, int(p["channels"]))
    # channels are stacked along the longer axis, separated by dark gaps
    along = yl if h >= w else xl
    length = max(h, w)
    ch = length / n
    in_gap = (along % ch) >= ch - p["channel_gap"]
    if h >= w:
        out = np.where(in_gap[:, None], p["gap_level"] * 0.5, out)
    else:
        out = np.where(in_gap[None, :], p["gap_level"] * 0.5, out)
    return out


def _tex_oscillator(xl, yl, size, p, rng):
    w, h = size
    # concentric square rings about the region centre
    d = np.maximum(np.abs(xl - 0.5 * w)[None, :], np.abs(yl - 0.5 * h)[:, None])
    ring = (d % p["ring_pitch"]) < p["ring_width"]
    return np.where(ring, p["ring_level"], p["base_level"])


def _tex_filler(xl, yl, size, p, rng):
    gx = (xl % p["grid_pitch"]) < p["line_width"]
    gy = (yl % p["grid_pitch"]) < p["line_width"]
    return np.where(gx[None, :] | gy[:, None], p["line_level"], p["base_level"])


_TEXTURES = {
    BlockKind.STANDARD_CELL: _tex_standard_cell,
    BlockKind.RAM_MACRO: _tex_memory,
    BlockKind.NONVOLATILE_MEMORY: _tex_memory,
    BlockKind.IO_PAD: _tex_io_pad,
    BlockKind.DATA_CONVERTER: _tex_data_converter,
    BlockKind.OSCILLATOR: _tex_oscillator,
    BlockKind.FILLER: _tex_filler,
}


def synthesize_layout(die_size, region_plan, texture_seed=0, grid_pitch=DEFAULT_GRID_PITCH,
                      diagonal_amplitude=0.0, diagonal_period=30.0, provenance=None):
    """Render a region plan into a :class:`DieLayout`.

    Deterministic in ``(die_size, region_plan, texture_seed, grid_pitch)``.
    ``diagonal_amplitude`` adds the faint diagonal wafer-processing texture
    seen on real backside images; it is off by default.
    """
    die_size = (float(die_size[0]), float(die_size[1]))
    regions = tuple(r if isinstance(r, Region) else Region.from_dict(r) for r in region_plan)
    validate_plan(die_size, regions)
    rows, cols = grid_shape(die_size, grid_pitch)
    refl = np.full((rows, cols), BACKGROUND_REFLECTANCE)
    xc = (np.arange(cols) + 0.5) * grid_pitch
    yc = (np.arange(rows) + 0.5) * grid_pitch
    for i, region in enumerate(regions):
        cs, rs = _index_span(region, grid_pitch, rows, cols)
        if cs.stop <= cs.start or rs.stop <= rs.start:
            continue
        xl = xc[cs] - region.origin[0]
        yl = yc[rs] - region.origin[1]
        tex = _TEXTURES[region.kind](xl, yl, region.size, region.params, _region_rng(texture_seed, i))
        refl[rs, cs] = tex
    if diagonal_amplitude:
        phase = (xc[None, :] + yc[:, None]) / (math.sqrt(2.0) * diagonal_period)
        refl = refl + diagonal_amplitude * np.sin(2 * np.pi * phase)
    if provenance is None:
        provenance = f"synthesize_layout seed={int(texture_seed)} grid_pitch={grid_pitch:g}"
    return DieLayout(die_size, grid_pitch, snap16(refl), regions, provenance)


def uniform_layout(die_size, value, grid_pitch=DEFAULT_GRID_PITCH, regions=()):
    rows, cols = grid_shape(die_size, grid_pitch)
    return DieLayout(tuple(die_size), grid_pitch, np.full((rows, cols), float(value)), tuple(regions), "uniform")


def injection_mask(layout, center, area):
    """Boolean mask of samples whose centres lie in the side=sqrt(area) square."""
    side = math.sqrt(area)
    xs, ys = layout.sample_centers()
    cx, cy = center
    mx = (xs >= cx - side / 2) & (xs < cx + side / 2)
    my = (ys >= cy - side / 2) & (ys < cy + side / 2)
    return my[:, None] & mx[None, :]


def inject_trojan(layout, center, area, reflectance_delta):
    """Return a copy of ``layout`` with a square patch of reflectance shifted.

    The patch has side sqrt(area) um and is centred on ``center``; results
    are clamped to [0, 1]. The input layout is never modified.
    """
    if not (area >= 0):
        raise DomainError(f"area must be >= 0, got {area}")
    cx, cy = float(center[0]), float(center[1])
    w, h = layout.die_size
    if not (0 <= cx <= w and 0 <= cy <= h):
        raise BoundsError(f"trojan centre ({cx}, {cy}) lies outside the {w} x {h} um die")
    if area == 0:
        return layout
    half = math.sqrt(area) / 2
    if cx - half < 0 or cy - half < 0 or cx + half > w or cy + half > h:
        raise BoundsError(f"trojan square of side {2 * half:g} um at ({cx}, {cy}) extends past the die edge")
    mask = injection_mask(layout, (cx, cy), area)
    refl = np.array(layout.reflectance)
    refl[mask] = np.clip(refl[mask] + reflectance_delta, 0.0, 1.0)
    inj = Injection((cx, cy), float(area), float(reflectance_delta))
    return DieLayout(
        layout.die_size, layout.grid_pitch, refl, layout.regions,
        layout.provenance, layout.injections + (inj,),
    )


def classify_scale(feature_size, microns_per_pixel, thresholds=(MICRO_PX, MACRO_PX)):
    """Micro / meso / macro class of a feature at a given pixel pitch.

    Micro below ``micro_px`` pixels, macro at or above ``macro_px`` pixels.
    """
    micro_px, macro_px = thresholds
    for name, v in (("feature_size", feature_size), ("microns_per_pixel", microns_per_pixel),
                    ("micro_px", micro_px), ("macro_px", macro_px)):
        if not (v > 0):
            raise DomainError(f"{name} must be positive, got {v}")
    if not micro_px < macro_px:
        raise DomainError("micro_px must be smaller than macro_px")
    if feature_size < micro_px * microns_per_pixel:
        return ScaleClass.MICRO
    if feature_size >= macro_px * microns_per_pixel:
        return ScaleClass.MACRO
    return ScaleClass.MESO


# Block inventory loosely following a touchscreen-controller die: standard
# cells top-left to centre, converters top-right and down the right edge,
# NVM and RAM arrays across the lower half, pads along the bottom.
_FIG12_FRACTIONS = [
    (BlockKind.STANDARD_CELL, (0.03, 0.03), (0.58, 0.52)),
    (BlockKind.DATA_CONVERTER, (0.66, 0.03), (0.31, 0.15)),
    (BlockKind.DATA_CONVERTER, (0.82, 0.21), (0.15, 0.36)),
    (BlockKind.OSCILLATOR, (0.66, 0.21), (0.12, 0.12)),
    (BlockKind.FILLER, (0.64, 0.36), (0.15, 0.21)),
    (BlockKind.NONVOLATILE_MEMORY, (0.03, 0.58), (0.25, 0.17)),
    (BlockKind.NONVOLATILE_MEMORY, (0.31, 0.58), (0.25, 0.17)),
    (BlockKind.RAM_MACRO, (0.03, 0.78), (0.16, 0.14)),
    (BlockKind.RAM_MACRO, (0.21, 0.78), (0.16, 0.14)),
    (BlockKind.RAM_MACRO, (0.39, 0.78), (0.16, 0.14)),
    (BlockKind.RAM_MACRO, (0.60, 0.62), (0.20, 0.30)),
    (BlockKind.FILLER, (0.82, 0.62), (0.15, 0.30)),
    (BlockKind.IO_PAD, (0.03, 0.945), (0.94, 0.045)),
]


def fig12_like_plan(die_width=3900.0, die_height=None):
    """Region plan with a mixed-signal controller's block inventory, scaled to the die."""
    die_height = die_width if die_height is None else die_height
    plan = []
    for kind, (fx, fy), (fw, fh) in _FIG12_FRACTIONS:
        origin = (round(fx * die_width, 2), round(fy * die_height, 2))
        size = (round(fw * die_width, 2), round(fh * die_height, 2))
        plan.append(Region(kind, origin, size))
    return plan


# -- persistence -----------------------------------------------------------


def layout_to_json(layout):
    rows, cols = layout.shape
    doc = {
        "format": LAYOUT_FORMAT,
        "die_size_um": list(layout.die_size),
        "grid_pitch_um": layout.grid_pitch,
        "grid_shape": [rows, cols],
        "provenance": layout.provenance,
        "regions": [r.to_dict() for r in layout.regions],
        "injections": [i.to_dict() for i in layout.injections],
        "reflectance_file": REFLECTANCE_PGM,
        "reflectance_scale": FULL_SCALE_16,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _layout_paths(path):
    path = Path(path)
    if path.suffix == ".json":
        return path, path.parent
    return path / LAYOUT_JSON, path


def save_layout(layout, path):
    """Write ``layout.json`` plus a 16-bit PGM reflectance sidecar.

    ``path`` is a directory, or the JSON file path inside one.
    """
    json_path, directory = _layout_paths(path)
    directory.mkdir(parents=True, exist_ok=True)
    q = np.round(np.asarray(layout.reflectance) * FULL_SCALE_16).astype(np.uint16)
    atomic_write_bytes(directory / REFLECTANCE_PGM, encode_pgm(q, FULL_SCALE_16))
    atomic_write_bytes(json_path, layout_to_json(layout).encode("utf-8"))
    return json_path


def parse_layout(json_bytes, pgm_bytes):
    """Build a layout from file contents; raises :class:`ParseError` and builds nothing on failure."""
    try:
        doc = json.loads(json_bytes.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"layout JSON byte {exc.start}: invalid UTF-8") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"layout JSON byte {exc.pos}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("layout JSON byte 0: top level must be an object")
    if doc.get("format") != LAYOUT_FORMAT:
        raise ParseError(f"layout JSON: unsupported format {doc.get('format')!r}")
    try:
        die_size = tuple(float(v) for v in doc["die_size_um"])
        pitch = float(doc["grid_pitch_um"])
        regions = tuple(Region.from_dict(r) for r in doc["regions"])
        injections = tuple(Injection.from_dict(i) for i in doc.get("injections", []))
        provenance = str(doc.get("provenance", ""))
        scale = int(doc.get("reflectance_scale", FULL_SCALE_16))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"layout JSON: missing or malformed field ({exc})") from None
    pixels, maxval = decode_pgm(pgm_bytes)
    if maxval != scale:
        raise ParseError(f"reflectance PGM maxval {maxval} != declared scale {scale}")
    expected = grid_shape(die_size, pitch)
    if tuple(doc.get("grid_shape", expected)) != expected or pixels.shape != expected:
        raise ParseError(f"reflectance grid {pixels.shape} does not match die/pitch {expected}")
    try:
        return DieLayout(die_size, pitch, pixels.astype(float) / scale, regions, provenance, injections)
    except ValidationError as exc:
        raise ParseError(f"layout content invalid: {exc}") from None


def load_layout(path):
    json_path, directory = _layout_paths(path)
    json_bytes = json_path.read_bytes()
    try:
        name = json.loads(json_bytes.decode("utf-8")).get("reflectance_file", REFLECTANCE_PGM)
    except (UnicodeDecodeError, json.JSONDecodeError, AttributeError):
        name = REFLECTANCE_PGM
    pgm_path = directory / Path(str(name)).name
    if not pgm_path.exists():
        raise ParseError(f"reflectance sidecar {pgm_path} is missing")
    return parse_layout(json_bytes, pgm_path.read_bytes())


def load_plan(path):
    """Read a region-plan JSON: ``{die_size_um, grid_pitch_um?, regions: [...]}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return (
        tuple(float(v) for v in data["die_size_um"]),
        [Region.from_dict(r) for r in data["regions"]],
        float(data.get("grid_pitch_um", DEFAULT_GRID_PITCH)),
    )


def plan_to_json(die_size, regions, grid_pitch=DEFAULT_GRID_PITCH):
    doc = {
        "die_size_um": list(die_size),
        "grid_pitch_um": grid_pitch,
        "regions": [r.to_dict() for r in regions],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def layout_digest(layout):
    """Short content hash, handy for provenance strings."""
    h = hashlib.sha256()
    h.update(layout_to_json(layout).encode())
    h.update(np.ascontiguousarray(layout.reflectance).tobytes())
    return h.hexdigest()[:16]
