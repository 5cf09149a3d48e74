"""Forward renderer from a die layout to a simulated backside IR image.

Intensities are in full-scale units before quantization (1.0 saturates the
16-bit output at 65535).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ConfigError, DomainError, ParseError, ValidationError
from .optics import NoiseParams, OpticalConfig, diffraction_limit, signal_budget
from .pnm import atomic_write_bytes, decode_pgm, encode_pgm

__all__ = [
    "IrisImage", "NoiseParams", "Tile", "psf_kernel", "psf_sigma", "illumination_field",
    "render", "capture_tiles", "quantize", "save_image", "load_image", "derive_seed",
]

FULL_SCALE = 65535
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
# illumination gradient strength per unit tan(elevation)
ILLUMINATION_K = 0.5
ILLUMINATION_FLOOR = 0.05
MAX_ELEVATION_DEG = 60.0


@dataclass(frozen=True, eq=False)
class IrisImage:
    """A rendered or captured frame.

    ``pixels`` is float (full-scale units) before quantization and uint16
    after it.
    """

    pixels: np.ndarray
    microns_per_pixel: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError("image must be a 2-D array of at least 1x1")
        if not (self.microns_per_pixel > 0):
            raise ValidationError("microns_per_pixel must be > 0")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "microns_per_pixel", float(self.microns_per_pixel))

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def quantized(self):
        return np.issubdtype(self.pixels.dtype, np.integer)

    @property
    def full_scale(self):
        """Value of a saturated pixel: 65535 when quantized, else 1.0."""
        return float(FULL_SCALE) if self.quantized else 1.0

    def as_fraction(self):
        """Pixels as float64 in full-scale units."""
        return np.asarray(self.pixels, dtype=float) / self.full_scale

    def crop(self, y, x, h, w):
        return IrisImage(self.pixels[y : y + h, x : x + w], self.microns_per_pixel, dict(self.metadata))

    def __eq__(self, other):
        if not isinstance(other, IrisImage):
            return NotImplemented
        return (
            self.microns_per_pixel == other.microns_per_pixel
            and self.pixels.dtype == other.pixels.dtype
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


@dataclass(frozen=True)
class Tile:
    image: IrisImage
    nominal_offset: tuple  # (x, y) px in the full frame
    true_offset: tuple
    index: tuple  # (row, col)


def derive_seed(seed, *labels):
    """Mix a base seed with labels (ints or strings) into a new 64-bit seed."""
    import hashlib

    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for label in labels:
        h.update(b"\x00" + str(label).encode())
    return int.from_bytes(h.digest(), "little")


def psf_sigma(config, grid_pitch):
    """Gaussian sigma of the PSF in grid samples."""
    fwhm_um = diffraction_limit(config.wavelength_nm, config.numerical_aperture)
    return fwhm_um / FWHM_PER_SIGMA / grid_pitch


def _psf_1d(sigma):
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def psf_kernel(config, grid_pitch=0.25):
    """Normalized isotropic Gaussian PSF sampled on the layout grid.

    FWHM equals the Rayleigh limit of the configured optics; support is
    truncated at +/-3 sigma.
    """
    k1 = _psf_1d(psf_sigma(config, grid_pitch))
    k = np.outer(k1, k1)
    return k / k.sum()


def illumination_field(config, die_size, grid_pitch=0.25):
    """Relative illumination across the die for an off-axis light source.

    The field rises linearly toward the azimuth direction (0 deg = right,
    90 deg = top of the image) with strength ``tan(elevation) * 0.5``; it is
    1 everywhere at normal incidence and never drops below 0.05.
    """
    elev = config.illumination_elevation_deg
    if not (0.0 <= elev <= MAX_ELEVATION_DEG):
        raise DomainError(f"illumination elevation must lie in [0, {MAX_ELEVATION_DEG:g}] deg, got {elev}")
    from .layout import grid_shape

    rows, cols = grid_shape(die_size, grid_pitch)
    if elev == 0.0:
        return np.ones((rows, cols))
    w, h = die_size
    az = math.radians(config.illumination_azimuth_deg)
    c, s = math.cos(az), math.sin(az)
    x = (np.arange(cols) + 0.5) * grid_pitch - 0.5 * w
    y_up = 0.5 * h - (np.arange(rows) + 0.5) * grid_pitch
    norm = 0.5 * w * abs(c) + 0.5 * h * abs(s)
    proj = (x[None, :] * c + y_up[:, None] * s) / norm
    strength = math.tan(math.radians(elev)) * ILLUMINATION_K
    return np.maximum(1.0 + strength * proj, ILLUMINATION_FLOOR)


def _area_average_matrix(n_out, out_pitch, n_in, in_pitch):
    """Sparse (n_out, n_in) operator integrating piecewise-constant samples over output pixels."""
    rows, cols, vals = [], [], []
    for k in range(n_out):
        a, b = k * out_pitch, (k + 1) * out_pitch
        j0 = int(math.floor(a / in_pitch))
        j1 = min(n_in, int(math.ceil(b / in_pitch)))
        for j in range(j0, j1):
            lo = max(a, j * in_pitch)
            hi = min(b, (j + 1) * in_pitch)
            if hi > lo:
                rows.append(k)
                cols.append(j)
                vals.append((hi - lo) / out_pitch)
    m = sparse.csr_matrix((vals, (rows, cols)), shape=(n_out, n_in))
    # exact unit row sums so constant fields survive untouched
    sums = np.asarray(m.sum(axis=1)).ravel()
    return sparse.diags(1.0 / sums) @ m


def output_geometry(die_size, microns_per_pixel):
    """Pixel counts and the effective pitch so that pitch * count = die width."""
    w, h = die_size
    nx = max(1, int(round(w / microns_per_pixel)))
    pitch = w / nx
    ny = max(1, int(round(h / pitch)))
    return ny, nx, pitch


def quantize(intensity):
    """Full-scale intensity -> uint16 counts, saturating at 65535."""
    return np.clip(np.round(np.asarray(intensity) * FULL_SCALE), 0, FULL_SCALE).astype(np.uint16)


def add_noise(intensity, noise, seed):
    if not noise.enabled:
        return intensity
    rng = np.random.default_rng(seed)
    out = intensity
    if noise.read_noise_sigma > 0:
        out = out + rng.normal(0.0, noise.read_noise_sigma, intensity.shape)
    if noise.shot_noise and noise.shot_scale > 0:
        out = out + rng.standard_normal(intensity.shape) * np.sqrt(np.maximum(intensity, 0.0) * noise.shot_scale)
    return out


def _reflect_conv_matrix(n, k1):
    """Sparse (n, n) convolution with half-sample symmetric ('reflect') borders."""
    r = k1.size // 2
    i = np.repeat(np.arange(n), k1.size)
    j = i + np.tile(np.arange(-r, r + 1), n)
    w = np.tile(k1, n)
    # fold indices until they land inside [0, n)
    while True:
        lo, hi = j < 0, j >= n
        if not (lo.any() or hi.any()):
            break
        j = np.where(lo, -j - 1, j)
        j = np.where(hi, 2 * n - j - 1, j)
    return sparse.csr_matrix((w, (i, j)), shape=(n, n))


@lru_cache(maxsize=16)
def _axis_operator(n_out, out_pitch, n_in, in_pitch, sigma):
    """Blur-then-area-average along one axis as a single sparse matrix."""
    k1 = _psf_1d(sigma)
    return (_area_average_matrix(n_out, out_pitch, n_in, in_pitch) @ _reflect_conv_matrix(n_in, k1)).tocsr()


def _optical_image(layout, config, absorption, sensitivity):
    """Noise-free, unquantized image plus the effective pixel pitch."""
    g = layout.grid_pitch
    if config.microns_per_pixel < g:
        raise ConfigError(
            f"pixel pitch {config.microns_per_pixel} um is finer than the layout grid {g} um"
        )
    budget = signal_budget(config, absorption, sensitivity)
    field_ = illumination_field(config, layout.die_size, g) * layout.reflectance
    sigma = psf_sigma(config, g)
    ny, nx, pitch = output_geometry(layout.die_size, config.microns_per_pixel)
    rows, cols = layout.shape
    # separable PSF and box integration: by @ field @ bx.T
    by = _axis_operator(ny, pitch, rows, g, sigma)
    bx = _axis_operator(nx, pitch, cols, g, sigma)
    small = np.asarray(bx @ np.asarray(by @ field_).T).T
    scale = config.gain * config.exposure_s * budget.combined
    return scale * small, pitch, budget


def _metadata(layout, config, seed, pitch, budget, **extra):
    meta = {
        "microns_per_pixel": pitch,
        "seed": int(seed),
        "config": config.to_dict(),
        "die_size_um": list(layout.die_size),
        "signal_combined": budget.combined,
        "layout_provenance": layout.provenance,
    }
    meta.update(extra)
    return meta


def render(layout, config=None, absorption=None, sensitivity=None, quantized=True, seed=None):
    """Simulate one backside IR capture of ``layout``.

    pixel = quantize(gain * exposure * combined * area_average(PSF * (illum * reflectance)) + noise)

    ``seed`` defaults to ``config.seed``. With ``quantized=False`` the float
    intensity is returned, still including noise when enabled.
    """
    config = config or OpticalConfig()
    seed = config.seed if seed is None else seed
    img, pitch, budget = _optical_image(layout, config, absorption, sensitivity)
    img = add_noise(img, config.noise, derive_seed(seed, "noise"))
    pixels = quantize(img) if quantized else img
    return IrisImage(pixels, pitch, _metadata(layout, config, seed, pitch, budget))


def _tile_starts(extent, tile, step):
    if tile > extent:
        raise ConfigError(f"tile of {tile} px exceeds rendered extent of {extent} px")
    starts = list(range(0, extent - tile + 1, step))
    if starts[-1] != extent - tile:
        starts.append(extent - tile)
    return starts


def capture_tiles(layout, config, tile_px, overlap_px, jitter_px=0, seed=0, absorption=None,
                  sensitivity=None, quantized=True):
    """Simulate a stage-scanned capture of overlapping tiles.

    Tiles sit on a nominal grid with ``overlap_px`` of overlap; each true
    position adds seeded integer jitter of at most ``jitter_px`` (clamped to
    the frame). All tiles see the same illumination field; each has its own
    noise realisation derived from ``(seed, row, col)``.

    Returns ``(tiles, frame)`` where ``frame`` is the noise-free full-frame
    render the tiles were cut from.
    """
    th, tw = (tile_px, tile_px) if np.isscalar(tile_px) else tile_px
    if overlap_px < 8:
        raise ConfigError("overlap_px must be >= 8")
    if not (0 <= jitter_px < overlap_px / 2):
        raise ConfigError("jitter_px must satisfy 0 <= jitter < overlap / 2")
    if overlap_px >= min(th, tw):
        raise ConfigError("overlap_px must be smaller than the tile")
    img, pitch, budget = _optical_image(layout, config, absorption, sensitivity)
    H, W = img.shape
    ys = _tile_starts(H, th, th - overlap_px)
    xs = _tile_starts(W, tw, tw - overlap_px)
    rng = np.random.default_rng(derive_seed(seed, "jitter"))
    tiles = []
    for r, y0 in enumerate(ys):
        for c, x0 in enumerate(xs):
            jx, jy = rng.integers(-jitter_px, jitter_px + 1, size=2) if jitter_px else (0, 0)
            tx = int(np.clip(x0 + jx, 0, W - tw))
            ty = int(np.clip(y0 + jy, 0, H - th))
            crop = img[ty : ty + th, tx : tx + tw]
            tile_seed = derive_seed(seed, "tile", r, c)
            crop = add_noise(crop, config.noise, tile_seed)
            meta = _metadata(layout, config, tile_seed, pitch, budget, tile_index=[r, c],
                             nominal_offset=[x0, y0], true_offset=[tx, ty])
            pixels = quantize(crop) if quantized else crop
            tiles.append(Tile(IrisImage(pixels, pitch, meta), (x0, y0), (tx, ty), (r, c)))
    frame_pixels = quantize(img) if quantized else img
    frame = IrisImage(frame_pixels, pitch, _metadata(layout, config, seed, pitch, budget))
    return tiles, frame


# -- image files -----------------------------------------------------------


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json") if path.suffix != ".pgm" else path.with_suffix(".json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_image(image, path):
    """Write a quantized image as 16-bit PGM plus a ``.json`` metadata sidecar."""
    if not image.quantized:
        raise ValidationError("only quantized images can be saved; call quantize() first")
    path = Path(path)
    meta = dict(_jsonable(image.metadata))
    meta["microns_per_pixel"] = image.microns_per_pixel
    atomic_write_bytes(path, encode_pgm(image.pixels, FULL_SCALE))
    atomic_write_bytes(sidecar_path(path), (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())
    return path


def load_image(path, microns_per_pixel=None):
    """Read a PGM and its sidecar; ``microns_per_pixel`` is required if no sidecar exists."""
    path = Path(path)
    pixels, maxval = decode_pgm(path.read_bytes())
    if maxval != FULL_SCALE:
        pixels = np.round(pixels.astype(float) * FULL_SCALE / maxval).astype(np.uint16)
    side = sidecar_path(path)
    meta = {}
    if side.exists():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{side} byte {exc.pos}: {exc.msg}") from None
    mpp = microns_per_pixel or meta.get("microns_per_pixel")
    if mpp is None:
        raise ParseError(f"{path}: no metadata sidecar and no microns_per_pixel given")
    return IrisImage(pixels.astype(np.uint16), float(mpp), meta)
