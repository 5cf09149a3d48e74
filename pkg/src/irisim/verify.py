"""Reference-vs-sample comparison and the construction confidence score.

Images are cut into square tiles. Textured tiles are scored by normalized
cross-correlation; tiles that are flat in both images (bare silicon, pad
interiors) have no usable correlation and are scored by mean absolute
difference instead. Failing tiles are grouped into 4-connected anomaly
regions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .align import check_units
from .errors import ConfigError, UnitError
from .imager import IrisImage
from .pnm import write_pgm

DEFAULT_TILE = 16
DEFAULT_THRESHOLD = 0.85
DEFAULT_MIN_AREA = 9.0
# tile variance (full-scale units squared) below which NCC is not used
DEFAULT_VARIANCE_FLOOR = 1e-3
# mean |difference| (full-scale units) tolerated on flat tiles
DEFAULT_FLAT_TOLERANCE = 0.05
CONFIDENCE_DEFINITION = "passing tiles / scored tiles"


@dataclass(frozen=True)
class TileScore:
    row: int
    col: int
    x: int
    y: int
    ncc_score: float | None
    mean_abs_diff: float
    method: str  # "ncc" or "flat"
    passed: bool


@dataclass(frozen=True)
class AnomalyRegion:
    bbox_px: tuple  # (x0, y0, x1, y1), exclusive upper bounds
    bbox_um: tuple
    area_um2: float
    tile_count: int
    worst_ncc: float | None
    tiles: tuple = ()

    def contains_um(self, x, y):
        x0, y0, x1, y1 = self.bbox_um
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclass(frozen=True)
class ComparisonReport:
    tile_size: int
    microns_per_pixel: float
    grid_shape: tuple
    tiles: tuple
    confidence: float
    anomalies: tuple
    params: dict = field(default_factory=dict)

    @property
    def failing(self):
        return [t for t in self.tiles if not t.passed]

    def failing_set(self):
        return {(t.row, t.col) for t in self.tiles if not t.passed}

    def to_dict(self):
        return {
            "tile_size": self.tile_size,
            "microns_per_pixel": self.microns_per_pixel,
            "grid_shape": list(self.grid_shape),
            "confidence": self.confidence,
            "tiles": [asdict(t) for t in self.tiles],
            "anomalies": [
                {**asdict(a), "bbox_px": list(a.bbox_px), "bbox_um": list(a.bbox_um),
                 "tiles": [list(t) for t in a.tiles]}
                for a in self.anomalies
            ],
            "params": dict(self.params),
            "verdict": confidence_summary(self).to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class Verdict:
    status: str  # "pass" | "inspect" | "fail"
    reasons: tuple

    def to_dict(self):
        return {"status": self.status, "reasons": list(self.reasons)}

    def __str__(self):
        return f"{self.status.upper()}: " + "; ".join(self.reasons)


def _score_tile(a, b, floor, tolerance, threshold):
    mad = float(np.mean(np.abs(a - b)))
    if max(a.var(), b.var()) < floor:
        return None, mad, "flat", mad <= tolerance
    a0 = a - a.mean()
    b0 = b - b.mean()
    den = np.sqrt(np.sum(a0 * a0) * np.sum(b0 * b0))
    score = float(np.sum(a0 * b0) / den) if den > 0 else 0.0
    return score, mad, "ncc", score >= threshold


def compare(reference, sample, tile_size=DEFAULT_TILE, ncc_threshold=DEFAULT_THRESHOLD,
            min_anomaly_area=DEFAULT_MIN_AREA, variance_floor=DEFAULT_VARIANCE_FLOOR,
            flat_tolerance=DEFAULT_FLAT_TOLERANCE):
    """Tile-wise comparison of two registered images of the same die.

    Only whole tiles are scored; a partial strip on the right/bottom edge is
    ignored. ``confidence`` is the fraction of scored tiles that pass.
    """
    if reference.shape != sample.shape:
        raise UnitError(f"image dimensions differ: {reference.shape} vs {sample.shape}")
    check_units(reference, sample, tolerance=1e-9)
    h, w = reference.shape
    if tile_size < 2 or tile_size > min(h, w):
        raise ConfigError(f"tile_size {tile_size} does not fit a {h}x{w} image")
    a = reference.as_fraction()
    b = sample.as_fraction()
    ny, nx = h // tile_size, w // tile_size
    tiles = []
    fail = np.zeros((ny, nx), dtype=bool)
    for r in range(ny):
        for c in range(nx):
            y, x = r * tile_size, c * tile_size
            ta = a[y : y + tile_size, x : x + tile_size]
            tb = b[y : y + tile_size, x : x + tile_size]
            score, mad, method, ok = _score_tile(ta, tb, variance_floor, flat_tolerance, ncc_threshold)
            tiles.append(TileScore(r, c, x, y, score, mad, method, bool(ok)))
            fail[r, c] = not ok
    mpp = reference.microns_per_pixel
    tile_area = (tile_size * mpp) ** 2
    labels, n = ndimage.label(fail, structure=ndimage.generate_binary_structure(2, 1))
    by_pos = {(t.row, t.col): t for t in tiles}
    anomalies = []
    for k in range(1, n + 1):
        rr, cc = np.nonzero(labels == k)
        area = len(rr) * tile_area
        if area < min_anomaly_area:
            continue
        x0, x1 = int(cc.min()) * tile_size, (int(cc.max()) + 1) * tile_size
        y0, y1 = int(rr.min()) * tile_size, (int(rr.max()) + 1) * tile_size
        scores = [by_pos[(r, c)].ncc_score for r, c in zip(rr, cc) if by_pos[(r, c)].ncc_score is not None]
        anomalies.append(AnomalyRegion(
            bbox_px=(x0, y0, x1, y1),
            bbox_um=(x0 * mpp, y0 * mpp, x1 * mpp, y1 * mpp),
            area_um2=area,
            tile_count=len(rr),
            worst_ncc=min(scores) if scores else None,
            tiles=tuple((int(r), int(c)) for r, c in zip(rr, cc)),
        ))
    anomalies.sort(key=lambda a: (a.bbox_px[1], a.bbox_px[0]))
    n_pass = sum(t.passed for t in tiles)
    params = {
        "tile_size": tile_size,
        "ncc_threshold": ncc_threshold,
        "min_anomaly_area_um2": min_anomaly_area,
        "variance_floor": variance_floor,
        "flat_tolerance": flat_tolerance,
        "confidence_definition": CONFIDENCE_DEFINITION,
        "connectivity": 4,
    }
    return ComparisonReport(tile_size, mpp, (ny, nx), tuple(tiles), n_pass / len(tiles), tuple(anomalies), params)


def confidence_summary(report):
    """Reduce a report to pass / inspect / fail with human-readable reasons."""
    n_fail = len(report.failing)
    if report.confidence == 1.0:
        return Verdict("pass", (f"all {len(report.tiles)} tiles match the reference",))
    if report.anomalies:
        reasons = [f"{len(report.anomalies)} anomalous region(s); confidence {report.confidence:.4f}"]
        for a in report.anomalies:
            x0, y0, x1, y1 = a.bbox_um
            worst = "n/a" if a.worst_ncc is None else f"{a.worst_ncc:.3f}"
            reasons.append(
                f"region x=[{x0:.1f}, {x1:.1f}] um, y=[{y0:.1f}, {y1:.1f}] um, "
                f"{a.area_um2:.1f} um^2 over {a.tile_count} tile(s), worst NCC {worst}"
            )
        return Verdict("fail", tuple(reasons))
    return Verdict("inspect", (
        f"{n_fail} failing tile(s) but no connected region reaches "
        f"{report.params.get('min_anomaly_area_um2', DEFAULT_MIN_AREA)} um^2",
    ))


def heatmap(report, sample):
    """8-bit overlay: the sample dimmed to half range, failing tiles saturated."""
    base = np.clip(sample.as_fraction(), 0, 1) * 127
    out = np.round(base).astype(np.uint8)
    t = report.tile_size
    for tile in report.failing:
        out[tile.y : tile.y + t, tile.x : tile.x + t] = 255
    return out


def write_heatmap(report, sample, path):
    write_pgm(path, heatmap(report, sample), maxval=255)
