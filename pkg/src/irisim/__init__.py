"""Simulation and verification toolkit for backside infrared chip inspection."""

__version__ = "0.1.0"

from .errors import IrisError
from .optics import (
    NoiseParams,
    OpticalConfig,
    SignalBudget,
    SpectralCurve,
    absorption_depth,
    default_absorption_curve,
    default_sensitivity_curve,
    diffraction_limit,
    microns_per_pixel,
    sensor_sensitivity,
    signal_budget,
    transmission,
)
from .layout import (
    BlockKind,
    DieLayout,
    Region,
    ScaleClass,
    classify_scale,
    fig12_like_plan,
    inject_trojan,
    load_layout,
    save_layout,
    synthesize_layout,
)
from .imager import IrisImage, capture_tiles, illumination_field, load_image, psf_kernel, render, save_image
from .align import Offset, normalize_intensity, register, stitch
from .verify import ComparisonReport, compare, confidence_summary
from .hardening import HardeningBudget, ProcessNode, bypass_area, get_node, load_nodes, min_detectable_area, required_state_bits
