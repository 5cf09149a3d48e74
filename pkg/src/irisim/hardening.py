"""Self-test state sizing against bypass trojans.

A stateful self-test can only be spoofed by logic that grows with the
accumulated state: roughly one flip-flop plus a few gates per bit. Once
that logic is larger than the smallest modification the IR camera can see,
a bypass cannot hide.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import DomainError, ParseError, ValidationError

NODES_CSV = "process_nodes.csv"
NODE_COLUMNS = ["name", "feature_nm", "cell_height_um", "nand2_area_um2", "flipflop_area_um2"]
DEFAULT_GATES_PER_BIT = 4
DEFAULT_PIXELS_REQUIRED = 4


@dataclass(frozen=True)
class ProcessNode:
    name: str
    feature_nm: float
    cell_height_um: float
    nand2_area_um2: float
    flipflop_area_um2: float

    def __post_init__(self):
        if not (self.cell_height_um > 0 and self.nand2_area_um2 > 0 and self.flipflop_area_um2 > 0):
            raise ValidationError(f"node {self.name}: all dimensions must be positive")
        if not self.flipflop_area_um2 > self.nand2_area_um2:
            raise ValidationError(f"node {self.name}: flip-flop must be larger than a NAND2")

    def scaled(self, factor):
        """Copy with both cell areas multiplied by ``factor`` (a shrink emulation)."""
        return replace(
            self,
            name=f"{self.name}x{factor:g}",
            nand2_area_um2=self.nand2_area_um2 * factor,
            flipflop_area_um2=self.flipflop_area_um2 * factor,
        )


@dataclass(frozen=True)
class HardeningBudget:
    node: ProcessNode
    microns_per_pixel: float
    pixels_required: int
    gates_per_bit: int
    min_detectable_area: float
    per_bit_area: float
    required_bits: int
    bypass_area_at_required: float

    def to_dict(self):
        d = asdict(self)
        d["node"] = asdict(self.node)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self):
        rows = [
            ("node", self.node.name),
            ("cell height", f"{self.node.cell_height_um:g} um"),
            ("NAND2 area", f"{self.node.nand2_area_um2:g} um^2"),
            ("flip-flop area", f"{self.node.flipflop_area_um2:g} um^2"),
            ("gates per bit", f"{self.gates_per_bit}"),
            ("area per bit", f"{self.per_bit_area:.4g} um^2"),
            ("pixel pitch", f"{self.microns_per_pixel:g} um/px"),
            ("pixels required", f"{self.pixels_required}"),
            ("min detectable area", f"{self.min_detectable_area:.4g} um^2"),
            ("required state bits", f"{self.required_bits}"),
            ("bypass area at required", f"{self.bypass_area_at_required:.4g} um^2"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def parse_nodes_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != NODE_COLUMNS:
        raise ParseError(f"line 1: expected header {','.join(NODE_COLUMNS)}")
    nodes = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(NODE_COLUMNS):
            raise ParseError(f"line {lineno}: expected {len(NODE_COLUMNS)} columns")
        try:
            node = ProcessNode(row[0].strip(), *(float(v) for v in row[1:]))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        nodes[node.name] = node
    return nodes


@lru_cache(maxsize=None)
def _bundled_nodes():
    return parse_nodes_csv(resources.files("irisim").joinpath("data", NODES_CSV).read_text(encoding="utf-8"))


def load_nodes(path=None):
    """Node table by name; the bundled table when ``path`` is None.

    Only the 28 nm row is anchored to a published cell height; the 55 nm
    and 7 nm rows are illustrative.
    """
    if path is None:
        return dict(_bundled_nodes())
    return parse_nodes_csv(Path(path).read_text(encoding="utf-8"))


def get_node(name, path=None):
    nodes = load_nodes(path)
    if name not in nodes:
        raise KeyError(f"unknown process node {name!r}; available: {', '.join(sorted(nodes))}")
    return nodes[name]


def bypass_area(bits, node, gates_per_bit=DEFAULT_GATES_PER_BIT):
    """Silicon area of the extra logic needed to spoof ``bits`` of test state."""
    if bits < 0 or gates_per_bit < 0:
        raise DomainError("bits and gates_per_bit must be non-negative")
    return bits * (node.flipflop_area_um2 + gates_per_bit * node.nand2_area_um2)


def min_detectable_area(microns_per_pixel, pixels_required=DEFAULT_PIXELS_REQUIRED):
    """Smallest modification (um^2) that disturbs ``pixels_required`` pixels.

    ``microns_per_pixel`` may also be an OpticalConfig.
    """
    mpp = getattr(microns_per_pixel, "microns_per_pixel", microns_per_pixel)
    if pixels_required < 1:
        raise DomainError("pixels_required must be >= 1")
    return pixels_required * mpp**2


def required_state_bits(node, config, gates_per_bit=DEFAULT_GATES_PER_BIT,
                        pixels_required=DEFAULT_PIXELS_REQUIRED):
    """Fewest checksum bits whose bypass logic is at least the detectable area."""
    mpp = getattr(config, "microns_per_pixel", config)
    target = min_detectable_area(mpp, pixels_required)
    per_bit = bypass_area(1, node, gates_per_bit)
    if per_bit <= 0:
        raise DomainError("per-bit bypass area is zero; no amount of state makes a bypass visible")
    bits = max(1, math.ceil(target / per_bit))
    # guard the ceil against round-off in either direction
    while bits > 1 and bypass_area(bits - 1, node, gates_per_bit) >= target:
        bits -= 1
    while bypass_area(bits, node, gates_per_bit) < target:
        bits += 1
    return HardeningBudget(
        node=node,
        microns_per_pixel=mpp,
        pixels_required=pixels_required,
        gates_per_bit=gates_per_bit,
        min_detectable_area=target,
        per_bit_area=per_bit,
        required_bits=bits,
        bypass_area_at_required=bypass_area(bits, node, gates_per_bit),
    )
