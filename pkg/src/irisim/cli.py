"""``irisim`` command-line entry point.

Exit codes: 0 success / compare pass, 1 validation error, 2 usage error,
3 compare fail, 4 compare inspect.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import os
import sys
from contextlib import contextmanager
from importlib import resources
from pathlib import Path

from . import __version__
from .align import register, stitch
from .errors import IrisError, StitchQualityError
from .hardening import DEFAULT_GATES_PER_BIT, DEFAULT_PIXELS_REQUIRED, load_nodes, required_state_bits
from .imager import capture_tiles, derive_seed, load_image, render, save_image, sidecar_path
from .layout import inject_trojan, load_layout, load_plan, save_layout, synthesize_layout
from .optics import (
    OpticalConfig,
    default_absorption_curve,
    default_sensitivity_curve,
    load_curves_dir,
    signal_budget,
)
from .pnm import atomic_write_bytes
from .verify import compare, confidence_summary, write_heatmap

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_FAIL, EXIT_INSPECT = 0, 1, 2, 3, 4
BUILTIN_PLANS = {"fig12": "fig12_plan.json", "fig12-512": "fig12_512px_plan.json"}
MANIFEST_FORMAT = "irisim-manifest/1"


class UsageError(Exception):
    pass


# -- argument types ----------------------------------------------------------


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v
    return conv


def _nonneg(kind):
    def conv(text):
        v = kind(text)
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
        return v
    return conv


def _pair(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y got {text!r}") from None
    return x, y


def _sweep(text):
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:STOP:STEP got {text!r}") from None
    if step <= 0 or stop < start or start < 0:
        raise argparse.ArgumentTypeError("sweep needs 0 <= START <= STOP and STEP > 0")
    n = int(round((stop - start) / step)) + 1
    return [start + i * step for i in range(n)]


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def _config(path):
    if path is None:
        return OpticalConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IrisError(f"{path} byte {exc.pos}: {exc.msg}") from None
    return OpticalConfig.from_dict(data)


def _curves(args):
    if getattr(args, "curves_dir", None):
        return load_curves_dir(args.curves_dir)
    return default_absorption_curve(), default_sensitivity_curve()


# -- subcommands -------------------------------------------------------------


def cmd_budget(args, out):
    absorption, sensitivity = _curves(args)
    base = OpticalConfig()
    thicknesses = args.sweep_thickness_um or [args.thickness_um]
    rows = []
    try:
        for t in thicknesses:
            cfg = base.replace(wavelength_nm=args.wavelength_nm, silicon_thickness_um=t, passes=args.passes)
            rows.append((cfg, signal_budget(cfg, absorption, sensitivity, args.base_exposure_s)))
    except IrisError as exc:
        raise UsageError(str(exc)) from None

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["wavelength_nm", "thickness_um", "passes", "transmission", "sensitivity",
                     "combined", "reduction_factor", "suggested_exposure_s"])
    for cfg, b in rows:
        writer.writerow([f"{cfg.wavelength_nm:g}", f"{cfg.silicon_thickness_um:g}", cfg.passes,
                         f"{b.transmission:.6g}", f"{b.sensitivity:.6g}", f"{b.combined:.6g}",
                         f"{b.reduction_factor:.6g}", f"{b.suggested_exposure:.6g}"])
    outputs = {}
    if args.csv:
        _write_text(args.csv, buf.getvalue())
        outputs["csv"] = args.csv
    if args.sweep_thickness_um:
        if not args.csv:
            out.write(buf.getvalue())
    else:
        cfg, b = rows[0]
        out.write(f"signal budget at {cfg.wavelength_nm:g} nm, {cfg.silicon_thickness_um:g} um silicon, "
                  f"{cfg.passes} pass(es)\n")
        out.write(f"{'quantity':<14}{'value':>12}{'reduction':>12}\n")
        for name, v in (("transmission", b.transmission), ("sensitivity", b.sensitivity), ("combined", b.combined)):
            out.write(f"{name:<14}{v:>12.4f}{1.0 / v:>11.1f}x\n")
        out.write(f"reduction factor    {b.reduction_factor:.1f}\n")
        out.write(f"suggested exposure  {b.suggested_exposure:.2f} s (base {args.base_exposure_s:g} s)\n")
    return EXIT_OK, outputs, {}


def _plan_path(spec):
    if spec in BUILTIN_PLANS:
        return resources.files("irisim").joinpath("data", BUILTIN_PLANS[spec])
    return Path(spec)


def cmd_synth(args, out):
    die_size, regions, pitch = load_plan(_plan_path(args.plan))
    if args.grid_pitch_um:
        pitch = args.grid_pitch_um
    seed = derive_seed(args.seed, "synth")
    layout = synthesize_layout(die_size, regions, seed, grid_pitch=pitch,
                               provenance=f"irisim synth plan={Path(str(args.plan)).name} seed={args.seed}")
    json_path = save_layout(layout, args.out)
    out.write(f"layout {layout.die_size[0]:g} x {layout.die_size[1]:g} um, grid {layout.shape[1]} x "
              f"{layout.shape[0]} at {pitch:g} um -> {json_path}\n")
    out_dir = Path(args.out)
    return EXIT_OK, {"layout": json_path, "reflectance": out_dir / "reflectance.pgm"}, {"texture_seed": seed}


def cmd_render(args, out):
    layout = load_layout(args.layout)
    cfg = _config(args.config)
    if args.um_per_px:
        cfg = cfg.replace(microns_per_pixel=args.um_per_px)
    seed = derive_seed(args.seed, "render")
    absorption, sensitivity = _curves(args)
    img = render(layout, cfg, absorption, sensitivity, seed=seed)
    save_image(img, args.out)
    h, w = img.shape
    out.write(f"rendered {w} x {h} px at {img.microns_per_pixel:.6g} um/px -> {args.out}\n")
    return EXIT_OK, {"image": args.out, "metadata": sidecar_path(args.out)}, {"noise_seed": seed}


def cmd_inject(args, out):
    layout = load_layout(args.layout)
    modified = inject_trojan(layout, args.center_um, args.area_um2, args.delta)
    json_path = save_layout(modified, args.out)
    out.write(f"injected {args.area_um2:g} um^2 (delta {args.delta:+g}) at {args.center_um} -> {json_path}\n")
    return EXIT_OK, {"layout": json_path, "reflectance": Path(args.out) / "reflectance.pgm"}, {}


def cmd_capture(args, out):
    layout = load_layout(args.layout)
    cfg = _config(args.config)
    seed = derive_seed(args.seed, "capture")
    absorption, sensitivity = _curves(args)
    tiles, frame = capture_tiles(layout, cfg, args.tile_px, args.overlap_px, args.jitter_px, seed,
                                 absorption, sensitivity)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    index = []
    for t in tiles:
        r, c = t.index
        name = f"tile_r{r:02d}_c{c:02d}.pgm"
        save_image(t.image, out_dir / name)
        outputs[name] = out_dir / name
        outputs[name[:-4] + ".json"] = out_dir / (name[:-4] + ".json")
        index.append({"file": name, "index": [r, c], "nominal_offset": list(t.nominal_offset),
                      "true_offset": list(t.true_offset)})
    if args.frame:
        save_image(frame, args.frame)
        outputs["frame"] = args.frame
        outputs["frame_metadata"] = sidecar_path(args.frame)
    _write_text(out_dir / "tiles.json", json.dumps({"tiles": index, "overlap_px": args.overlap_px},
                                                   indent=2, sort_keys=True) + "\n")
    outputs["index"] = out_dir / "tiles.json"
    out.write(f"captured {len(tiles)} tiles of {args.tile_px} px -> {out_dir}\n")
    return EXIT_OK, outputs, {"capture_seed": seed}


def cmd_register(args, out):
    ref = load_image(args.ref)
    sample = load_image(args.sample)
    off = register(ref, sample, args.radius_px)
    out.write(f"dx={off.dx} dy={off.dy} score={off.score:.3f}\n")
    outputs = {}
    if args.json:
        _write_text(args.json, json.dumps(off.to_dict(), sort_keys=True) + "\n")
        outputs["json"] = args.json
    return EXIT_OK, outputs, {}


def _read_tiles(directory):
    directory = Path(directory)
    index_path = directory / "tiles.json"
    entries = []
    if index_path.exists():
        for rec in json.loads(index_path.read_text())["tiles"]:
            entries.append((load_image(directory / rec["file"]), tuple(rec["nominal_offset"])))
    else:
        for p in sorted(directory.glob("*.pgm")):
            img = load_image(p)
            if "nominal_offset" not in img.metadata:
                raise IrisError(f"{p}: sidecar lacks nominal_offset")
            entries.append((img, tuple(img.metadata["nominal_offset"])))
    if not entries:
        raise IrisError(f"no tiles found in {directory}")
    return entries


def cmd_stitch(args, out):
    entries = _read_tiles(args.tiles)
    try:
        mosaic = stitch(entries, args.overlap_px, args.radius_px)
    except StitchQualityError as exc:
        out.write(f"stitch failed: {exc}\n")
        return EXIT_VALIDATION, {}, {}
    report = mosaic.metadata["stitch_report"]
    save_image(mosaic, args.out)
    outputs = {"mosaic": args.out, "metadata": sidecar_path(args.out)}
    if args.report:
        _write_text(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")
        outputs["report"] = args.report
    h, w = mosaic.shape
    out.write(f"stitched {len(entries)} tiles into {w} x {h} px -> {args.out}\n")
    for rec in report["pairs"]:
        out.write(f"  {tuple(rec['a'])}-{tuple(rec['b'])} offset={tuple(rec['refined'])} score={rec['score']:.3f}\n")
    return EXIT_OK, outputs, {}


def cmd_compare(args, out):
    ref = load_image(args.ref)
    sample = load_image(args.sample)
    report = compare(ref, sample, args.tile_px, args.threshold, args.min_area_um2)
    verdict = confidence_summary(report)
    outputs = {}
    if args.report:
        _write_text(args.report, report.to_json())
        outputs["report"] = args.report
    if args.heatmap:
        write_heatmap(report, sample, args.heatmap)
        outputs["heatmap"] = args.heatmap
    out.write(f"confidence={report.confidence:.4f} anomalies={len(report.anomalies)}\n{verdict}\n")
    code = {"pass": EXIT_OK, "fail": EXIT_FAIL, "inspect": EXIT_INSPECT}[verdict.status]
    return code, outputs, {}


def cmd_bits(args, out):
    nodes = load_nodes(args.nodes_csv)
    if args.node not in nodes:
        raise UsageError(f"unknown node {args.node!r}; available nodes: {', '.join(sorted(nodes))}")
    budget = required_state_bits(nodes[args.node], args.um_per_px, args.gates_per_bit, args.pixels)
    out.write(budget.table())
    outputs = {}
    if args.json:
        _write_text(args.json, budget.to_json())
        outputs["json"] = args.json
    return EXIT_OK, outputs, {}


def cmd_replay(args, out):
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if manifest.get("format") != MANIFEST_FORMAT:
        raise IrisError(f"{args.manifest}: not an irisim manifest")
    recorded = manifest["outputs"]
    with _cwd(manifest["cwd"]):
        code = main(manifest["argv"], stdout=io.StringIO(), write_manifest=False)
        current = {name: _sha256(rec["path"]) for name, rec in recorded.items() if Path(rec["path"]).exists()}
    mismatched = [n for n, rec in recorded.items() if current.get(n) != rec["sha256"]]
    if code != manifest["exit_code"]:
        out.write(f"exit code changed: {manifest['exit_code']} -> {code}\n")
        return EXIT_VALIDATION, {}, None
    if mismatched:
        out.write("outputs differ: " + ", ".join(sorted(mismatched)) + "\n")
        return EXIT_VALIDATION, {}, None
    out.write(f"replayed {manifest['subcommand']}: {len(recorded)} output(s) byte-identical\n")
    return EXIT_OK, {}, None


@contextmanager
def _cwd(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


# -- parser ------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="irisim", description="Backside infrared chip inspection toolkit.")
    p.add_argument("--version", action="version", version=f"irisim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--manifest", metavar="PATH", help="where to write the run manifest JSON")
        return sp

    sp = add("budget", cmd_budget, "Silicon transmission x sensor sensitivity signal budget.")
    sp.add_argument("--wavelength-nm", type=_positive(float), default=1070.0, help="illumination wavelength (nm)")
    sp.add_argument("--thickness-um", type=_nonneg(float), default=300.0, help="backside silicon thickness (um)")
    sp.add_argument("--passes", type=int, choices=(1, 2), default=1, help="passes through the silicon")
    sp.add_argument("--base-exposure-s", type=_positive(float), default=0.033,
                    help="visible-light reference exposure (s)")
    sp.add_argument("--curves-dir", metavar="DIR", help="directory with absorption/sensitivity CSVs")
    sp.add_argument("--sweep-thickness-um", "--sweep-thickness", dest="sweep_thickness_um", type=_sweep,
                    metavar="START:STOP:STEP", help="sweep silicon thickness (um) and emit CSV")
    sp.add_argument("--csv", metavar="PATH", help="also write the rows as CSV")

    sp = add("synth", cmd_synth, "Synthesize a die layout from a region plan.")
    sp.add_argument("--plan", required=True, help=f"plan JSON path or builtin: {', '.join(BUILTIN_PLANS)}")
    sp.add_argument("--seed", type=_nonneg(int), default=0, help="base random seed")
    sp.add_argument("--grid-pitch-um", type=_positive(float), help="override the plan's grid pitch (um)")
    sp.add_argument("--out", required=True, metavar="DIR", help="output layout directory")

    sp = add("render", cmd_render, "Render a layout to a 16-bit PGM backside image.")
    sp.add_argument("--layout", required=True, metavar="DIR")
    sp.add_argument("--config", metavar="JSON", help="optical config JSON (defaults otherwise)")
    sp.add_argument("--um-per-px", type=_positive(float), help="override pixel pitch (um/px)")
    sp.add_argument("--curves-dir", metavar="DIR")
    sp.add_argument("--seed", type=_nonneg(int), default=0, help="base random seed")
    sp.add_argument("--out", required=True, metavar="PGM")

    sp = add("inject", cmd_inject, "Inject a square reflectance modification into a layout.")
    sp.add_argument("--layout", required=True, metavar="DIR")
    sp.add_argument("--center-um", required=True, type=_pair, metavar="X,Y", help="centre (um)")
    sp.add_argument("--area-um2", required=True, type=_nonneg(float), help="modified area (um^2)")
    sp.add_argument("--delta", required=True, type=float, help="signed reflectance change")
    sp.add_argument("--out", required=True, metavar="DIR")

    sp = add("capture", cmd_capture, "Capture overlapping jittered tiles of a layout.")
    sp.add_argument("--layout", required=True, metavar="DIR")
    sp.add_argument("--config", metavar="JSON")
    sp.add_argument("--curves-dir", metavar="DIR")
    sp.add_argument("--tile-px", type=_positive(int), default=128, help="tile edge (px)")
    sp.add_argument("--overlap-px", type=_positive(int), default=32, help="nominal overlap (px)")
    sp.add_argument("--jitter-px", type=_nonneg(int), default=0, help="max stage jitter (px)")
    sp.add_argument("--seed", type=_nonneg(int), default=0)
    sp.add_argument("--frame", metavar="PGM", help="also save the noise-free full frame")
    sp.add_argument("--out", required=True, metavar="DIR")

    sp = add("register", cmd_register, "Find the integer shift of a sample relative to a reference.")
    sp.add_argument("--ref", required=True, metavar="PGM")
    sp.add_argument("--sample", required=True, metavar="PGM")
    sp.add_argument("--radius-px", "--radius", dest="radius_px", type=_nonneg(int), default=8,
                    help="search radius (px)")
    sp.add_argument("--json", metavar="PATH")

    sp = add("stitch", cmd_stitch, "Stitch a directory of tiles into a mosaic.")
    sp.add_argument("--tiles", required=True, metavar="DIR")
    sp.add_argument("--overlap-px", "--overlap", dest="overlap_px", type=_positive(int), default=32,
                    help="feathering width / nominal overlap (px)")
    sp.add_argument("--radius-px", "--radius", dest="radius_px", type=_nonneg(int), default=8,
                    help="search radius (px)")
    sp.add_argument("--out", required=True, metavar="PGM")
    sp.add_argument("--report", metavar="JSON")

    sp = add("compare", cmd_compare, "Compare a sample image against a reference.")
    sp.add_argument("--ref", required=True, metavar="PGM")
    sp.add_argument("--sample", required=True, metavar="PGM")
    sp.add_argument("--tile-px", "--tile", dest="tile_px", type=_positive(int), default=16, help="tile edge (px)")
    sp.add_argument("--threshold", type=float, default=0.85, help="per-tile NCC pass threshold")
    sp.add_argument("--min-area-um2", type=_nonneg(float), default=9.0, help="smallest reported anomaly (um^2)")
    sp.add_argument("--report", metavar="JSON")
    sp.add_argument("--heatmap", metavar="PGM", help="8-bit failing-tile overlay")

    sp = add("bits", cmd_bits, "Size self-test checksum state so bypass logic is IR-visible.")
    sp.add_argument("--node", default="28nm", help="process node name from the node table")
    sp.add_argument("--nodes-csv", metavar="CSV", help="alternative node table")
    sp.add_argument("--um-per-px", type=_positive(float), default=1.67, help="pixel pitch (um/px)")
    sp.add_argument("--gates-per-bit", type=_nonneg(int), default=DEFAULT_GATES_PER_BIT)
    sp.add_argument("--pixels", type=_positive(int), default=DEFAULT_PIXELS_REQUIRED,
                    help="pixels a modification must disturb")
    sp.add_argument("--json", metavar="PATH")

    sp = sub.add_parser("replay", help="Re-run a manifest and verify outputs are byte-identical.")
    sp.set_defaults(func=cmd_replay)
    sp.add_argument("manifest", metavar="MANIFEST")
    return p


def _default_manifest_path(args, outputs):
    out = getattr(args, "out", None)
    if out is not None:
        out = Path(out)
        return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
    for key in ("report", "csv", "json"):
        val = getattr(args, key, None)
        if val:
            return Path(val).with_name(Path(val).name + ".manifest.json")
    return None


def _write_manifest(args, argv, code, outputs, derived):
    path = Path(args.manifest) if args.manifest else _default_manifest_path(args, outputs)
    if path is None:
        return
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()
              if k not in ("func", "manifest", "command")}
    inputs = {}
    for key in ("layout", "config", "ref", "sample", "plan", "tiles", "nodes_csv"):
        val = getattr(args, key, None)
        if not val or (key == "plan" and val in BUILTIN_PLANS):
            continue
        p = Path(val)
        if p.is_dir():
            p = next((p / n for n in ("layout.json", "tiles.json") if (p / n).exists()), p)
        if p.is_file():
            inputs[key] = {"path": str(p), "sha256": _sha256(p)}
    manifest = {
        "format": MANIFEST_FORMAT,
        "tool": "irisim",
        "version": __version__,
        "subcommand": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "parameters": params,
        "seed": getattr(args, "seed", None),
        "derived_seeds": derived,
        "inputs": inputs,
        "outputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in outputs.items()},
        "exit_code": code,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def main(argv=None, stdout=None, write_manifest=True):
    argv = list(sys.argv[1:] if argv is None else argv)
    out = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        code, outputs, derived = args.func(args, out)
    except UsageError as exc:
        sys.stderr.write(f"irisim {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except (IrisError, KeyError, OSError, ValueError) as exc:
        sys.stderr.write(f"irisim {args.command}: {type(exc).__name__}: {exc}\n")
        return EXIT_VALIDATION
    if write_manifest and derived is not None:
        _write_manifest(args, argv, code, outputs, derived)
    return code


if __name__ == "__main__":
    sys.exit(main())
