"""The two studies: the defect-curvature response sweep and the scratch plate.

Response sweep
--------------
For each system mode, render the single-pixel output of the four detection
items (fringe modulation, uniform illumination, type-1 and type-2 binary
patterns) while the punctate-defect curvature w increases, then normalize by
the flat-plate output.  Every flux item carries a constant ambient pedestal
(the environment-only flux of the footprint) so the type-2 normalization is
well defined even though its flat-plate screen flux is exactly zero.

Scratch plate
-------------
Render the ten-groove plate under the four items, stretch to 8 bits, extract
a cross-scratch profile, compute peak-to-valley values and robust detection
masks.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from scipy import ndimage

from . import optics
from .flux import (FluxImage, ModulationImage, footprint_from_heightmap,
                   modulation_values, pixel_flux, render_images)
from .optics import SystemGeometry, trace_batch, with_env_illuminance
from .patterns import (ScreenPattern, binary_type1, binary_type2, core_region,
                       fringes, uniform, write_pgm)
from .surface import (DefectParams, HeightMap, Material, ScratchSpec,
                      add_rim_bevel, flat_plate, paper_scratch_spec,
                      punctate_defect, scratch_plate)

ITEMS = ("modulation", "uniform", "type1", "type2")
SYSTEMS = ("reflection", "transmission")


class DegenerateBaselineError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    """Configuration of the w-sweep study."""

    w_values: tuple[float, ...] = tuple(float(w) for w in range(21))
    systems: tuple[str, ...] = SYSTEMS
    L0: float = 2000.0
    fringe_bias: float = 1000.0
    fringe_amplitude: float = 1000.0
    fringe_period: float = 16.0
    fringe_steps: int = 4
    fringe_orientation: str = "x"
    core_margin: int = 2
    # half-width of the camera ROI (pixels) whose flat-plate image defines
    # the core region; sized per system so deviated rays start leaving the
    # core inside the sweep range
    core_fov_reflection: int = 560
    core_fov_transmission: int = 105
    defect_grid: int = 100
    defect_pitch: float = 2.0   # um per Element
    env_fraction: float = 0.01
    material: Material = field(default_factory=Material)
    geometries: dict | None = None   # optional pre-built SystemGeometry per mode

    def __post_init__(self):
        if len(self.w_values) == 0:
            raise ValueError("sweep.w_values must be non-empty")
        if self.w_values[0] != 0.0:
            raise ValueError("sweep.w_values must start at 0")
        if any(b < a for a, b in zip(self.w_values, self.w_values[1:])):
            raise ValueError("sweep.w_values must be sorted ascending")
        if any(w < 0 for w in self.w_values):
            raise ValueError("sweep.w_values must be >= 0")
        for s in self.systems:
            if s not in SYSTEMS:
                raise ValueError(f"sweep.systems: unknown system {s!r}")


@dataclass(frozen=True)
class ResponseCurve:
    """Relative responses per item and system over the w sweep."""

    rows: tuple[tuple[float, str, str, float], ...]   # (w, item, system, value)

    def __post_init__(self):
        for w, item, system, value in self.rows:
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"ResponseCurve: bad value {value!r} for "
                                 f"{item}/{system} at w={w}")
            if w == 0.0 and value != 1.0:
                raise ValueError("ResponseCurve: w=0 must normalize to exactly 1")

    def series(self, item: str, system: str) -> tuple[np.ndarray, np.ndarray]:
        pts = [(w, v) for w, it, sy, v in self.rows if it == item and sy == system]
        ws = np.array([p[0] for p in pts])
        vs = np.array([p[1] for p in pts])
        return ws, vs

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["w", "item", "system", "relative_value"])
            for w, item, system, value in self.rows:
                writer.writerow([f"{w:g}", item, system, repr(value)])


def build_geometry(mode: str, L0: float, material: Material,
                   env_fraction: float, **geometry_kwargs) -> SystemGeometry:
    geom = optics.default_geometry(mode, **geometry_kwargs)
    return with_env_illuminance(geom, L0, material, env_fraction)


def fov_flat_plate(geom: SystemGeometry, fov_half_px,
                   plate_pitch_um: float = 100.0,
                   level: float = 100.0) -> HeightMap:
    """Flat plate spanning the footprint of a centered camera ROI.

    `fov_half_px` is the ROI half-width in camera pixels, either a scalar or
    an (x, y) pair.
    """
    half = np.broadcast_to(np.asarray(fov_half_px, dtype=float), (2,))
    dist = float(np.linalg.norm(geom.camera.pinhole - geom.surface_pose.origin))
    scale = geom.camera.footprint_scale(dist) * 1.02
    nx = max(2, int(np.ceil(2 * half[0] * scale * 1000.0 / plate_pitch_um)))
    ny = max(2, int(np.ceil(2 * half[1] * scale * 1000.0 / plate_pitch_um)))
    return flat_plate(nx, ny, plate_pitch_um, level=level)


def _sweep_patterns(cfg: SweepConfig, geom: SystemGeometry, mode: str):
    fov = (cfg.core_fov_reflection if mode == "reflection"
           else cfg.core_fov_transmission)
    plate = fov_flat_plate(geom, fov)
    core = core_region(geom, plate, cfg.material, margin=cfg.core_margin)
    pats = {
        "uniform": uniform(cfg.L0, geom.screen.width, geom.screen.height,
                           geom.screen.pixel_pitch),
        "type1": binary_type1(core, cfg.L0),
        "type2": binary_type2(core, cfg.L0),
    }
    fringe_set = fringes(cfg.fringe_bias, cfg.fringe_amplitude,
                         cfg.fringe_period, cfg.fringe_steps,
                         cfg.fringe_orientation, geom.screen.width,
                         geom.screen.height, geom.screen.pixel_pitch)
    return pats, fringe_set, core


def response_sweep(cfg: SweepConfig) -> ResponseCurve:
    """Run the w sweep for every configured system."""
    rows: list[tuple[float, str, str, float]] = []
    for mode in cfg.systems:
        if cfg.geometries and mode in cfg.geometries:
            geom = cfg.geometries[mode]
        else:
            geom = build_geometry(mode, cfg.L0, cfg.material, cfg.env_fraction)
        pats, fringe_set, _ = _sweep_patterns(cfg, geom, mode)

        raw: dict[str, list[float]] = {item: [] for item in ITEMS}
        pedestal = None
        for w in cfg.w_values:
            hmap = punctate_defect(
                DefectParams(w=w, grid=(cfg.defect_grid, cfg.defect_grid)),
                pitch=cfg.defect_pitch)
            fp = footprint_from_heightmap(geom, hmap)
            trace = trace_batch(geom, fp.centers, fp.normals, cfg.material)
            if pedestal is None:
                pedestal = (cfg.material.alpha * geom.env_illuminance
                            * float(fp.areas_um2.sum()) * 1e-6)
            for item in ("uniform", "type1", "type2"):
                phi = pixel_flux(geom, fp, cfg.material, pats[item], trace=trace)
                raw[item].append(phi + pedestal)
            phis = np.array([pixel_flux(geom, fp, cfg.material, fr, trace=trace)
                             for fr in fringe_set.frames])
            raw["modulation"].append(
                float(modulation_values(phis, fringe_set.phase_steps)))

        for item in ITEMS:
            base = raw[item][0]
            if base <= 0:
                raise DegenerateBaselineError(
                    f"flat baseline for item {item!r} in {mode} system is zero")
            for w, value in zip(cfg.w_values, raw[item]):
                rows.append((w, item, mode, value / base))
    return ResponseCurve(rows=tuple(rows))


# --- scratch-plate study ----------------------------------------------------

@dataclass(frozen=True)
class ScratchConfig:
    systems: tuple[str, ...] = SYSTEMS
    spec: ScratchSpec = field(default_factory=paper_scratch_spec)
    plate_pitch: float = 1.25       # um per cell
    # flat glass between the scratch band and the plate edges; the x margin
    # must exceed the detection border so whole scratches stay inside it
    plate_margin_x: float = 1300.0  # um
    plate_margin_y: float = 350.0   # um
    # plate side wall on the top and bottom edges: steep enough to scatter
    # light away from screen and core in both systems, wide enough to fill
    # whole camera pixels so it anchors the grayscale stretch.  The flat
    # floor pad beyond the wall keeps pixel coverage continuous; restricting
    # the rim to the y edges avoids parallax pile-up under the tilted
    # reflection camera (the model has no occlusion).
    bevel_width: float = 200.0      # um
    bevel_drop: float = 1500.0      # um
    floor_width: float = 500.0      # um
    # closer screen in the reflection layout so steep groove walls keep
    # their reflected rays on the screen under uniform illumination
    screen_distance_reflection: float = 100.0
    screen_distance_transmission: float = 200.0
    L0: float = 2000.0
    fringe_bias: float = 1000.0
    fringe_amplitude: float = 1000.0
    fringe_period: float = 16.0
    fringe_steps: int = 4
    fringe_orientation: str = "x"
    core_margin: int = 2
    # camera-ROI half extents (x, y) in pixels whose flat-plate image defines
    # the core for this study; the band width sets how small a slope still
    # escapes it, and the y extent keeps the groove end tapers inside
    core_fov_reflection: tuple[int, int] = (240, 178)
    core_fov_transmission: tuple[int, int] = (41, 60)
    detect_k: float = 5.0
    detect_border: int = 12         # px; must cover the rim wall and floor
    sigma_floor: float = 1.5
    profile_shift: int = 10
    env_fraction: float = 0.01
    material: Material = field(default_factory=Material)
    threads: int = 1
    geometries: dict | None = None


@dataclass(frozen=True)
class ItemResult:
    system: str
    item: str
    stretched: np.ndarray          # uint8 image
    profile: np.ndarray            # gray values along the mid-scratch row
    profile_shift: int
    pv: int
    mask: np.ndarray               # bool defect mask
    components: int
    contrast: float                # |scratch mean - background median| / 255


@dataclass(frozen=True)
class DetectionReport:
    results: tuple[ItemResult, ...]
    scratch_labels: dict            # system -> bool image of scratch pixels
    mask_agreement: dict            # system -> type1/type2 agreement fraction

    def get(self, system: str, item: str) -> ItemResult:
        for r in self.results:
            if r.system == system and r.item == item:
                return r
        raise KeyError((system, item))


def grayscale_stretch(img) -> np.ndarray:
    """Affine map of [min, max] onto [0, 255], rounded half-up.

    A constant image maps to all zeros.
    """
    values = np.asarray(getattr(img, "values", img), dtype=float)
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (values - lo) * (255.0 / (hi - lo))
    return np.floor(scaled + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class ProfileSeries:
    """1-D gray-value series with a presentation-only stagger offset."""

    values: np.ndarray
    shift: int = 0


def extract_profile(img: np.ndarray, row: int, shift: int = 0) -> ProfileSeries:
    img = np.asarray(img)
    if not 0 <= row < img.shape[0]:
        raise IndexError(f"profile row {row} outside image of height {img.shape[0]}")
    return ProfileSeries(values=img[row].astype(float).copy(), shift=shift)


def peak_to_valley(series) -> float:
    values = np.asarray(getattr(series, "values", series), dtype=float)
    if values.size == 0:
        raise ValueError("peak_to_valley: empty series")
    return float(values.max() - values.min())


def detect_mask(img: np.ndarray, item: str, k: float = 5.0, border: int = 3,
                sigma_floor: float = 1.5) -> np.ndarray:
    """Robust defect mask on an 8-bit image.

    Background statistics are the median and the MAD-based sigma of the
    interior (a `border`-pixel band is excluded from both the statistics and
    the marking; plate rims live there).  Pixels strictly beyond
    k*sigma on the method's defect side are marked: below the median for
    modulation, type-1 and uniform images, above it for type 2.  The sigma
    floor keeps the threshold meaningful on noise-free synthetic frames.
    """
    img = np.asarray(img, dtype=float)
    interior = np.zeros(img.shape, dtype=bool)
    if border > 0:
        interior[border:-border, border:-border] = True
    else:
        interior[:] = True
    vals = img[interior]
    med = float(np.median(vals))
    mad = float(np.median(np.abs(vals - med)))
    sigma = max(1.4826 * mad, sigma_floor)
    if item == "type2":
        hot = img > med + k * sigma
    else:
        hot = img < med - k * sigma
    return hot & interior


def count_components(mask: np.ndarray) -> int:
    _, n = ndimage.label(mask, structure=np.ones((3, 3), int))
    return int(n)


def _aligned_spec(cfg: ScratchConfig, geom: SystemGeometry) -> tuple[ScratchSpec, float]:
    """Snap the scratch layout to the camera pixel grid.

    Spacing becomes an integer number of camera pixels and all groove
    centerlines are shifted onto pixel centers, so no scratch straddles a
    pixel boundary.  Returns the adjusted spec and a global x offset (um).
    """
    spec = cfg.spec
    if spec.count == 0:
        return spec, 0.0
    probe_um = np.array([[0.0, 0.0, 100.0], [1000.0, 0.0, 100.0]])
    fx, _ = geom.camera.pixel_xy(geom.surface_to_world(probe_um))
    px_per_mm = fx[1] - fx[0]
    footprint_um = abs(1000.0 / px_per_mm)
    n_px = max(3, int(round(spec.spacing / footprint_um)))
    spacing = n_px * footprint_um
    # align the first centerline; the others follow at integer-pixel steps.
    # pixel index is rint(fx), so integer fx is a pixel center
    c0_um = -(spec.count - 1) / 2.0 * spacing
    fx0, _ = geom.camera.pixel_xy(
        geom.surface_to_world(np.array([c0_um, 0.0, 100.0])))
    offset_um = (np.round(float(fx0)) - float(fx0)) / px_per_mm * 1000.0
    return replace(spec, spacing=spacing), offset_um


def _scratch_plate_map(cfg: ScratchConfig, spec: ScratchSpec | None = None,
                       x_offset: float = 0.0) -> HeightMap:
    spec = cfg.spec if spec is None else spec
    rim = cfg.bevel_width + cfg.floor_width
    band = (spec.count - 1) * spec.spacing + max(spec.widths) if spec.count else 0.0
    width_um = band + 2 * cfg.plate_margin_x
    taper = max(spec.widths) if spec.count else 0.0
    height_um = spec.length + 2 * taper + 2 * cfg.plate_margin_y + 2 * rim
    nx = int(np.ceil(width_um / cfg.plate_pitch))
    ny = int(np.ceil(height_um / cfg.plate_pitch))
    plate = scratch_plate(spec, nx, ny, cfg.plate_pitch, x_offset=x_offset)
    return add_rim_bevel(plate, cfg.bevel_width, cfg.bevel_drop, cfg.floor_width,
                         sides="y")


def _plate_roi(geom: SystemGeometry, plate: HeightMap,
               pad_x: int = -6, pad_y: int = 10) -> tuple[int, int, int, int]:
    """Camera ROI centered on the plate's flat interior.

    y is padded outward to take in the rim wall; x is shrunk so the rim
    rows, which project with parallax under the tilted reflection camera,
    still cover every ROI column.  The result is clipped to the pixel range
    guaranteed to hold plate cells.
    """
    from .flux import assign_pixels
    from .surface import BASE_HEIGHT
    px, py = assign_pixels(geom, plate)
    x_lo, x_hi = int(px.min()) + 1, int(px.max()) - 1
    y_lo, y_hi = int(py.min()) + 1, int(py.max()) - 1
    flat = (plate.heights >= BASE_HEIGHT - 1e-9).reshape(-1)
    x0 = max(int(px[flat].min()) - pad_x, x_lo)
    x1 = min(int(px[flat].max()) + pad_x, x_hi)
    y0 = max(int(py[flat].min()) - pad_y, y_lo)
    y1 = min(int(py[flat].max()) + pad_y, y_hi)
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def _scratch_label_image(cfg: ScratchConfig, geom: SystemGeometry,
                         plate: HeightMap,
                         roi: tuple[int, int, int, int]) -> np.ndarray:
    """Ground-truth scratch pixels: camera pixels whose footprint contains
    grooved cells."""
    from .flux import assign_pixels
    from .surface import BASE_HEIGHT
    grooved = plate.heights < (BASE_HEIGHT - 1e-9)
    # the rim wall and floor are also below base; keep only the groove band
    taper = max(cfg.spec.widths) if cfg.spec.count else 0.0
    ny = plate.heights.shape[0]
    ys = (np.arange(ny) + 0.5) * cfg.plate_pitch - ny * cfg.plate_pitch / 2.0
    in_band = np.abs(ys) <= cfg.spec.length / 2.0 + taper
    grooved &= in_band[:, None]
    px, py = assign_pixels(geom, plate)
    x0, y0, w, h = roi
    sel = grooved.reshape(-1)
    label = np.zeros((h, w), dtype=bool)
    gx = px[sel] - x0
    gy = py[sel] - y0
    ok = (gx >= 0) & (gx < w) & (gy >= 0) & (gy < h)
    label[gy[ok], gx[ok]] = True
    return label


def scratch_experiment(cfg: ScratchConfig) -> DetectionReport:
    """Render the scratch plate under the four items for each system."""
    results: list[ItemResult] = []
    labels: dict[str, np.ndarray] = {}
    agreement: dict[str, float] = {}

    for mode in cfg.systems:
        if cfg.geometries and mode in cfg.geometries:
            geom = cfg.geometries[mode]
        else:
            dist = (cfg.screen_distance_reflection if mode == "reflection"
                    else cfg.screen_distance_transmission)
            geom = build_geometry(mode, cfg.L0, cfg.material, cfg.env_fraction,
                                  screen_distance=dist)
        spec, x_offset = _aligned_spec(cfg, geom)
        plate = _scratch_plate_map(cfg, spec, x_offset)
        roi = _plate_roi(geom, plate)

        # core built from a defect-free plate spanning the configured FOV
        fov = (cfg.core_fov_reflection if mode == "reflection"
               else cfg.core_fov_transmission)
        flat = fov_flat_plate(geom, fov)
        core = core_region(geom, flat, cfg.material, margin=cfg.core_margin)

        pats = {
            "uniform": uniform(cfg.L0, geom.screen.width, geom.screen.height,
                               geom.screen.pixel_pitch),
            "type1": binary_type1(core, cfg.L0),
            "type2": binary_type2(core, cfg.L0),
        }
        fringe_set = fringes(cfg.fringe_bias, cfg.fringe_amplitude,
                             cfg.fringe_period, cfg.fringe_steps,
                             cfg.fringe_orientation, geom.screen.width,
                             geom.screen.height, geom.screen.pixel_pitch)

        order = ["uniform", "type1", "type2"] + [f"frame{k}" for k in
                                                 range(fringe_set.steps)]
        images = render_images(
            geom, plate, cfg.material,
            [pats["uniform"], pats["type1"], pats["type2"], *fringe_set.frames],
            roi, threads=cfg.threads)
        by_name = dict(zip(order, images))
        mod_img = ModulationImage(
            values=modulation_values(
                np.stack([by_name[f"frame{k}"].values
                          for k in range(fringe_set.steps)]),
                fringe_set.phase_steps),
            steps=fringe_set.steps, period=fringe_set.period)

        raw_by_item = {
            "uniform": by_name["uniform"].values,
            "type1": by_name["type1"].values,
            "type2": by_name["type2"].values,
            "modulation": mod_img.values,
        }

        label = _scratch_label_image(cfg, geom, plate, roi)
        labels[mode] = label
        row = label.shape[0] // 2
        bg = ~label
        bg[:cfg.detect_border] = False
        bg[-cfg.detect_border:] = False
        bg[:, :cfg.detect_border] = False
        bg[:, -cfg.detect_border:] = False

        for item in ITEMS:
            stretched = grayscale_stretch(raw_by_item[item])
            profile = extract_profile(stretched, row, shift=cfg.profile_shift)
            pv = int(peak_to_valley(profile))
            mask = detect_mask(stretched, item, k=cfg.detect_k,
                               border=cfg.detect_border,
                               sigma_floor=cfg.sigma_floor)
            contrast = abs(float(stretched[label].mean())
                           - float(np.median(stretched[bg]))) / 255.0
            results.append(ItemResult(
                system=mode, item=item, stretched=stretched,
                profile=profile.values, profile_shift=cfg.profile_shift,
                pv=pv, mask=mask, components=count_components(mask),
                contrast=contrast))

        m1 = next(r.mask for r in results if r.system == mode and r.item == "type1")
        m2 = next(r.mask for r in results if r.system == mode and r.item == "type2")
        if label.any():
            agreement[mode] = float((m1[label] == m2[label]).mean())
        else:
            agreement[mode] = 1.0

    return DetectionReport(results=tuple(results), scratch_labels=labels,
                           mask_agreement=agreement)


def write_report(report: DetectionReport, outdir) -> list[str]:
    """Emit PGM images, profile CSVs and a text summary; returns file paths."""
    import os

    os.makedirs(outdir, exist_ok=True)
    written: list[str] = []
    for r in report.results:
        stem = os.path.join(str(outdir), f"{r.system}_{r.item}")
        write_pgm(stem + ".pgm", r.stretched)
        written.append(stem + ".pgm")
        write_pgm(stem + "_mask.pgm", np.where(r.mask, 255, 0))
        written.append(stem + "_mask.pgm")
        with open(stem + "_profile.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["x", "gray"])
            for i, v in enumerate(r.profile):
                writer.writerow([i + r.profile_shift, f"{v:g}"])
        written.append(stem + "_profile.csv")

    summary = os.path.join(str(outdir), "summary.txt")
    with open(summary, "w") as f:
        f.write("system item pv components contrast\n")
        for r in report.results:
            f.write(f"{r.system} {r.item} {r.pv} {r.components} "
                    f"{r.contrast:.6f}\n")
        for mode, a in sorted(report.mask_agreement.items()):
            f.write(f"{mode} type1/type2 mask agreement on scratch pixels: "
                    f"{a:.4f}\n")
    written.append(summary)
    return written
