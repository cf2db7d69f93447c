"""Per-pixel luminous flux: the radiometric summation over facets.

The flux collected by one camera pixel is

    Phi = alpha * ( sum over screen-sourced facets of
                        s * L(hit) * A_s * cos(t1) * cos(t2) / r^2
                  + sum over environment-sourced facets of s * C )

where s is the true facet area, L(hit) the screen luminance at the traced
pixel (nearest-pixel sampling) and C the environment illuminance.  Facets are
classified by the reverse trace alone; luminance never affects classification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optics import Material, SystemGeometry, TraceBatch, trace_batch
from .patterns import ScreenPattern
from .surface import HeightMap, cell_centers, facet_areas, facet_normals


class CoverageError(ValueError):
    """A camera pixel's footprint is not covered by the surface."""


@dataclass(frozen=True)
class PixelFootprint:
    """Facets imaged by one camera pixel.

    centers are world coordinates (mm), normals unit world vectors, areas in
    um^2 as produced by the surface module.
    """

    pixel: tuple[int, int]
    centers: np.ndarray
    normals: np.ndarray
    areas_um2: np.ndarray

    def __post_init__(self):
        if len(self.areas_um2) == 0:
            raise ValueError("PixelFootprint: at least one facet required")
        if np.any(np.asarray(self.areas_um2) <= 0):
            raise ValueError("PixelFootprint: all facet areas must be > 0")


@dataclass(frozen=True)
class FluxImage:
    values: np.ndarray          # (height, width) relative flux
    provenance: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("FluxImage: values must be finite and >= 0")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ModulationImage:
    values: np.ndarray
    steps: int
    period: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("ModulationImage: values must be finite and >= 0")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def footprint_from_heightmap(geom: SystemGeometry, hmap: HeightMap,
                             pixel: tuple[int, int] = (0, 0)) -> PixelFootprint:
    """Treat a whole heightmap as the footprint of a single camera pixel."""
    centers = geom.surface_to_world(cell_centers(hmap).reshape(-1, 3))
    normals = geom.normals_to_world(facet_normals(hmap).reshape(-1, 3))
    areas = facet_areas(hmap).reshape(-1)
    return PixelFootprint(pixel=pixel, centers=centers, normals=normals,
                          areas_um2=areas)


def _check_pattern(geom: SystemGeometry, pattern: ScreenPattern) -> None:
    if (pattern.width, pattern.height) != (geom.screen.width, geom.screen.height):
        raise ValueError(
            f"pattern dimensions {pattern.width}x{pattern.height} do not match "
            f"screen extent {geom.screen.width}x{geom.screen.height}")


def flux_terms(geom: SystemGeometry, trace: TraceBatch, areas_um2: np.ndarray,
               pattern: ScreenPattern) -> np.ndarray:
    """Per-facet flux contributions (before the alpha factor)."""
    s_mm2 = np.asarray(areas_um2, dtype=float) * 1e-6
    lum = pattern.luminance[trace.pix_y, trace.pix_x]
    screen_part = (s_mm2 * lum * geom.source_patch_area
                   * trace.cos1 * trace.cos2 / (trace.r ** 2))
    env_part = s_mm2 * geom.env_illuminance
    return np.where(trace.on_screen, screen_part, env_part)


def pixel_flux(geom: SystemGeometry, footprint: PixelFootprint,
               material: Material, pattern: ScreenPattern,
               trace: TraceBatch | None = None) -> float:
    """Evaluate the per-pixel flux sum for one footprint.

    A precomputed trace for the footprint's facets may be supplied; traces
    depend only on geometry and surface shape, so they can be shared across
    patterns.
    """
    _check_pattern(geom, pattern)
    if trace is None:
        trace = trace_batch(geom, footprint.centers, footprint.normals, material)
    terms = flux_terms(geom, trace, footprint.areas_um2, pattern)
    return float(material.alpha * terms.sum())


def assign_pixels(geom: SystemGeometry, hmap: HeightMap) -> tuple[np.ndarray, np.ndarray]:
    """Camera pixel index of every heightmap cell (flattened row-major)."""
    centers = geom.surface_to_world(cell_centers(hmap).reshape(-1, 3))
    return geom.camera.pixel_of(centers)


def render_image(geom: SystemGeometry, surface: HeightMap, material: Material,
                 pattern: ScreenPattern, roi: tuple[int, int, int, int],
                 threads: int = 1) -> FluxImage:
    """Per-pixel flux over a camera ROI (x0, y0, width, height).

    Heightmap cells are assigned to camera pixels by projecting cell centers
    through the pinhole; every ROI pixel must receive at least one cell.
    """
    images = render_images(geom, surface, material, [pattern], roi, threads)
    return images[0]


def render_images(geom: SystemGeometry, surface: HeightMap, material: Material,
                  patterns: list[ScreenPattern],
                  roi: tuple[int, int, int, int],
                  threads: int = 1) -> list[FluxImage]:
    """Render several patterns over one ROI, sharing the reverse trace.

    Cells are processed in fixed-order chunks so results are deterministic
    regardless of `threads`.
    """
    for p in patterns:
        _check_pattern(geom, p)
    x0, y0, w, h = roi
    if w <= 0 or h <= 0:
        raise ValueError("render: roi must have positive width and height")

    centers = geom.surface_to_world(cell_centers(surface).reshape(-1, 3))
    normals = geom.normals_to_world(facet_normals(surface).reshape(-1, 3))
    areas = facet_areas(surface).reshape(-1)

    px, py = geom.camera.pixel_of(centers)
    inside = (px >= x0) & (px < x0 + w) & (py >= y0) & (py < y0 + h)
    pid = (py - y0) * w + (px - x0)

    n_cells = centers.shape[0]
    chunk = max(1, 2 ** 20 // max(1, len(patterns) // 4 + 1))
    starts = list(range(0, n_cells, chunk))

    def run_chunk(lo: int) -> tuple[list[np.ndarray], np.ndarray]:
        hi = min(lo + chunk, n_cells)
        sel = inside[lo:hi]
        if not np.any(sel):
            zero = np.zeros(w * h)
            return [zero.copy() for _ in patterns], np.zeros(w * h, dtype=int)
        c = centers[lo:hi][sel]
        nrm = normals[lo:hi][sel]
        a = areas[lo:hi][sel]
        ids = pid[lo:hi][sel]
        trace = trace_batch(geom, c, nrm, material)
        sums = []
        for p in patterns:
            terms = flux_terms(geom, trace, a, p)
            sums.append(np.bincount(ids, weights=terms, minlength=w * h))
        counts = np.bincount(ids, minlength=w * h)
        return sums, counts

    totals = [np.zeros(w * h) for _ in patterns]
    counts = np.zeros(w * h, dtype=int)
    if threads > 1 and len(starts) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            for sums, cnt in ex.map(run_chunk, starts):
                for t, s in zip(totals, sums):
                    t += s
                counts += cnt
    else:
        for lo in starts:
            sums, cnt = run_chunk(lo)
            for t, s in zip(totals, sums):
                t += s
            counts += cnt

    if np.any(counts == 0):
        flat_idx = int(np.argmin(counts))
        bad = (x0 + flat_idx % w, y0 + flat_idx // w)
        raise CoverageError(f"surface does not cover camera pixel {bad}")

    ghash = geom.config_hash()
    out = []
    for p, t in zip(patterns, totals):
        vals = material.alpha * t.reshape(h, w)
        out.append(FluxImage(values=vals, provenance=f"{ghash}:{p.name}"))
    return out


def modulation_values(phis: np.ndarray, phase_steps) -> np.ndarray:
    """N-step modulation of per-frame values along axis 0.

    M = (2/N) * sqrt( (sum_k phi_k sin dk)^2 + (sum_k phi_k cos dk)^2 )
    """
    deltas = np.asarray(phase_steps, dtype=float)
    if deltas.shape[0] < 3:
        raise ValueError("modulation needs at least 3 phase steps")
    phis = np.asarray(phis, dtype=float)
    if phis.shape[0] != deltas.shape[0]:
        raise ValueError("modulation: one value per phase step required")
    shape = (len(deltas),) + (1,) * (phis.ndim - 1)
    s = np.sum(phis * np.sin(deltas).reshape(shape), axis=0)
    c = np.sum(phis * np.cos(deltas).reshape(shape), axis=0)
    return (2.0 / len(deltas)) * np.hypot(s, c)


def modulation(frames: list[FluxImage], phase_steps) -> ModulationImage:
    """Per-pixel modulation of an ordered fringe frame stack."""
    if len(frames) < 3:
        raise ValueError("modulation needs at least 3 frames")
    shapes = {f.values.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError("modulation: frames must be dimensionally identical")
    stack = np.stack([f.values for f in frames], axis=0)
    return ModulationImage(values=modulation_values(stack, phase_steps),
                           steps=len(frames))


def save_flux_image(img: FluxImage, path) -> None:
    """Text header (dimensions, provenance) + little-endian float32 grid."""
    h, w = img.values.shape
    with open(path, "wb") as f:
        f.write(f"fluxgrid {w} {h}\nprovenance {img.provenance}\n".encode())
        f.write(img.values.astype("<f4").tobytes())


def load_flux_image(path) -> FluxImage:
    with open(path, "rb") as f:
        header = f.readline().split()
        if header[0] != b"fluxgrid":
            raise ValueError("not a flux grid file")
        w, h = int(header[1]), int(header[2])
        prov = f.readline().decode().removeprefix("provenance ").strip()
        data = np.frombuffer(f.read(), dtype="<f4", count=w * h)
    return FluxImage(values=data.reshape(h, w).astype(float), provenance=prov)
