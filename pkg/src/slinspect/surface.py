"""Discretized surface topographies and per-facet geometry.

A surface is a regular grid of square cells ("facets").  Heights and the cell
pitch are expressed in micrometers; everything downstream (optics, flux)
converts to millimeters at the world-geometry boundary.

Conventions
-----------
`heights` is stored row-major with shape ``(height, width)``; cell ``(i, j)``
means column ``i`` (x direction) and row ``j`` (y direction), i.e. the value
``heights[j, i]``.  Facet normals point toward the +z (camera) side.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from scipy import ndimage


class LayoutError(ValueError):
    """Scratch layout does not fit the requested plate."""


@dataclass(frozen=True)
class HeightMap:
    """Immutable elevation grid.

    width, height are cell counts, pitch is the cell size in micrometers and
    heights holds elevations in micrometers, shape (height, width).
    """

    width: int
    height: int
    pitch: float
    heights: np.ndarray

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("HeightMap: width and height must be >= 2")
        if not self.pitch > 0:
            raise ValueError("HeightMap: pitch must be > 0")
        h = np.asarray(self.heights, dtype=float)
        if h.shape != (self.height, self.width):
            raise ValueError(
                f"HeightMap: heights shape {h.shape} does not match "
                f"(height={self.height}, width={self.width})"
            )
        if not np.all(np.isfinite(h)):
            raise ValueError("HeightMap: all heights must be finite")
        h = h.copy()
        h.flags.writeable = False
        object.__setattr__(self, "heights", h)


@dataclass(frozen=True)
class DefectParams:
    """Parameters of the punctate-defect topography."""

    w: float
    grid: tuple[int, int] = (100, 100)

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("DefectParams: w must be >= 0")
        if self.grid[0] < 2 or self.grid[1] < 2:
            raise ValueError("DefectParams: grid dimensions must be >= 2")


@dataclass(frozen=True)
class Material:
    """Reflectivity/transmissivity factor and refractive index."""

    alpha: float = 0.9
    refractive_index: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("material.alpha must be within [0, 1]")
        if self.refractive_index < 1.0:
            raise ValueError("material.refractive_index must be >= 1")


@dataclass(frozen=True)
class ScratchSpec:
    """Layout of parallel grooves on a flat plate.

    All dimensions in micrometers.  `spacing` is the center-to-center gap
    between neighboring grooves; `profile` names the cross-section shape
    (only the smooth cosine groove is implemented).
    """

    count: int
    widths: tuple[float, ...]
    length: float
    depth: float
    spacing: float
    profile: str = "cosine"

    def __post_init__(self):
        if self.count != len(self.widths):
            raise ValueError("ScratchSpec: count must equal len(widths)")
        if any(w <= 0 for w in self.widths) or self.length <= 0 or self.depth <= 0:
            if self.count > 0:
                raise ValueError("ScratchSpec: all dimensions must be > 0")
        if self.count > 0 and self.spacing <= 0:
            raise ValueError("ScratchSpec: spacing must be > 0")
        if self.profile != "cosine":
            raise ValueError(f"ScratchSpec: unknown profile {self.profile!r}")


def paper_scratch_spec() -> ScratchSpec:
    """Ten grooves, widths 5..50 um in 5 um steps, 5 mm long, 2 um deep."""
    return ScratchSpec(
        count=10,
        widths=tuple(float(w) for w in range(5, 55, 5)),
        length=5000.0,
        depth=2.0,
        spacing=300.0,
    )


BASE_HEIGHT = 100.0  # um; elevation of the defect-free reference plane


def punctate_defect(params: DefectParams, pitch: float = 1.0) -> HeightMap:
    """Build the punctate-defect topography.

    Heights follow ``100 - (w/2) * (sin(pi*x/100) + sin(pi*y/100))`` with x, y
    the cell indices over the grid; w controls the overall curvature.  The
    grid pitch only sets the physical cell size.
    """
    nx, ny = params.grid
    x = np.arange(nx, dtype=float)
    y = np.arange(ny, dtype=float)
    sx = np.sin(np.pi * x / 100.0)
    sy = np.sin(np.pi * y / 100.0)
    # heights[j, i] = T(x=i, y=j)
    heights = BASE_HEIGHT - (params.w / 2.0) * (sx[None, :] + sy[:, None])
    return HeightMap(width=nx, height=ny, pitch=pitch, heights=heights)


def flat_plate(width: int, height: int, pitch: float,
               level: float = BASE_HEIGHT) -> HeightMap:
    return HeightMap(width=width, height=height, pitch=pitch,
                     heights=np.full((height, width), float(level)))


def _cosine_dip(offsets: np.ndarray, width: float) -> np.ndarray:
    """Unit-depth groove cross-section: 1 at the centerline, 0 at the edges."""
    inside = np.abs(offsets) <= width / 2.0
    prof = np.zeros_like(offsets)
    prof[inside] = 0.5 * (1.0 + np.cos(2.0 * np.pi * offsets[inside] / width))
    return prof


def scratch_plate(spec: ScratchSpec, width: int, height: int, pitch: float,
                  base: float = BASE_HEIGHT, x_offset: float = 0.0) -> HeightMap:
    """Flat plate with `spec.count` parallel grooves running along y.

    Grooves are centered on the plate (plus `x_offset`, um), ordered left to
    right by the order of `spec.widths`.  Cross sections are smooth cosine
    dips reaching `depth` at the centerline; groove ends taper with the same
    cosine law over one groove-width so normals stay continuous.
    """
    heights = np.full((height, width), float(base))
    if spec.count == 0:
        return HeightMap(width=width, height=height, pitch=pitch, heights=heights)

    plate_w = width * pitch
    plate_h = height * pitch
    span = (spec.count - 1) * spec.spacing
    centers = np.arange(spec.count) * spec.spacing - span / 2.0 + x_offset

    # reject overlapping or out-of-plate grooves before touching the grid
    edges = [(c - w / 2.0, c + w / 2.0) for c, w in zip(centers, spec.widths)]
    for k in range(1, spec.count):
        if edges[k][0] <= edges[k - 1][1]:
            raise LayoutError(
                f"scratches {k - 1} and {k} overlap "
                f"(gap {edges[k][0] - edges[k - 1][1]:.3f} um)"
            )
    if edges[0][0] < -plate_w / 2.0 or edges[-1][1] > plate_w / 2.0:
        raise LayoutError("scratch band exceeds the plate width")
    if spec.length > plate_h:
        raise LayoutError("scratch length exceeds the plate height")

    xs = (np.arange(width) + 0.5) * pitch - plate_w / 2.0
    ys = (np.arange(height) + 0.5) * pitch - plate_h / 2.0

    for center, gw in zip(centers, spec.widths):
        cross = _cosine_dip(xs - center, gw)
        # taper envelope along the groove: full depth over the interior,
        # cosine roll-off over one groove-width at each end
        half = spec.length / 2.0
        env = np.zeros_like(ys)
        inside = np.abs(ys) <= half
        env[inside] = 1.0
        for sign in (-1.0, 1.0):
            zone = (np.abs(ys - sign * half) <= gw) & (np.abs(ys) > half)
            t = (np.abs(ys[zone]) - half) / gw
            env[zone] = 0.5 * (1.0 + np.cos(np.pi * t))
        heights -= spec.depth * env[:, None] * cross[None, :]

    return HeightMap(width=width, height=height, pitch=pitch, heights=heights)


def add_rim_bevel(hmap: HeightMap, bevel_width: float, drop: float,
                  floor_width: float = 0.0, sides: str = "all") -> HeightMap:
    """Return a copy whose outer rim descends by `drop` (um).

    Models the side wall of a physical plate: going inward from the plate
    edge, the outermost `floor_width` stays flat at ``base - drop``, then a
    linear wall climbs back to the original height over `bevel_width`.  The
    steep wall scatters light away from both screen and core, which anchors
    the dynamic range of rendered images; the surface stays continuous so
    camera-pixel coverage has no holes under oblique viewing.

    `sides` selects which edges carry the rim: "all", or "y" for only the
    top and bottom edges (useful when the camera is tilted about y and deep
    cells would otherwise project onto interior pixels).
    """
    if sides not in ("all", "y"):
        raise ValueError("add_rim_bevel: sides must be 'all' or 'y'")
    h = np.array(hmap.heights)
    ny, nx = h.shape
    ys = (np.arange(ny) + 0.5) * hmap.pitch
    dist_y = np.minimum(ys, ny * hmap.pitch - ys)
    if sides == "all":
        xs = (np.arange(nx) + 0.5) * hmap.pitch
        dist_x = np.minimum(xs, nx * hmap.pitch - xs)
        dist = np.minimum(dist_x[None, :], dist_y[:, None])
    else:
        dist = np.broadcast_to(dist_y[:, None], h.shape)
    ramp = np.clip((dist - floor_width) / bevel_width, 0.0, 1.0)
    h = h - drop * (1.0 - ramp)
    return HeightMap(width=hmap.width, height=hmap.height, pitch=hmap.pitch, heights=h)


def _gradients(hmap: HeightMap) -> tuple[np.ndarray, np.ndarray]:
    """dh/dx and dh/dy (unitless slopes), central differences inside,
    one-sided at the borders."""
    h = hmap.heights
    gy, gx = np.gradient(h, hmap.pitch)
    return gx, gy


def facet_normals(hmap: HeightMap) -> np.ndarray:
    """Unit normals for every facet, shape (height, width, 3), +z oriented."""
    gx, gy = _gradients(hmap)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return n


def facet_normal(hmap: HeightMap, i: int, j: int) -> np.ndarray:
    """Unit normal of facet (i, j); i is the x index, j the y index."""
    _check_index(hmap, i, j)
    h = hmap.heights
    p = hmap.pitch
    if 0 < i < hmap.width - 1:
        gx = (h[j, i + 1] - h[j, i - 1]) / (2 * p)
    elif i == 0:
        gx = (h[j, 1] - h[j, 0]) / p
    else:
        gx = (h[j, i] - h[j, i - 1]) / p
    if 0 < j < hmap.height - 1:
        gy = (h[j + 1, i] - h[j - 1, i]) / (2 * p)
    elif j == 0:
        gy = (h[1, i] - h[0, i]) / p
    else:
        gy = (h[j, i] - h[j - 1, i]) / p
    n = np.array([-gx, -gy, 1.0])
    return n / np.linalg.norm(n)


def facet_area(hmap: HeightMap, i: int, j: int) -> float:
    """True facet area in um^2: base cell area inflated by the local slope."""
    n = facet_normal(hmap, i, j)
    return hmap.pitch ** 2 / n[2]


def facet_areas(hmap: HeightMap) -> np.ndarray:
    """Facet areas for every cell, um^2, shape (height, width)."""
    n = facet_normals(hmap)
    return hmap.pitch ** 2 / n[..., 2]


def cell_centers(hmap: HeightMap) -> np.ndarray:
    """Local facet centers in um, shape (height, width, 3).

    The grid is centered on the local origin; z is the cell elevation.
    """
    xs = (np.arange(hmap.width) - (hmap.width - 1) / 2.0) * hmap.pitch
    ys = (np.arange(hmap.height) - (hmap.height - 1) / 2.0) * hmap.pitch
    cx, cy = np.meshgrid(xs, ys)
    return np.stack([cx, cy, hmap.heights], axis=-1)


def groove_regions(hmap: HeightMap, base: float = BASE_HEIGHT,
                   tol: float = 1e-9) -> int:
    """Number of connected regions strictly below the base height."""
    below = hmap.heights < (base - tol)
    _, n = ndimage.label(below, structure=np.ones((3, 3), dtype=int))
    return int(n)


def _check_index(hmap: HeightMap, i: int, j: int) -> None:
    if not (0 <= i < hmap.width and 0 <= j < hmap.height):
        raise IndexError(f"facet index ({i}, {j}) outside "
                         f"{hmap.width}x{hmap.height} grid")


def save_heightmap(hmap: HeightMap, path) -> None:
    """Plain-text grid: first line 'width height pitch_um', then height rows."""
    with open(path, "w") as f:
        f.write(f"{hmap.width} {hmap.height} {hmap.pitch!r}\n")
        for row in hmap.heights:
            f.write(" ".join(repr(v) for v in row))
            f.write("\n")


def load_heightmap(path) -> HeightMap:
    with open(path) as f:
        first = f.readline().split()
        if len(first) != 3:
            raise ValueError("heightmap file: first line must be 'width height pitch_um'")
        width, height, pitch = int(first[0]), int(first[1]), float(first[2])
        heights = np.loadtxt(io.StringIO(f.read()), ndmin=2)
    return HeightMap(width=width, height=height, pitch=pitch, heights=heights)
