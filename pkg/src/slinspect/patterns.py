"""Display-screen luminance fields.

Patterns are immutable luminance grids in relative units, shape
(height, width), indexed [row, column] = [y, x].  Binary patterns are built
from the computed core region: the set of screen pixels that supply light to
a clean, defect-free object under the configured geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scipy import ndimage

from .optics import SystemGeometry, trace_heightmap
from .surface import HeightMap, Material


class EmptyCoreError(ValueError):
    """No reverse ray from the flat surface reaches the screen."""


@dataclass(frozen=True)
class ScreenPattern:
    width: int
    height: int
    pixel_pitch: float          # mm
    luminance: np.ndarray       # (height, width), >= 0
    name: str = "pattern"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.pixel_pitch <= 0:
            raise ValueError("ScreenPattern: dimensions and pitch must be > 0")
        lum = np.asarray(self.luminance, dtype=float)
        if lum.shape != (self.height, self.width):
            raise ValueError(f"ScreenPattern: luminance shape {lum.shape} does not "
                             f"match (height={self.height}, width={self.width})")
        if not np.all(np.isfinite(lum)):
            raise ValueError("ScreenPattern: luminance must be finite")
        if np.any(lum < 0):
            raise ValueError("ScreenPattern: luminance must be >= 0")
        lum = lum.copy()
        lum.flags.writeable = False
        object.__setattr__(self, "luminance", lum)


@dataclass(frozen=True)
class ScreenMask:
    """Boolean core-region mask with the companion screen dimensions."""

    mask: np.ndarray            # (height, width) bool
    pixel_pitch: float

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool).copy()
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


@dataclass(frozen=True)
class FringeSet:
    """Ordered phase-shifted fringe frames with their phase steps."""

    frames: tuple[ScreenPattern, ...]
    period: float
    phase_steps: tuple[float, ...]
    bias: float
    amplitude: float

    def __post_init__(self):
        if len(self.frames) < 3:
            raise ValueError("FringeSet: need at least 3 frames")
        dims = {(f.width, f.height, f.pixel_pitch) for f in self.frames}
        if len(dims) != 1:
            raise ValueError("FringeSet: frames must share dimensions and pitch")

    @property
    def steps(self) -> int:
        return len(self.frames)


def uniform(L0: float, width: int = 1920, height: int = 1080,
            pixel_pitch: float = 0.272) -> ScreenPattern:
    """Constant luminance over the whole screen."""
    if L0 < 0:
        raise ValueError("uniform: L0 must be >= 0")
    return ScreenPattern(width=width, height=height, pixel_pitch=pixel_pitch,
                         luminance=np.full((height, width), float(L0)),
                         name=f"uniform(L0={L0!r})")


def fringes(A: float, B: float, period: float, steps: int = 4,
            orientation: str = "x", width: int = 1920, height: int = 1080,
            pixel_pitch: float = 0.272) -> FringeSet:
    """N-step phase-shifted sinusoidal fringes.

    Frame k has luminance A + B*cos(2*pi*u/period + 2*pi*k/N) with u the
    pixel coordinate along `orientation`.
    """
    if B < 0 or A < B:
        raise ValueError("fringes: need A >= B >= 0 for non-negative luminance")
    if period < 2:
        raise ValueError("fringes: period must be >= 2 pixels")
    if steps < 3:
        raise ValueError("fringes: modulation needs at least 3 phase steps")
    if orientation not in ("x", "y"):
        raise ValueError("fringes: orientation must be 'x' or 'y'")

    if orientation == "x":
        u = np.arange(width, dtype=float)[None, :]
    else:
        u = np.arange(height, dtype=float)[:, None]
    deltas = tuple(2.0 * np.pi * k / steps for k in range(steps))
    frames = []
    for k, dk in enumerate(deltas):
        lum = A + B * np.cos(2.0 * np.pi * u / period + dk)
        lum = np.broadcast_to(lum, (height, width)).copy()
        # clip float dust so the constructor's >= 0 invariant holds at A == B
        np.clip(lum, 0.0, None, out=lum)
        frames.append(ScreenPattern(width=width, height=height,
                                    pixel_pitch=pixel_pitch, luminance=lum,
                                    name=f"fringe(k={k}/{steps},p={period!r})"))
    return FringeSet(frames=tuple(frames), period=period, phase_steps=deltas,
                     bias=A, amplitude=B)


def core_region(geom: SystemGeometry, flat: HeightMap, material: Material,
                margin: int = 2) -> ScreenMask:
    """Screen pixels reached by reverse rays from a defect-free plate.

    Every facet of `flat` is traced through the camera pinhole onto the
    screen; the union of hit pixels, dilated by `margin` screen pixels,
    is the core region.
    """
    trace, _, _ = trace_heightmap(geom, flat, material)
    if not np.any(trace.on_screen):
        raise EmptyCoreError("empty-core: no reverse ray from the flat surface "
                             "reaches the screen (check geometry)")
    mask = np.zeros((geom.screen.height, geom.screen.width), dtype=bool)
    mask[trace.pix_y[trace.on_screen], trace.pix_x[trace.on_screen]] = True
    if margin > 0:
        mask = ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool),
                                       iterations=margin)
    return ScreenMask(mask=mask, pixel_pitch=geom.screen.pixel_pitch)


def binary_type1(core: ScreenMask, L0: float) -> ScreenPattern:
    """Luminance L0 inside the core region, dark outside."""
    if L0 <= 0:
        raise ValueError("binary_type1: L0 must be > 0")
    lum = np.where(core.mask, float(L0), 0.0)
    return ScreenPattern(width=core.width, height=core.height,
                         pixel_pitch=core.pixel_pitch, luminance=lum,
                         name=f"type1(L0={L0!r})")


def binary_type2(core: ScreenMask, L0: float) -> ScreenPattern:
    """Exact complement of type 1: dark core, L0 outside."""
    if L0 <= 0:
        raise ValueError("binary_type2: L0 must be > 0")
    lum = np.where(core.mask, 0.0, float(L0))
    return ScreenPattern(width=core.width, height=core.height,
                         pixel_pitch=core.pixel_pitch, luminance=lum,
                         name=f"type2(L0={L0!r})")


def write_pgm(path, values: np.ndarray, maxval: int = 255) -> None:
    """Binary (P5) portable graymap; 16-bit samples are big-endian."""
    v = np.asarray(values)
    if v.ndim != 2:
        raise ValueError("write_pgm: need a 2-D array")
    if maxval == 255:
        data = v.astype(np.uint8)
    elif maxval == 65535:
        data = v.astype(">u2")
    else:
        raise ValueError("write_pgm: maxval must be 255 or 65535")
    with open(path, "wb") as f:
        f.write(f"P5\n{v.shape[1]} {v.shape[0]}\n{maxval}\n".encode())
        f.write(data.tobytes())


def export_pattern(pattern: ScreenPattern, path, bits: int = 8) -> list[str]:
    """Write a pattern as PGM plus a sidecar recording the gray mapping.

    Luminance maps linearly onto [0, maxval] using the pattern's own maximum
    (an all-dark pattern maps to 0).  Returns the written file paths.
    """
    if bits not in (8, 16):
        raise ValueError("export_pattern: bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    peak = float(pattern.luminance.max())
    scale = maxval / peak if peak > 0 else 0.0
    gray = np.floor(pattern.luminance * scale + 0.5)
    write_pgm(path, gray, maxval=maxval)
    sidecar = str(path) + ".map.txt"
    with open(sidecar, "w") as f:
        f.write(f"pattern: {pattern.name}\n")
        f.write(f"bits: {bits}\n")
        f.write(f"gray = luminance * {scale!r}\n")
        f.write(f"luminance_peak: {peak!r}\n")
    return [str(path), sidecar]
