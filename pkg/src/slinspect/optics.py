"""Geometric and radiometric primitives.

World coordinates are millimeters.  The detected surface sits on a plane with
its own pose; the camera is an ideal pinhole; the display screen is a planar
Lambertian radiator subdivided into square pixels.

The reverse trace runs camera -> facet -> screen.  In reflection mode the ray
bounces specularly off the facet.  In transmission mode it refracts into the
material at the (possibly deformed) top surface, crosses the plate, exits
through the flat back face and continues to the screen; total internal
reflection at the back face classifies the facet as environment-sourced.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .surface import HeightMap, Material, cell_centers, facet_areas, facet_normals


class TotalInternalReflection:
    """Sentinel returned by refract when no transmitted ray exists."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "TotalInternalReflection"


TIR = TotalInternalReflection()


class SourceKind(Enum):
    SCREEN = "ScreenSource"
    ENVIRONMENT = "EnvironmentSource"


@dataclass(frozen=True)
class ElementTrace:
    """Reverse-trace result for one facet."""

    classification: SourceKind
    screen_pixel: tuple[int, int] | None = None
    r: float | None = None          # source-to-facet travel distance, mm
    theta1: float | None = None     # angle at the screen vs its normal, rad
    theta2: float | None = None     # angle at the facet vs its normal, rad


@dataclass(frozen=True)
class Pose:
    """Plane origin plus right-handed orthonormal basis (mm)."""

    origin: np.ndarray
    ex: np.ndarray
    ey: np.ndarray
    ez: np.ndarray

    def __post_init__(self):
        for name in ("origin", "ex", "ey", "ez"):
            v = np.asarray(getattr(self, name), dtype=float)
            v.flags.writeable = False
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class CameraModel:
    pinhole: np.ndarray
    axis: np.ndarray            # unit vector, pinhole toward the scene
    cu: np.ndarray              # image x direction
    cv: np.ndarray              # image y direction
    focal_length: float = 25.0  # mm
    pixel_pitch: float = 5.5    # um
    width: int = 3384
    height: int = 2710

    def __post_init__(self):
        for name in ("pinhole", "axis", "cu", "cv"):
            v = np.asarray(getattr(self, name), dtype=float)
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    def pixel_xy(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Fractional camera pixel coordinates of world points."""
        d = np.asarray(points, dtype=float) - self.pinhole
        t = d @ self.axis
        u_mm = self.focal_length * (d @ self.cu) / t
        v_mm = self.focal_length * (d @ self.cv) / t
        pp_mm = self.pixel_pitch * 1e-3
        return (u_mm / pp_mm + (self.width - 1) / 2.0,
                v_mm / pp_mm + (self.height - 1) / 2.0)

    def pixel_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Camera pixel indices of world points, via the pinhole."""
        fx, fy = self.pixel_xy(points)
        return np.rint(fx).astype(int), np.rint(fy).astype(int)

    def footprint_scale(self, distance: float) -> float:
        """Surface extent imaged by one pixel at the given distance, mm."""
        return self.pixel_pitch * 1e-3 * distance / self.focal_length


@dataclass(frozen=True)
class ScreenModel:
    pose: Pose                   # origin at the screen center, ez = normal
    width: int = 1920
    height: int = 1080
    pixel_pitch: float = 0.272   # mm

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.pixel_pitch, self.height * self.pixel_pitch


@dataclass(frozen=True)
class SystemGeometry:
    """Poses and radiometric constants of screen, camera and surface."""

    mode: str                    # "reflection" | "transmission"
    camera: CameraModel
    screen: ScreenModel
    surface_pose: Pose
    source_patch_area: float     # A_s, mm^2 (one screen pixel by default)
    env_illuminance: float       # C, flux per mm^2 of facet, relative units
    plate_thickness: float = 2.0  # mm, transmission back-face depth

    def __post_init__(self):
        if self.mode not in ("reflection", "transmission"):
            raise ValueError(f"geometry.mode must be reflection or transmission, got {self.mode!r}")
        if not self.source_patch_area > 0:
            raise ValueError("geometry.source_patch_area must be > 0")
        if self.env_illuminance < 0:
            raise ValueError("geometry.env_illuminance must be >= 0")

    def surface_to_world(self, local_um: np.ndarray) -> np.ndarray:
        """Map local surface coordinates (um) into world mm."""
        p = np.asarray(local_um, dtype=float) * 1e-3
        sp = self.surface_pose
        return (sp.origin
                + p[..., 0, None] * sp.ex
                + p[..., 1, None] * sp.ey
                + p[..., 2, None] * sp.ez)

    def normals_to_world(self, local: np.ndarray) -> np.ndarray:
        sp = self.surface_pose
        n = np.asarray(local, dtype=float)
        return (n[..., 0, None] * sp.ex
                + n[..., 1, None] * sp.ey
                + n[..., 2, None] * sp.ez)

    def config_hash(self) -> str:
        """Stable digest of the numeric configuration, for provenance."""
        parts = [self.mode, f"{self.plate_thickness!r}",
                 f"{self.source_patch_area!r}", f"{self.env_illuminance!r}"]
        for obj in (self.camera.pinhole, self.camera.axis, self.camera.cu,
                    self.camera.cv, self.screen.pose.origin, self.screen.pose.ex,
                    self.screen.pose.ey, self.screen.pose.ez,
                    self.surface_pose.origin):
            parts.append(" ".join(repr(x) for x in np.ravel(obj)))
        parts.append(f"{self.camera.focal_length!r} {self.camera.pixel_pitch!r} "
                     f"{self.camera.width} {self.camera.height}")
        parts.append(f"{self.screen.width} {self.screen.height} {self.screen.pixel_pitch!r}")
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _require_unit(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"{name} must be unit length (|{name}| = {n:.6g})")
    return v


def reflect(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Specular bounce of direction d about unit normal n."""
    d = _require_unit(d, "d")
    n = _require_unit(n, "n")
    return d - 2.0 * np.dot(d, n) * n


def refract(d: np.ndarray, n: np.ndarray, eta: float):
    """Snell refraction of d about n with index ratio eta = n1/n2.

    Returns the transmitted unit direction, or the TIR sentinel when
    eta*sin(theta_in) > 1.
    """
    d = _require_unit(d, "d")
    n = _require_unit(n, "n")
    if eta <= 0:
        raise ValueError("eta must be > 0")
    cos_i = -np.dot(d, n)
    k = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    if k < 0.0:
        return TIR
    return eta * d + (eta * cos_i - np.sqrt(k)) * n


def lambertian_illuminance(L: float, A_s: float, r: float,
                           theta1: float, theta2: float) -> float:
    """Illuminance of a planar Lambertian patch at distance r.

    E = L * A_s * cos(theta1) * cos(theta2) / r^2, with theta1 measured at the
    source against its normal and theta2 at the illuminated plane.
    """
    if r == 0:
        raise ZeroDivisionError("lambertian_illuminance: r must be nonzero")
    if L < 0 or A_s < 0:
        raise ValueError("lambertian_illuminance: L and A_s must be >= 0")
    return L * A_s * np.cos(theta1) * np.cos(theta2) / (r * r)


@dataclass
class TraceBatch:
    """Vectorized reverse-trace results for N facets."""

    on_screen: np.ndarray   # bool (N,)
    pix_x: np.ndarray       # int (N,), valid where on_screen
    pix_y: np.ndarray
    r: np.ndarray           # float (N,), total travel distance mm
    cos1: np.ndarray        # cos(theta at screen)
    cos2: np.ndarray        # cos(theta at facet)

    def __len__(self):
        return self.on_screen.shape[0]


def _reflect_many(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    dn = np.sum(d * n, axis=-1, keepdims=True)
    return d - 2.0 * dn * n


def _refract_many(d, n, eta):
    """Vector refraction; returns (directions, ok_mask)."""
    cos_i = -np.sum(d * n, axis=-1)
    k = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    ok = k >= 0.0
    ks = np.sqrt(np.clip(k, 0.0, None))
    out = eta * d + (eta * cos_i - ks)[..., None] * n
    return out, ok


def trace_batch(geom: SystemGeometry, centers_mm: np.ndarray,
                normals: np.ndarray, material: Material) -> TraceBatch:
    """Reverse-trace many facets at once.

    centers_mm: world facet centers (N, 3); normals: world unit normals.
    """
    c = np.asarray(centers_mm, dtype=float)
    n = np.asarray(normals, dtype=float)
    N = c.shape[0]

    d = c - geom.camera.pinhole
    d /= np.linalg.norm(d, axis=-1, keepdims=True)

    alive = np.sum(d * n, axis=-1) < 0.0   # facet must face the camera

    start = c
    r_total = np.zeros(N)

    if geom.mode == "reflection":
        seg1 = _reflect_many(d, n)
    else:
        eta_in = 1.0 / material.refractive_index
        seg1, ok = _refract_many(d, n, eta_in)   # ok everywhere for eta < 1
        alive &= ok
        # cross the plate to the flat back face, exit into air
        ez = geom.surface_pose.ez
        back_origin = geom.surface_pose.origin - geom.plate_thickness * ez
        denom = seg1 @ ez
        going_down = denom < -1e-12
        alive &= going_down
        t = np.where(going_down, ((back_origin - c) @ ez) / np.where(going_down, denom, -1.0), 0.0)
        alive &= t > 0
        exit_point = c + t[:, None] * seg1
        r_total += np.where(alive, t, 0.0)
        seg2, ok2 = _refract_many(seg1, np.broadcast_to(ez, seg1.shape),
                                  material.refractive_index)
        alive &= ok2                      # TIR at the back face -> environment
        start = exit_point
        final_dir = seg2
    if geom.mode == "reflection":
        final_dir = seg1

    # intersect with the screen plane
    sp = geom.screen.pose
    denom = final_dir @ sp.ez
    hits_plane = np.abs(denom) > 1e-12
    t = np.where(hits_plane,
                 ((sp.origin - start) @ sp.ez) / np.where(hits_plane, denom, 1.0),
                 -1.0)
    forward = t > 1e-9
    alive &= hits_plane & forward
    hit = start + t[:, None] * final_dir
    r_total += np.where(alive, t, 0.0)

    rel = hit - sp.origin
    u = rel @ sp.ex
    v = rel @ sp.ey
    pp = geom.screen.pixel_pitch
    fx = u / pp + (geom.screen.width - 1) / 2.0
    fy = v / pp + (geom.screen.height - 1) / 2.0
    inside = ((fx >= -0.5) & (fx < geom.screen.width - 0.5)
              & (fy >= -0.5) & (fy < geom.screen.height - 0.5))
    on_screen = alive & inside

    pix_x = np.rint(np.where(on_screen, fx, 0.0)).astype(int)
    pix_y = np.rint(np.where(on_screen, fy, 0.0)).astype(int)
    np.clip(pix_x, 0, geom.screen.width - 1, out=pix_x)
    np.clip(pix_y, 0, geom.screen.height - 1, out=pix_y)

    cos1 = np.abs(final_dir @ sp.ez)
    cos2 = np.abs(np.sum(seg1 * n, axis=-1))
    r_safe = np.where(on_screen, r_total, 1.0)

    return TraceBatch(on_screen=on_screen, pix_x=pix_x, pix_y=pix_y,
                      r=r_safe, cos1=cos1, cos2=cos2)


def trace_element(geom: SystemGeometry, center_mm, normal,
                  material: Material) -> ElementTrace:
    """Reverse-trace a single facet; see `trace_batch` for the model."""
    normal = _require_unit(normal, "normal")
    batch = trace_batch(geom, np.asarray(center_mm, float)[None, :],
                        normal[None, :], material)
    if not batch.on_screen[0]:
        return ElementTrace(classification=SourceKind.ENVIRONMENT)
    return ElementTrace(
        classification=SourceKind.SCREEN,
        screen_pixel=(int(batch.pix_x[0]), int(batch.pix_y[0])),
        r=float(batch.r[0]),
        theta1=float(np.arccos(np.clip(batch.cos1[0], -1, 1))),
        theta2=float(np.arccos(np.clip(batch.cos2[0], -1, 1))),
    )


def trace_heightmap(geom: SystemGeometry, hmap: HeightMap,
                    material: Material) -> tuple[TraceBatch, np.ndarray, np.ndarray]:
    """Trace every facet of a heightmap.

    Returns (trace, areas_mm2, centers_world) with facets flattened row-major.
    """
    centers = geom.surface_to_world(cell_centers(hmap).reshape(-1, 3))
    normals = geom.normals_to_world(facet_normals(hmap).reshape(-1, 3))
    areas_mm2 = facet_areas(hmap).reshape(-1) * 1e-6
    return trace_batch(geom, centers, normals, material), areas_mm2, centers


def default_reflection_geometry(
    camera_distance: float = 300.0,
    screen_distance: float = 300.0,
    tilt_deg: float = 15.0,
    env_illuminance: float = 0.0,
    screen: ScreenModel | None = None,
    camera: CameraModel | None = None,
) -> SystemGeometry:
    """Camera and screen tilted off the surface normal on opposite sides."""
    t = np.deg2rad(tilt_deg)
    pinhole = camera_distance * np.array([np.sin(t), 0.0, np.cos(t)])
    axis = _unit(-pinhole)
    cu = _unit(np.cross([0.0, 1.0, 0.0], axis))
    cv = np.cross(axis, cu)
    if camera is None:
        camera = CameraModel(pinhole=pinhole, axis=axis, cu=cu, cv=cv)
    s_center = screen_distance * np.array([-np.sin(t), 0.0, np.cos(t)])
    ez = _unit(-s_center)
    ex = _unit(np.cross([0.0, 1.0, 0.0], ez))
    ey = np.cross(ez, ex)
    if screen is None:
        screen = ScreenModel(pose=Pose(origin=s_center, ex=ex, ey=ey, ez=ez))
    surface = Pose(origin=np.zeros(3), ex=np.array([1.0, 0, 0]),
                   ey=np.array([0, 1.0, 0]), ez=np.array([0, 0, 1.0]))
    return SystemGeometry(
        mode="reflection", camera=camera, screen=screen, surface_pose=surface,
        source_patch_area=screen.pixel_pitch ** 2,
        env_illuminance=env_illuminance,
    )


def default_transmission_geometry(
    camera_distance: float = 300.0,
    screen_distance: float = 200.0,
    plate_thickness: float = 2.0,
    env_illuminance: float = 0.0,
    screen: ScreenModel | None = None,
    camera: CameraModel | None = None,
) -> SystemGeometry:
    """Axis-aligned transmission layout: screen behind, camera in front."""
    pinhole = np.array([0.0, 0.0, camera_distance])
    axis = np.array([0.0, 0.0, -1.0])
    cu = np.array([1.0, 0.0, 0.0])
    cv = np.cross(axis, cu)
    if camera is None:
        camera = CameraModel(pinhole=pinhole, axis=axis, cu=cu, cv=cv)
    s_center = np.array([0.0, 0.0, -screen_distance])
    if screen is None:
        screen = ScreenModel(pose=Pose(origin=s_center,
                                       ex=np.array([1.0, 0, 0]),
                                       ey=np.array([0, 1.0, 0]),
                                       ez=np.array([0, 0, 1.0])))
    surface = Pose(origin=np.zeros(3), ex=np.array([1.0, 0, 0]),
                   ey=np.array([0, 1.0, 0]), ez=np.array([0, 0, 1.0]))
    return SystemGeometry(
        mode="transmission", camera=camera, screen=screen, surface_pose=surface,
        source_patch_area=screen.pixel_pitch ** 2,
        env_illuminance=env_illuminance,
        plate_thickness=plate_thickness,
    )


def default_geometry(mode: str, **kwargs) -> SystemGeometry:
    if mode == "reflection":
        return default_reflection_geometry(**kwargs)
    if mode == "transmission":
        return default_transmission_geometry(**kwargs)
    raise ValueError(f"unknown system mode {mode!r}")


def flat_element_flux_factor(geom: SystemGeometry, material: Material) -> float:
    """Geometry factor A_s*cos1*cos2/r^2 for a flat central facet.

    Used to scale the default environment illuminance: the spec for C is a
    fraction of the flux per unit area a flat facet collects under uniform
    unit-luminance illumination.
    """
    center = geom.surface_to_world(np.array([0.0, 0.0, 0.0]))
    tr = trace_element(geom, center, geom.surface_pose.ez, material)
    if tr.classification is not SourceKind.SCREEN:
        raise ValueError("flat central facet does not reach the screen; "
                         "geometry is misconfigured")
    return (geom.source_patch_area * np.cos(tr.theta1) * np.cos(tr.theta2)
            / (tr.r ** 2))


def with_env_illuminance(geom: SystemGeometry, L0: float, material: Material,
                         fraction: float = 0.01) -> SystemGeometry:
    """Return a copy of `geom` whose C gives each flat facet `fraction` of its
    uniform-illumination flux."""
    c = fraction * L0 * flat_element_flux_factor(geom, material)
    return SystemGeometry(
        mode=geom.mode, camera=geom.camera, screen=geom.screen,
        surface_pose=geom.surface_pose,
        source_patch_area=geom.source_patch_area,
        env_illuminance=c, plate_thickness=geom.plate_thickness,
    )
