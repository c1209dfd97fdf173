"""Camera, lights, medium, and per-pixel surface geometry.

World frame equals the camera frame: camera at the origin, +z into the
scene, pixel (x, y) back-projects along ((x-cx)/fx, (y-cy)/fy, 1).
Surface normals are unit vectors pointing toward the camera side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SceneError

# Angle at the camera between the viewing ray and the ray to a source is
# kept inside (0, pi) so the 1/sin factor of the scattered-path radiance
# stays finite; the affected set of pixels has measure zero.
GAMMA_CLAMP = 1e-6


@dataclass(frozen=True)
class Medium:
    """Homogeneous scattering medium; the phase function is isotropic."""

    absorption: float
    scattering: float
    extinction: float

    def __post_init__(self):
        if self.absorption < 0 or self.scattering < 0:
            raise SceneError("absorption and scattering must be >= 0")
        if self.extinction != self.absorption + self.scattering:
            raise SceneError("extinction must equal absorption + scattering")

    @classmethod
    def from_coefficients(cls, absorption: float, scattering: float) -> "Medium":
        return cls(absorption, scattering, absorption + scattering)

    @property
    def phase(self) -> float:
        return 1.0 / (4.0 * np.pi)


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    pixel_area: float  # physical footprint of one pixel, length^2

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise SceneError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width - 1 and 0 <= self.cy <= self.height - 1):
            raise SceneError("principal point must lie inside the image")
        if self.pixel_area <= 0:
            raise SceneError("pixel_area must be positive")


@dataclass(frozen=True)
class LightSource:
    position: np.ndarray  # (3,), camera frame
    intensity: float      # radiant intensity, flux per steradian

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.position.shape != (3,):
            raise SceneError("light position must be a 3-vector")
        if self.intensity <= 0:
            raise SceneError("light intensity must be positive")
        if np.linalg.norm(self.position) == 0:
            raise SceneError("light must not sit at the camera origin")


@dataclass
class Scene:
    """Per-pixel surface maps; fields outside the mask hold zeros."""

    depth: np.ndarray    # (H, W) z in length units, 0 where invalid
    normals: np.ndarray  # (H, W, 3) unit, toward the camera side
    albedo: np.ndarray   # (H, W)
    mask: np.ndarray     # (H, W) bool

    def __post_init__(self):
        shape = self.mask.shape
        if self.depth.shape != shape or self.albedo.shape != shape \
                or self.normals.shape != shape + (3,):
            raise SceneError("scene maps must share one resolution")
        m = self.mask
        if m.any():
            if np.any(self.depth[m] <= 0):
                raise SceneError("depth must be positive inside the mask")
            norms = np.linalg.norm(self.normals[m], axis=-1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise SceneError("normals must be unit length inside the mask")
            if np.any(self.albedo[m] < 0):
                raise SceneError("albedo must be >= 0 inside the mask")


@dataclass(frozen=True)
class ScatterGeometry:
    """Distances, camera angle, and optical thicknesses for one pixel."""

    d_sv: float   # camera to source
    d_vp: float   # camera to surface point along the viewing ray
    d_sp: float   # source to surface point
    gamma: float  # angle at the camera between viewing ray and source ray
    t_sv: float
    t_vp: float
    t_sp: float


@dataclass
class ImageStack:
    """One floating-point radiance image per light over a shared mask."""

    images: np.ndarray           # (n_lights, H, W)
    lights: list = field(default_factory=list)
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        if self.images.ndim != 3:
            raise SceneError("images must be a (n_lights, H, W) array")
        if len(self.lights) != self.images.shape[0]:
            raise SceneError("image count must match light count")
        if self.mask is not None and self.mask.shape != self.images.shape[1:]:
            raise SceneError("mask resolution must match the images")
        if not np.all(np.isfinite(self.images)):
            raise SceneError("radiance values must be finite")

    @property
    def n_lights(self) -> int:
        return self.images.shape[0]


def pixel_rays(camera: Camera) -> np.ndarray:
    """Unit viewing directions through every pixel center, (H, W, 3)."""
    xs = (np.arange(camera.width) - camera.cx) / camera.fx
    ys = (np.arange(camera.height) - camera.cy) / camera.fy
    gx, gy = np.meshgrid(xs, ys)
    rays = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    return rays


def pixel_ray(camera: Camera, pixel) -> np.ndarray:
    """Unit viewing direction through one pixel center; pixel is (x, y)."""
    x, y = pixel
    if not (0 <= x < camera.width and 0 <= y < camera.height):
        raise SceneError(f"pixel {pixel} outside the image")
    r = np.array([(x - camera.cx) / camera.fx, (y - camera.cy) / camera.fy, 1.0])
    return r / np.linalg.norm(r)


def project(camera: Camera, point: np.ndarray):
    """Perspective projection of a 3D point to pixel coordinates (x, y)."""
    point = np.asarray(point, dtype=float)
    if point[2] <= 0:
        raise SceneError("point must lie in front of the camera")
    return (camera.fx * point[0] / point[2] + camera.cx,
            camera.fy * point[1] / point[2] + camera.cy)


def surface_points(camera: Camera, depth: np.ndarray) -> np.ndarray:
    """3D points for a depth map, (H, W, 3); rows with depth 0 give zeros."""
    rays = pixel_rays(camera)
    with np.errstate(invalid="ignore"):
        t = np.where(depth > 0, depth / rays[..., 2], 0.0)
    return rays * t[..., None]


def view_distances(camera: Camera, depth: np.ndarray) -> np.ndarray:
    """Camera-to-surface distance along each viewing ray (= depth / ray_z)."""
    rays = pixel_rays(camera)
    return np.where(depth > 0, depth / rays[..., 2], 0.0)


def scatter_geometry(camera: Camera, light: LightSource, medium: Medium,
                     pixel, depth: float) -> ScatterGeometry:
    """Assemble the per-pixel scattering geometry for one light.

    gamma is clamped into [GAMMA_CLAMP, pi - GAMMA_CLAMP]; a source lying
    exactly on the viewline is the only affected configuration.
    """
    if depth <= 0:
        raise SceneError("depth must be positive")
    ray = pixel_ray(camera, pixel)
    d_sv = float(np.linalg.norm(light.position))
    d_vp = float(depth / ray[2])
    point = ray * d_vp
    d_sp = float(np.linalg.norm(light.position - point))
    cos_g = float(np.dot(ray, light.position) / d_sv)
    gamma = float(np.clip(np.arccos(np.clip(cos_g, -1.0, 1.0)),
                          GAMMA_CLAMP, np.pi - GAMMA_CLAMP))
    c = medium.extinction
    return ScatterGeometry(d_sv=d_sv, d_vp=d_vp, d_sp=d_sp, gamma=gamma,
                           t_sv=c * d_sv, t_vp=c * d_vp, t_sp=c * d_sp)


def light_geometry_maps(camera: Camera, light: LightSource, medium: Medium,
                        depth: np.ndarray, mask: np.ndarray) -> dict:
    """Vectorized scatter geometry over a whole depth map.

    Returns d_vp, d_sp, gamma, t_vp, t_sp, l_sp (unit surface-to-source
    directions) as (H, W)/(H, W, 3) arrays, zeros outside the mask, plus
    the scalars d_sv and t_sv.
    """
    rays = pixel_rays(camera)
    d_sv = float(np.linalg.norm(light.position))
    d_vp = np.where(mask, view_distances(camera, depth), 0.0)
    points = rays * d_vp[..., None]
    to_source = light.position[None, None, :] - points
    d_sp = np.where(mask, np.linalg.norm(to_source, axis=-1), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        l_sp = np.where(mask[..., None], to_source / np.maximum(d_sp, 1e-300)[..., None], 0.0)
    cos_g = rays @ (light.position / d_sv)
    gamma = np.clip(np.arccos(np.clip(cos_g, -1.0, 1.0)),
                    GAMMA_CLAMP, np.pi - GAMMA_CLAMP)
    c = medium.extinction
    return {"d_sv": d_sv, "t_sv": c * d_sv, "d_vp": d_vp, "d_sp": d_sp,
            "gamma": gamma, "t_vp": c * d_vp, "t_sp": c * d_sp, "l_sp": l_sp}


def make_sphere_scene(camera: Camera, center, radius: float,
                      albedo: float = 1.0, facing_min: float = 0.0) -> Scene:
    """Ray-trace a sphere into depth, analytic normals, and a hit mask.

    Tangent (zero-discriminant) rays are excluded, so silhouette-grazing
    pixels never enter the mask.  ``facing_min`` optionally trims facets
    whose view cosine falls below it, emulating the hand-made object
    masks a practical capture would use instead of hugging the exact
    mathematical silhouette.
    """
    center = np.asarray(center, dtype=float)
    if center[2] - radius <= 0:
        raise SceneError("sphere must lie entirely in front of the camera")
    rays = pixel_rays(camera)
    b = rays @ center
    disc = b ** 2 - (center @ center - radius ** 2)
    hit = disc > 0
    t = np.where(hit, b - np.sqrt(np.maximum(disc, 0.0)), 0.0)
    hit &= t > 0
    points = rays * t[..., None]
    normals = np.where(hit[..., None], (points - center) / radius, 0.0)
    if facing_min > 0.0:
        facing = -np.einsum("...k,...k->...", rays, normals)
        hit &= facing >= facing_min
        normals = np.where(hit[..., None], normals, 0.0)
    depth = np.where(hit, points[..., 2], 0.0)
    return Scene(depth=depth, normals=normals,
                 albedo=np.where(hit, albedo, 0.0), mask=hit)


def make_plane_init(mask: np.ndarray, depth0: float, camera: Camera) -> Scene:
    """Fronto-parallel plane at depth0 inside the mask, unit albedo."""
    if depth0 <= 0:
        raise SceneError("depth0 must be positive")
    if not mask.any():
        raise SceneError("mask is empty")
    depth = np.where(mask, depth0, 0.0)
    normals = np.zeros(mask.shape + (3,))
    normals[mask] = (0.0, 0.0, -1.0)
    return Scene(depth=depth, normals=normals,
                 albedo=np.where(mask, 1.0, 0.0), mask=mask.copy())


def normals_from_depth(depth: np.ndarray, mask: np.ndarray,
                       camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals of a masked depth map under perspective projection.

    Tangent vectors come from central differences of the back-projected
    3D points, falling back to one-sided differences at the mask border.
    Returns (normals, valid): pixels without a usable neighbor pair in
    either direction are flagged invalid.
    """
    points = surface_points(camera, depth)
    h, w = mask.shape

    def directional_diff(axis):
        diff = np.zeros_like(points)
        ok = np.zeros_like(mask)
        fwd = np.zeros_like(mask)
        bwd = np.zeros_like(mask)
        sl_f = (slice(None), slice(0, w - 1)) if axis == 1 else (slice(0, h - 1), slice(None))
        sl_b = (slice(None), slice(1, w)) if axis == 1 else (slice(1, h), slice(None))
        fwd[sl_f] = mask[sl_f] & mask[sl_b]
        bwd[sl_b] = fwd[sl_f]
        central = fwd & bwd
        shifted_f = np.roll(points, -1, axis=axis)
        shifted_b = np.roll(points, 1, axis=axis)
        diff[central] = (shifted_f[central] - shifted_b[central]) / 2.0
        only_f = fwd & ~central
        diff[only_f] = shifted_f[only_f] - points[only_f]
        only_b = bwd & ~central
        diff[only_b] = points[only_b] - shifted_b[only_b]
        ok = fwd | bwd
        return diff, ok

    du, ok_u = directional_diff(1)
    dv, ok_v = directional_diff(0)
    valid = mask & ok_u & ok_v
    n = np.cross(du, dv)
    # orient toward the camera: n . x < 0 for a visible point
    flip = np.sum(n * points, axis=-1) > 0
    n[flip] *= -1.0
    norms = np.linalg.norm(n, axis=-1)
    valid &= norms > 0
    normals = np.zeros_like(points)
    normals[valid] = n[valid] / norms[valid][..., None]
    return normals, valid


def interior_mask(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Mask eroded by a 3x3 structuring element."""
    from scipy import ndimage
    return ndimage.binary_erosion(mask, structure=np.ones((3, 3), bool),
                                  iterations=iterations)
