"""Synthesizes observed radiance through the scattering medium.

Each observed image decomposes into an attenuated reflected component,
backscatter along the viewing ray, and surface-camera forward scatter;
the reflected component itself splits into direct near-light Lambertian
shading and light the source scatters onto the surface from the whole
hemisphere.  All terms are evaluated analytically through the lookup
tables, which makes this renderer double as the ground-truth oracle for
the inverse pipeline.
"""

from __future__ import annotations

import logging

import numpy as np

from . import kernel as _kernel
from .kernel import clamp_dvp_prime, dense_forward_apply  # noqa: F401  (re-export)
from .scene import (Camera, ImageStack, LightSource, Medium, Scene,
                    ScatterGeometry, light_geometry_maps)
from .tables import TableF, TableG, lookup_g, scattered_path_factor

log = logging.getLogger(__name__)


def backscatter_pixel(geom: ScatterGeometry, light: LightSource,
                      medium: Medium, table_f: TableF,
                      d_upper: float) -> float:
    """Scattered light collected along one viewing ray up to d_upper."""
    if d_upper < 0:
        raise ValueError("d_upper must be non-negative")
    return light.intensity * float(scattered_path_factor(
        table_f, medium, geom.d_sv, geom.gamma, d_upper))


def backscatter_image(camera: Camera, light: LightSource, medium: Medium,
                      table_f: TableF, d_upper) -> np.ndarray:
    """Backscatter for every pixel; d_upper is a scalar or an (H, W) map."""
    full = np.ones((camera.height, camera.width), bool)
    g = light_geometry_maps(camera, light, medium,
                            np.ones(full.shape), full)
    d_upper = np.broadcast_to(np.asarray(d_upper, dtype=float), full.shape)
    return light.intensity * scattered_path_factor(
        table_f, medium, g["d_sv"], g["gamma"], d_upper)


def direct_reflection_pixel(geom: ScatterGeometry, light: LightSource,
                            medium: Medium, normal, albedo: float,
                            l_sp) -> float:
    """Attenuated near-light Lambertian term; shadowed facets give zero."""
    shade = max(float(np.dot(normal, l_sp)), 0.0)
    return light.intensity / geom.d_sp ** 2 * np.exp(-geom.t_sp) \
        * albedo * shade


def source_surface_fs_pixel(geom: ScatterGeometry, light: LightSource,
                            medium: Medium, normal, albedo: float,
                            table_g: TableG, l_sp) -> float:
    """Light scattered by the medium onto the facet, via the G table."""
    if medium.scattering == 0.0:
        return 0.0
    mu = float(np.dot(normal, l_sp))
    coeff = medium.scattering * medium.extinction * light.intensity \
        * albedo / (2 * np.pi * geom.t_sp)
    return coeff * lookup_g(table_g, geom.t_sp, mu)


def reflected_image(scene: Scene, camera: Camera, light: LightSource,
                    medium: Medium, table_g: TableG) -> np.ndarray:
    """Reflected component map L_s = direct + source-surface scatter."""
    g = light_geometry_maps(camera, light, medium, scene.depth, scene.mask)
    mu = np.einsum("...k,...k->...", scene.normals, g["l_sp"])
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = np.where(
            scene.mask,
            light.intensity / np.maximum(g["d_sp"], 1e-300) ** 2
            * np.exp(-g["t_sp"]) * scene.albedo * np.maximum(mu, 0.0), 0.0)
    if medium.scattering == 0.0:
        return direct
    t_sp = g["t_sp"][scene.mask]
    glow = np.zeros(scene.mask.shape)
    glow[scene.mask] = medium.scattering * medium.extinction \
        * light.intensity * scene.albedo[scene.mask] / (2 * np.pi * t_sp) \
        * lookup_g(table_g, t_sp, mu[scene.mask])
    return direct + glow


def surface_camera_fs_image(ls_image: np.ndarray, scene: Scene,
                            camera: Camera, medium: Medium,
                            table_f: TableF) -> np.ndarray:
    """Exact dense forward-scatter sum over all masked facet pairs."""
    return surface_camera_fs_stack(ls_image[None], scene, camera, medium,
                                   table_f)[0]


def surface_camera_fs_stack(ls_images: np.ndarray, scene: Scene,
                            camera: Camera, medium: Medium,
                            table_f: TableF) -> np.ndarray:
    """Forward scatter for a stack of reflected images in one sweep.

    O(N^2) in masked pixels: the renderer/oracle path, intended for
    moderate N.  The operator does not depend on the light, so all images
    share one block-row pass.
    """
    if medium.scattering == 0.0:
        return np.zeros_like(np.asarray(ls_images, dtype=float))
    flat_mask = scene.mask.ravel()
    columns = np.stack([img.ravel()[flat_mask] for img in ls_images], axis=1)
    scattered = dense_forward_apply(scene, camera, medium, table_f, columns)
    out = np.zeros((len(ls_images), flat_mask.size))
    out[:, flat_mask] = scattered.T
    return out.reshape((len(ls_images),) + scene.mask.shape)


def render_light_components(scene: Scene, camera: Camera,
                            light: LightSource, medium: Medium,
                            table_f: TableF, table_g: TableG,
                            d_max: float) -> dict:
    """All transport components for one light, as named image maps."""
    ls = reflected_image(scene, camera, light, medium, table_g)
    g = light_geometry_maps(camera, light, medium, scene.depth, scene.mask)
    attenuation = np.where(scene.mask, np.exp(-g["t_vp"]), 0.0)
    backscatter_full = backscatter_image(camera, light, medium, table_f, d_max)
    backscatter_surface = np.where(
        scene.mask,
        backscatter_image(camera, light, medium, table_f,
                          np.where(scene.mask, g["d_vp"], d_max)),
        backscatter_full)
    return {"reflected": ls, "attenuation": attenuation,
            "backscatter": backscatter_surface,
            "backscatter_no_object": backscatter_full}


def render_stack(scene: Scene, lights, medium: Medium, camera: Camera,
                 table_f: TableF, table_g: TableG, d_max: float,
                 noise_std: float = 0.0, seed: int = 0
                 ) -> tuple[ImageStack, ImageStack]:
    """Observed and no-object image stacks for a list of lights.

    Masked pixels carry attenuated reflection, backscatter up to the
    surface, and forward scatter; background pixels carry backscatter
    integrated to d_max, identical to the no-object reference.
    """
    if d_max <= float(scene.depth.max()):
        raise ValueError("d_max must exceed the largest scene depth")
    reflected = [reflected_image(scene, camera, li, medium, table_g)
                 for li in lights]
    forward = surface_camera_fs_stack(np.stack(reflected), scene, camera,
                                      medium, table_f)
    observed = np.empty((len(lights),) + scene.mask.shape)
    no_object = np.empty_like(observed)
    for i, li in enumerate(lights):
        comp = render_light_components(scene, camera, li, medium,
                                       table_f, table_g, d_max)
        observed[i] = np.where(
            scene.mask,
            comp["reflected"] * comp["attenuation"] + comp["backscatter"]
            + forward[i],
            comp["backscatter_no_object"])
        no_object[i] = comp["backscatter_no_object"]
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        observed = observed + rng.normal(0.0, noise_std, observed.shape)
        no_object = no_object + rng.normal(0.0, noise_std, no_object.shape)
    return (ImageStack(images=observed, lights=list(lights), mask=scene.mask),
            ImageStack(images=no_object, lights=list(lights), mask=scene.mask))
