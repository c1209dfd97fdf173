"""Inverse pipeline stages: from observed stacks back to shape.

Backscatter subtraction (with a masked median filter against the SNR hit
close to zero), forward-scatter removal through the augmented sparse
system, per-pixel linear photometric stereo with the hemispherical table
linearized around the normal-aligned source, and perspective Poisson
integration of the recovered normals in the log-depth domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve

from .errors import PipelineError
from .kernel import SparseKernel, augmented_matvec
from .scene import Camera, ImageStack, Medium, Scene, light_geometry_maps
from .solver import bicgstab
from .tables import TableG, lookup_g

log = logging.getLogger(__name__)

# Gradient equations at facets seen nearly edge-on are unreliable; the
# per-pixel normal-times-ray denominator is floored at this cosine.
INTEGRATION_FLOOR = 0.05


@dataclass
class NormalSolveResult:
    normals: np.ndarray         # (H, W, 3) unit inside mask
    albedo: np.ndarray          # (H, W)
    residual: np.ndarray        # (H, W) per-pixel least-squares residual
    condition_flag: np.ndarray  # (H, W) bool, True where the solve was
                                # rejected and the prior normal kept


def _check_aligned(observed: ImageStack, no_object: ImageStack):
    if observed.images.shape != no_object.images.shape:
        raise PipelineError("stacks differ in resolution or light count")
    if observed.n_lights != no_object.n_lights:
        raise PipelineError("stacks differ in light count")


def subtract_no_object(observed: ImageStack, no_object: ImageStack
                       ) -> ImageStack:
    """Backscatter subtraction, clamped at zero from below."""
    _check_aligned(observed, no_object)
    diff = np.maximum(observed.images - no_object.images, 0.0)
    return ImageStack(images=diff, lights=observed.lights, mask=observed.mask)


def median_filter_image(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """3x3 median restricted to the mask.

    Neighbors outside the mask are ignored, so border pixels use whatever
    in-mask neighborhood is available.  Output is zero outside the mask.
    """
    padded = np.full((image.shape[0] + 2, image.shape[1] + 2), np.nan)
    padded[1:-1, 1:-1] = np.where(mask, image, np.nan)
    windows = np.stack([padded[1 + di:padded.shape[0] - 1 + di,
                               1 + dj:padded.shape[1] - 1 + dj]
                        for di in (-1, 0, 1) for dj in (-1, 0, 1)])
    # masked pixels always see themselves, so their window is never all-NaN
    out = np.zeros_like(image, dtype=float)
    out[mask] = np.nanmedian(windows[:, mask], axis=0)
    return out


def median_filter_stack(stack: ImageStack) -> ImageStack:
    mask = stack.mask if stack.mask is not None \
        else np.ones(stack.images.shape[1:], bool)
    images = np.stack([median_filter_image(img, mask)
                       for img in stack.images])
    return ImageStack(images=images, lights=stack.lights, mask=stack.mask)


def remove_backscatter(observed: ImageStack, no_object: ImageStack
                       ) -> ImageStack:
    """Subtract the no-object reference, then median-filter in the mask."""
    return median_filter_stack(subtract_no_object(observed, no_object))


def remove_forward_scatter(lprime: ImageStack, kern: SparseKernel,
                           tol: float = 1e-8, max_iter: int = 2000
                           ) -> tuple[ImageStack, dict]:
    """Solve the augmented system per light image.

    Each image gets its own system [K_hat 1; eps 1^T -1] [L_s; C] =
    [L'; 0], warm-started from the backscatter-subtracted image itself.
    Negative solution values are clamped to zero and counted.
    """
    flat_mask = np.zeros(np.prod(kern.shape, dtype=int), bool)
    flat_mask[kern.pixel_index] = True
    out = np.zeros_like(lprime.images)
    info = {"C": [], "iterations": [], "clamped_negative": [],
            "residuals": []}
    for i, image in enumerate(lprime.images):
        rhs = np.zeros(kern.n + 1)
        rhs[:-1] = image.ravel()[kern.pixel_index]
        x0 = rhs.copy()
        x, report = bicgstab(lambda v: augmented_matvec(kern, v), rhs,
                             tol=tol, max_iter=max_iter, x0=x0)
        if not report.converged:
            raise PipelineError(
                f"forward-scatter solve failed on light {i}: {report}")
        ls = x[:-1]
        clamped = int((ls < 0).sum())
        if clamped:
            log.info("remove_forward_scatter: light %d clamped %d negative "
                     "pixels", i, clamped)
        np.maximum(ls, 0.0, out=ls)
        img = np.zeros(flat_mask.size)
        img[kern.pixel_index] = ls
        out[i] = img.reshape(kern.shape)
        info["C"].append(float(x[-1]))
        info["iterations"].append(report.iterations)
        info["clamped_negative"].append(clamped)
        info["residuals"].append(report.residual)
    mask = flat_mask.reshape(kern.shape)
    return ImageStack(images=out, lights=lprime.lights, mask=mask), info


def solve_normals(ls: ImageStack, lights, estimate: Scene, camera: Camera,
                  medium: Medium, table_g: TableG,
                  condition_threshold: float = 1e6) -> NormalSolveResult:
    """Per-pixel linear photometric stereo on the reflected component.

    The hemispherical scatter term is linearized through its value at the
    normal-aligned source, so each light contributes one linear equation
    in the albedo-scaled normal.  Pixels whose 3x3 normal-equations
    condition exceeds the threshold, or whose solution faces away from
    the camera, keep the estimate's normal and are flagged.
    """
    if len(lights) < 3:
        raise PipelineError("need at least 3 lights to solve for normals")
    mask = estimate.mask
    n_pix = int(mask.sum())
    n_lights = len(lights)
    rows_l = np.empty((n_lights, n_pix, 3))
    weights = np.empty((n_lights, n_pix))
    for i, light in enumerate(lights):
        g = light_geometry_maps(camera, light, medium, estimate.depth, mask)
        d_sp = g["d_sp"][mask]
        t_sp = g["t_sp"][mask]
        w = np.exp(-t_sp) / d_sp ** 2
        if medium.scattering > 0:
            w = w + medium.scattering * medium.extinction \
                / (2 * np.pi * t_sp) * lookup_g(table_g, t_sp, 1.0)
        weights[i] = light.intensity * w
        rows_l[i] = g["l_sp"][mask]
    rows = rows_l * weights[..., None]
    y = np.stack([img[mask] for img in ls.images])

    ata = np.einsum("lpi,lpj->pij", rows, rows)
    aty = np.einsum("lpi,lp->pi", rows, y)
    eigs = np.linalg.eigvalsh(ata)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(eigs[:, 0] > 0, eigs[:, -1] / eigs[:, 0], np.inf)
    solvable = cond <= condition_threshold
    m = np.zeros((n_pix, 3))
    if solvable.any():
        m[solvable] = np.linalg.solve(ata[solvable],
                                      aty[solvable][..., None])[..., 0]
    rho = np.linalg.norm(m, axis=1)

    # front-facing check against the viewing ray
    points_dir = _mask_rays(camera, mask)
    facing = -np.einsum("pk,pk->p", m, points_dir)
    good = solvable & (rho > 0) & (facing > 0)

    normals_v = np.where(good[:, None], m / np.maximum(rho, 1e-300)[:, None],
                         estimate.normals[mask])
    albedo_v = np.where(good, rho, estimate.albedo[mask])
    residual_v = np.linalg.norm(
        np.einsum("lpk,pk->lp", rows, normals_v * albedo_v[:, None]) - y,
        axis=0)

    normals = np.zeros(mask.shape + (3,))
    albedo = np.zeros(mask.shape)
    residual = np.zeros(mask.shape)
    flag = np.zeros(mask.shape, bool)
    normals[mask] = normals_v
    albedo[mask] = albedo_v
    residual[mask] = residual_v
    flag[mask] = ~good
    n_bad = int((~good).sum())
    if n_bad:
        log.info("solve_normals: %d pixels kept their previous normal", n_bad)
    return NormalSolveResult(normals=normals, albedo=albedo,
                             residual=residual, condition_flag=flag)


def _mask_rays(camera: Camera, mask: np.ndarray) -> np.ndarray:
    from .scene import pixel_rays
    return pixel_rays(camera)[mask]


def integrate_normals(normals: np.ndarray, mask: np.ndarray, camera: Camera,
                      anchor_depth: float) -> np.ndarray:
    """Perspective Poisson integration of a normal field to a depth map.

    Under perspective projection the log-depth gradient is a pointwise
    function of the normal and the pixel ray, so the normal field is
    integrated as a least-squares fit of log-depth finite differences to
    those target gradients (free boundary at the mask edge).  Each
    4-connected mask component is solved with a fixed gauge pixel and
    rescaled so its mean depth equals ``anchor_depth``; under perspective
    a global depth scale is a homothety through the camera center, so the
    anchor never changes the implied normals.
    """
    if anchor_depth <= 0:
        raise ValueError("anchor_depth must be positive")
    norms = np.linalg.norm(normals[mask], axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("normals must be unit length inside the mask")
    h, w = mask.shape
    xs = (np.arange(w) - camera.cx) / camera.fx
    ys = (np.arange(h) - camera.cy) / camera.fy
    gx, gy = np.meshgrid(xs, ys)
    ray = np.stack([gx, gy, np.ones_like(gx)], axis=-1)  # unnormalized
    denom = np.einsum("...k,...k->...", normals, ray)
    ok = mask & (np.abs(denom) / np.linalg.norm(ray, axis=-1)
                 >= INTEGRATION_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        gu = np.where(ok, -normals[..., 0] / (camera.fx * denom), 0.0)
        gv = np.where(ok, -normals[..., 1] / (camera.fy * denom), 0.0)

    index = np.full(mask.shape, -1, dtype=np.int64)
    n_pix = int(mask.sum())
    index[mask] = np.arange(n_pix)

    rows, cols, data, rhs_list = [], [], [], []
    eq = 0
    for axis, grad in ((1, gu), (0, gv)):
        if axis == 1:
            a = (slice(None), slice(0, w - 1))
            b = (slice(None), slice(1, w))
        else:
            a = (slice(0, h - 1), slice(None))
            b = (slice(1, h), slice(None))
        pair = mask[a] & mask[b] & ok[a] & ok[b]
        ia, ib = index[a][pair], index[b][pair]
        target = 0.5 * (grad[a][pair] + grad[b][pair])
        k = len(ia)
        rows.extend([np.arange(eq, eq + k)] * 2)
        cols.extend([ib, ia])
        data.extend([np.ones(k), -np.ones(k)])
        rhs_list.append(target)
        eq += k
    a_mat = sparse.coo_matrix(
        (np.concatenate(data),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(eq, n_pix)).tocsr()
    rhs = np.concatenate(rhs_list) if rhs_list else np.zeros(0)

    labels, n_comp = ndimage.label(mask, structure=np.array(
        [[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    comp_of_pixel = labels[mask]
    normal_mat = (a_mat.T @ a_mat).tolil()
    # gauge: pin the first pixel of each component (adds a penalty that
    # the free constant shift zeroes out exactly)
    for comp in range(1, n_comp + 1):
        pin = int(np.flatnonzero(comp_of_pixel == comp)[0])
        normal_mat[pin, pin] += 1.0
    log_depth = spsolve(normal_mat.tocsr(), a_mat.T @ rhs)

    depth_v = np.exp(log_depth)
    for comp in range(1, n_comp + 1):
        sel = comp_of_pixel == comp
        depth_v[sel] *= anchor_depth / depth_v[sel].mean()
    depth = np.zeros(mask.shape)
    depth[mask] = depth_v
    return depth
