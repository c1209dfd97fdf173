"""The shape-dependent surface-camera forward-scatter operator.

Every surface facet acts as a virtual light source whose reflected
radiance scatters into the viewing rays of other pixels.  Collecting the
per-pair contributions gives an N x N matrix over the masked pixels:
attenuation on the diagonal, scattered-path factors off it.  The matrix
depends on the current shape estimate through facet areas, tangent-plane
clamps, and optical thicknesses, so it is rebuilt from scratch whenever
the shape changes.  Off-diagonal entries decay with pixel distance but
converge to a small positive floor rather than zero; truncating to an
r x r support window and folding the floor into a rank-one correction
with an extra unknown keeps the system solvable at scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
from scipy import sparse

from .scene import Camera, Medium, Scene, GAMMA_CLAMP, pixel_rays
from .tables import TableF, scattered_path_factor

log = logging.getLogger(__name__)

# Facets seen nearly edge-on get unbounded areas from the 1/(v . n)
# footprint term; they are dropped as scatter sources below this cosine.
GRAZING_FLOOR = 0.05

DENSE_GUARD = 4096


@dataclass
class SparseKernel:
    """Window-truncated forward-scatter operator plus its floor constant.

    ``matrix`` is CSR over masked-pixel indices and includes the
    attenuation diagonal; ``epsilon`` is the smallest stored off-diagonal
    entry (0 if there are none).  ``pixel_index`` maps matrix rows to
    linear positions in the image.
    """

    n: int
    matrix: sparse.csr_matrix
    diagonal: np.ndarray
    epsilon: float
    r: int
    pixel_index: np.ndarray
    shape: tuple


def _pixel_arrays(scene: Scene, camera: Camera, medium: Medium):
    """Per-pixel quantities consumed by the pair formulas, image-shaped."""
    rays = pixel_rays(camera)
    d_v = np.where(scene.mask, scene.depth / rays[..., 2], 0.0)
    points = rays * d_v[..., None]
    facing = -np.einsum("...k,...k->...", rays, scene.normals)
    with np.errstate(divide="ignore"):
        area = np.where(facing > 0, camera.pixel_area / np.maximum(facing, 1e-300), 0.0)
    return SimpleNamespace(
        rays=rays, points=points, d_v=d_v, t_v=medium.extinction * d_v,
        facing=facing, area=area,
        plane_num=np.einsum("...k,...k->...", scene.normals, points),
        ok_source=scene.mask & (facing >= GRAZING_FLOOR))


def _viewline_plane_distance(plane_num, normal_q, ray_p, d_vp):
    """Distance along p's viewline to the tangent plane at q, clamped.

    Inside-object intersections clamp to d_vp, behind-camera ones to 0; a
    ray parallel to the plane yields d_vp when the camera lies on the
    outer half-space and 0 otherwise.
    """
    denom = np.einsum("...k,...k->...", normal_q, ray_p)
    parallel = np.abs(denom) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(parallel, 0.0, plane_num / np.where(parallel, 1.0, denom))
    t = np.where(parallel, np.where(plane_num < 0, d_vp, 0.0), t)
    return np.clip(t, 0.0, d_vp)


def clamp_dvp_prime(q_point, q_normal, p_ray, d_vp: float) -> float:
    """Scalar form of the tangent-plane clamp for one (p, q) pair."""
    q_point = np.asarray(q_point, dtype=float)
    q_normal = np.asarray(q_normal, dtype=float)
    p_ray = np.asarray(p_ray, dtype=float)
    return float(_viewline_plane_distance(
        np.dot(q_normal, q_point), q_normal, p_ray, d_vp))


def _pair_values(table_f, medium, ray_p, d_vp, ray_q, d_vq, area_q,
                 normal_q, plane_num_q):
    """Off-diagonal kernel values for broadcast pair arrays."""
    cos_g = np.einsum("...k,...k->...", ray_p, ray_q)
    gamma = np.clip(np.arccos(np.clip(cos_g, -1.0, 1.0)),
                    GAMMA_CLAMP, np.pi - GAMMA_CLAMP)
    d_end = _viewline_plane_distance(plane_num_q, normal_q, ray_p, d_vp)
    return area_q * scattered_path_factor(table_f, medium, d_vq, gamma, d_end)


def kernel_entry(p, q, scene: Scene, camera: Camera, medium: Medium,
                 table_f: TableF) -> float:
    """One matrix entry for pixels p = (x, y), q = (x, y).

    p == q returns the attenuation diagonal exp(-T_vp); a grazing facet
    at q returns 0 with a warning.
    """
    px, py = p
    qx, qy = q
    if not (scene.mask[py, px] and scene.mask[qy, qx]):
        raise ValueError("both pixels must lie inside the mask")
    pix = _pixel_arrays(scene, camera, medium)
    if p == q:
        return float(np.exp(-pix.t_v[py, px]))
    if not pix.ok_source[qy, qx]:
        log.warning("kernel_entry: grazing facet at %s dropped", (qx, qy))
        return 0.0
    return float(_pair_values(
        table_f, medium,
        pix.rays[py, px], pix.d_v[py, px],
        pix.rays[qy, qx], pix.d_v[qy, qx], pix.area[qy, qx],
        scene.normals[qy, qx], pix.plane_num[qy, qx]))


def build_sparse_kernel(scene: Scene, camera: Camera, medium: Medium,
                        table_f: TableF, r: int) -> SparseKernel:
    """Assemble the window-truncated operator row set, never the dense one.

    Entries are gathered one window offset at a time, which vectorizes
    the pair formula over every pixel pair sharing that offset.  Only
    strictly positive off-diagonal values are stored; epsilon is their
    minimum.
    """
    if r < 1 or r % 2 == 0:
        raise ValueError("window side r must be odd and >= 1")
    mask = scene.mask
    h, w = mask.shape
    pixel_index = np.flatnonzero(mask.ravel())
    n = len(pixel_index)
    if n == 0:
        raise ValueError("mask is empty")
    index_map = np.full(h * w, -1, dtype=np.int64)
    index_map[pixel_index] = np.arange(n)
    index_map = index_map.reshape(h, w)

    pix = _pixel_arrays(scene, camera, medium)
    diag = np.exp(-pix.t_v.ravel()[pixel_index])

    ys, xs = np.nonzero(mask)
    if ys.max() - ys.min() < r and xs.max() - xs.min() < r:
        log.warning("kernel window r=%d covers the whole mask; "
                    "truncation-free (degenerate) case", r)

    half = r // 2
    rows, cols, vals = [np.arange(n)], [np.arange(n)], [diag]
    dropped = int((scene.mask & ~pix.ok_source).sum())
    if medium.scattering == 0.0:
        half = 0  # every off-diagonal entry is zero in a non-scattering medium
    for di in range(-half, half + 1):
        for dj in range(-half, half + 1):
            if di == 0 and dj == 0:
                continue
            p_y = slice(max(0, -di), h - max(0, di))
            p_x = slice(max(0, -dj), w - max(0, dj))
            q_y = slice(max(0, di), h + min(0, di))
            q_x = slice(max(0, dj), w + min(0, dj))
            valid = mask[p_y, p_x] & pix.ok_source[q_y, q_x]
            if not valid.any():
                continue
            v = _pair_values(
                table_f, medium,
                pix.rays[p_y, p_x][valid], pix.d_v[p_y, p_x][valid],
                pix.rays[q_y, q_x][valid], pix.d_v[q_y, q_x][valid],
                pix.area[q_y, q_x][valid],
                scene.normals[q_y, q_x][valid], pix.plane_num[q_y, q_x][valid])
            keep = v > 0
            rows.append(index_map[p_y, p_x][valid][keep])
            cols.append(index_map[q_y, q_x][valid][keep])
            vals.append(v[keep])
    if dropped:
        log.info("build_sparse_kernel: %d grazing facets dropped as sources",
                 dropped)
    values = np.concatenate(vals)
    matrix = sparse.coo_matrix(
        (values, (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    off = values[n:]
    epsilon = float(off.min()) if off.size else 0.0
    return SparseKernel(n=n, matrix=matrix, diagonal=diag, epsilon=epsilon,
                        r=r, pixel_index=pixel_index, shape=(h, w))


def augmented_matvec(kernel: SparseKernel, x: np.ndarray) -> np.ndarray:
    """Apply [[K_hat, 1], [eps 1^T, -1]] to a length n+1 vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (kernel.n + 1,):
        raise ValueError(f"expected length {kernel.n + 1}, got {x.shape}")
    out = np.empty_like(x)
    out[:-1] = kernel.matrix @ x[:-1] + x[-1]
    out[-1] = kernel.epsilon * x[:-1].sum() - x[-1]
    return out


def _dense_rows(pix, scene, camera, medium, table_f, pixel_index, row_ids):
    """Dense kernel rows for the masked pixels listed in row_ids."""
    flat = lambda a: a.reshape(-1, a.shape[-1]) if a.ndim == 3 else a.ravel()
    q_sel = pixel_index[pix.ok_source.ravel()[pixel_index]]
    q_cols = np.searchsorted(pixel_index, q_sel)
    ray_q = flat(pix.rays)[q_sel]
    block = np.zeros((len(row_ids), len(pixel_index)))
    p_lin = pixel_index[row_ids]
    vals = _pair_values(
        table_f, medium,
        flat(pix.rays)[p_lin][:, None, :], pix.d_v.ravel()[p_lin][:, None],
        ray_q[None, :, :], pix.d_v.ravel()[q_sel][None, :],
        pix.area.ravel()[q_sel][None, :],
        flat(scene.normals)[q_sel][None, :, :],
        pix.plane_num.ravel()[q_sel][None, :])
    block[:, q_cols] = vals
    block[np.arange(len(row_ids)), row_ids] = np.exp(-pix.t_v.ravel()[p_lin])
    return block


def dense_kernel(scene: Scene, camera: Camera, medium: Medium,
                 table_f: TableF, block_rows: int = 256) -> np.ndarray:
    """Full N x N matrix; small scenes only (test oracle and renderer)."""
    pixel_index = np.flatnonzero(scene.mask.ravel())
    n = len(pixel_index)
    if n > DENSE_GUARD:
        raise ValueError(f"dense kernel refused for n={n} > {DENSE_GUARD}")
    pix = _pixel_arrays(scene, camera, medium)
    out = np.empty((n, n))
    for start in range(0, n, block_rows):
        ids = np.arange(start, min(start + block_rows, n))
        out[ids] = _dense_rows(pix, scene, camera, medium, table_f,
                               pixel_index, ids)
    return out


def dense_forward_apply(scene: Scene, camera: Camera, medium: Medium,
                        table_f: TableF, ls_columns: np.ndarray,
                        block_rows: int = 256) -> np.ndarray:
    """Off-diagonal dense kernel applied to (n, k) radiance columns.

    This is the renderer's exact surface-camera forward-scatter sum; the
    dense matrix is materialized only block-row by block-row.
    """
    pixel_index = np.flatnonzero(scene.mask.ravel())
    n = len(pixel_index)
    if ls_columns.shape[0] != n:
        raise ValueError("ls_columns must have one row per masked pixel")
    pix = _pixel_arrays(scene, camera, medium)
    out = np.empty_like(ls_columns, dtype=float)
    for start in range(0, n, block_rows):
        ids = np.arange(start, min(start + block_rows, n))
        block = _dense_rows(pix, scene, camera, medium, table_f,
                            pixel_index, ids)
        block[np.arange(len(ids)), ids] = 0.0
        out[ids] = block @ ls_columns
    return out
