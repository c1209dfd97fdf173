"""Lookup tables that make the single-scattering integrals analytical.

Two tables are precomputed:

* ``TableF`` holds F(u, v) = integral of exp(-u * tan(xi)) for xi in [0, v].
  Differences of F evaluated at two angles turn every scattered-path
  integral (backscatter, surface-camera forward scatter) into a closed
  form.
* ``TableG`` holds the hemispherical integral that gives the scattered
  light a point source deposits onto a Lambertian facet, parameterized by
  the source-facet optical thickness T and the cosine mu between the
  facet normal and the source direction.

Both tables are immutable after construction; lookups are pure bilinear
interpolation and safe for concurrent readers.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import TableBuildError, TableFormatError

log = logging.getLogger(__name__)

# v endpoint stays strictly below pi/2 where tan diverges.
V_MAX = np.pi / 2 - 1e-4
# Floor for sin of the source angle in the hemispherical integrand; the
# 1/sin factor is an integrable point singularity, the floor only removes
# the 0/0 at the exact source direction.
SIN_ANGLE_FLOOR = 1e-6

_MAGIC = b"TPST"
_VERSION = 1


@dataclass(frozen=True)
class TableF:
    """Tabulated F(u, v) on a rectangular grid.

    ``values[i, j]`` is F at (u_grid[i], v_grid[j]).  The u grid is
    square-root spaced (dense near u = 0 where the curvature of F in u
    blows up like 1/u); the v grid is linear on [0, V_MAX].
    """

    u_grid: np.ndarray
    v_grid: np.ndarray
    values: np.ndarray

    @property
    def u_max(self) -> float:
        return float(self.u_grid[-1])


@dataclass(frozen=True)
class TableG:
    """Tabulated hemispherical scatter integral G(T, mu).

    ``values[i, j]`` is G at (t_grid[i], mu_grid[j]); t_grid is
    log-spaced, mu_grid linear on [-1, 1].
    """

    t_grid: np.ndarray
    mu_grid: np.ndarray
    values: np.ndarray


def _gauss_panels(a: float, b: float, panels: int, order: int = 8):
    """Composite Gauss-Legendre nodes and weights on [a, b]."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


def build_table_f(u_samples: int = 1024, v_samples: int = 2048,
                  u_max: float = 10.0) -> TableF:
    """Tabulate F(u, v) by cumulative composite Gauss-Legendre quadrature.

    Each v column accumulates the previous one plus the panel integral of
    exp(-u tan xi) over [v_{j-1}, v_j], evaluated with an 8-point rule for
    all u rows at once.  The integrand decays over an angular scale of at
    least 1/(u_max + 1/u_max), far wider than one panel, so the per-panel
    rule is accurate to well below 1e-8.
    """
    if u_samples < 2 or v_samples < 2:
        raise ValueError("u_samples and v_samples must be >= 2")
    if u_max <= 0:
        raise ValueError("u_max must be positive")
    u_grid = u_max * np.linspace(0.0, 1.0, u_samples) ** 2
    v_grid = np.linspace(0.0, V_MAX, v_samples)
    values = np.zeros((u_samples, v_samples))
    xg, wg = np.polynomial.legendre.leggauss(8)
    for j in range(1, v_samples):
        a, b = v_grid[j - 1], v_grid[j]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid + half * xg
        panel = (np.exp(-np.outer(u_grid, np.tan(nodes))) * wg).sum(axis=1) * half
        values[:, j] = values[:, j - 1] + panel
        if not np.all(np.isfinite(values[:, j])):
            i = int(np.flatnonzero(~np.isfinite(values[:, j]))[0])
            raise TableBuildError(
                f"non-finite F entry at u={u_grid[i]:.6g}, v={v_grid[j]:.6g}")
    return TableF(u_grid=u_grid, v_grid=v_grid, values=values)


def _bilinear(x_grid, y_grid, values, x, y):
    ix = np.clip(np.searchsorted(x_grid, x, side="right") - 1, 0, len(x_grid) - 2)
    iy = np.clip(np.searchsorted(y_grid, y, side="right") - 1, 0, len(y_grid) - 2)
    fx = (x - x_grid[ix]) / (x_grid[ix + 1] - x_grid[ix])
    fy = (y - y_grid[iy]) / (y_grid[iy + 1] - y_grid[iy])
    return (values[ix, iy] * (1 - fx) * (1 - fy)
            + values[ix + 1, iy] * fx * (1 - fy)
            + values[ix, iy + 1] * (1 - fx) * fy
            + values[ix + 1, iy + 1] * fx * fy)


def lookup_f(table: TableF, u, v):
    """Bilinear interpolation of F; exact at grid nodes.

    u below 0 or v outside [0, pi/2) raise; u above the grid maximum is
    clamped (the integrand is vanishing there), v in [V_MAX, pi/2) is
    clamped onto the last column.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(u < 0):
        raise ValueError("u must be non-negative")
    if np.any(v < 0) or np.any(v >= np.pi / 2):
        raise ValueError("v must lie in [0, pi/2)")
    uc = np.minimum(u, table.u_max)
    vc = np.minimum(v, V_MAX)
    out = _bilinear(table.u_grid, table.v_grid, table.values, uc, vc)
    return out if out.ndim else float(out)


def scattered_radiance_profile(table_f: TableF, t: float, angle):
    """Angular profile of single-scattered radiance around a point source.

    For a ray passing at angle ``angle`` from the direction to a source at
    optical distance ``t``, the scattered radiance integrated to infinity
    is proportional to

        exp(-t cos a) / sin a * [F(t sin a, V_MAX) - F(t sin a, a / 2)].

    The 1/sin singularity at a = 0 is integrable; sin is floored at
    SIN_ANGLE_FLOOR only to avoid the 0/0 at the exact source direction.
    """
    angle = np.asarray(angle, dtype=float)
    s = np.sin(angle)
    u = t * s
    bracket = lookup_f(table_f, u, np.full_like(angle, V_MAX)) \
        - lookup_f(table_f, u, angle / 2)
    return np.exp(-t * np.cos(angle)) / np.maximum(s, SIN_ANGLE_FLOOR) * bracket


def scattered_path_factor(table_f: TableF, medium, d_source, gamma, d_end):
    """Single-scattered radiance collected along a finite viewing path.

    A unit-intensity point source sits at distance ``d_source`` from the
    camera, at angle ``gamma`` from the viewing ray; scattering is
    integrated over path length [0, d_end].  In closed form this is

        b exp(-T_s cos g) / (2 pi d_source sin g) * [F(H1, H2) - F(H1, g/2)]

    with T_s = c d_source, H1 = T_s sin g and
    H2 = pi/4 + arctan((c d_end - T_s cos g) / H1) / 2.  Multiplying by a
    source intensity gives backscatter radiance; multiplying by the
    radiance-times-area of a reflecting facet gives one forward-scatter
    kernel entry.
    """
    if medium.scattering == 0.0:
        return np.zeros(np.broadcast(d_source, gamma, d_end).shape)
    d_source = np.asarray(d_source, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    d_end = np.asarray(d_end, dtype=float)
    c = medium.extinction
    t_s = c * d_source
    sin_g, cos_g = np.sin(gamma), np.cos(gamma)
    h1 = t_s * sin_g
    h2 = np.pi / 4 + 0.5 * np.arctan2(c * d_end - t_s * cos_g, h1)
    bracket = lookup_f(table_f, h1, np.minimum(h2, V_MAX)) \
        - lookup_f(table_f, h1, gamma / 2)
    out = medium.scattering * np.exp(-t_s * cos_g) \
        / (2 * np.pi * d_source * sin_g) * bracket
    return out if out.ndim else float(out)


def _clipped_cos_sum(cos_psi_sorted, suffix_sum, a, b):
    """Sum over azimuth samples c of max(a + b * c, 0) with b >= 0.

    ``cos_psi_sorted`` is ascending, ``suffix_sum[k]`` the sum of its
    elements from k on.  Exact rewrite of the brute-force sum: terms are
    positive exactly where c > -a/b.
    """
    n = len(cos_psi_sorted)
    out = np.empty(np.broadcast(a, b).shape)
    flat_a = np.broadcast_to(a, out.shape).ravel()
    flat_b = np.broadcast_to(b, out.shape).ravel()
    degenerate = flat_b < 1e-300
    thr = np.where(degenerate, 0.0, -flat_a / np.where(degenerate, 1.0, flat_b))
    idx = np.searchsorted(cos_psi_sorted, thr, side="right")
    count = n - idx
    res = flat_a * count + flat_b * suffix_sum[idx]
    res[degenerate] = n * np.maximum(flat_a[degenerate], 0.0)
    return res.reshape(out.shape)


def build_table_g(t_samples: int = 256, mu_samples: int = 256,
                  table_f: TableF | None = None, *,
                  t_min: float = 1e-3, t_max: float = 20.0,
                  polar_panels: int = 48, azimuth_samples: int = 160) -> TableG:
    """Tabulate the hemispherical scatter integral G(T, mu).

    The integral runs over the hemisphere of directions above the facet
    normal; the integrand is the scattered-radiance profile around the
    source direction times the Lambertian cosine.  The product rule uses
    composite Gauss-Legendre nodes in the polar angle measured from the
    source direction, where the 1/sin singularity cancels against the
    solid-angle measure exactly, and uniform midpoint samples in azimuth.
    The hemisphere restriction enters as a clamp of the cosine factor,
    which the azimuth sum evaluates in closed form per node.
    """
    if table_f is None:
        table_f = build_table_f()
    if t_samples < 2 or mu_samples < 2:
        raise ValueError("t_samples and mu_samples must be >= 2")
    if t_min <= 0:
        raise ValueError("optical-thickness samples must be positive")
    t_grid = np.geomspace(t_min, t_max, t_samples)
    mu_grid = np.linspace(-1.0, 1.0, mu_samples)

    gp, w = _gauss_panels(0.0, np.pi, polar_panels)
    cos_gp, sin_gp = np.cos(gp), np.sin(gp)
    psi = (np.arange(azimuth_samples) + 0.5) * (2 * np.pi / azimuth_samples)
    cos_psi = np.sort(np.cos(psi))
    suffix = np.concatenate([np.cumsum(cos_psi[::-1])[::-1], [0.0]])
    d_psi = 2 * np.pi / azimuth_samples

    sin_th = np.sqrt(np.maximum(0.0, 1.0 - mu_grid ** 2))
    values = np.empty((t_samples, mu_samples))
    for i, t in enumerate(t_grid):
        # sin(angle) cancels the measure, leaving the bracketed profile
        prof = scattered_radiance_profile(table_f, t, gp) \
            * np.maximum(sin_gp, SIN_ANGLE_FLOOR)
        a = mu_grid[None, :] * cos_gp[:, None]
        b = sin_th[None, :] * sin_gp[:, None]
        inner = _clipped_cos_sum(cos_psi, suffix, a, b) * d_psi
        values[i] = (prof * w) @ inner
        if not np.all(np.isfinite(values[i])):
            j = int(np.flatnonzero(~np.isfinite(values[i]))[0])
            raise TableBuildError(
                f"non-finite G entry at T={t:.6g}, mu={mu_grid[j]:.6g}")
    return TableG(t_grid=t_grid, mu_grid=mu_grid, values=values)


def lookup_g(table: TableG, t, mu):
    """Bilinear interpolation of G; T outside the grid is clamped."""
    t = np.asarray(t, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(np.abs(mu) > 1.0 + 1e-12):
        raise ValueError("mu must lie in [-1, 1]")
    t_lo, t_hi = table.t_grid[0], table.t_grid[-1]
    if np.any(t < t_lo) or np.any(t > t_hi):
        log.debug("lookup_g: clamping T to [%g, %g]", t_lo, t_hi)
    tc = np.clip(t, t_lo, t_hi)
    mc = np.clip(mu, -1.0, 1.0)
    out = _bilinear(table.t_grid, table.mu_grid, table.values, tc, mc)
    return out if out.ndim else float(out)


def save_tables(path, table_f: TableF, table_g: TableG) -> None:
    """Write both tables to one little-endian binary file.

    Layout: magic, version, the four grid lengths, then each grid and
    value array as raw float64.  Round-trips are bit-exact.
    """
    header = _MAGIC + struct.pack(
        "<5I", _VERSION,
        len(table_f.u_grid), len(table_f.v_grid),
        len(table_g.t_grid), len(table_g.mu_grid))
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (table_f.u_grid, table_f.v_grid, table_f.values,
                    table_g.t_grid, table_g.mu_grid, table_g.values):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tables(path) -> tuple[TableF, TableG]:
    """Read tables written by :func:`save_tables`; validates eagerly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:4] != _MAGIC:
        raise TableFormatError(f"{path}: not a table file")
    version, nu, nv, nt, nmu = struct.unpack("<5I", raw[4:24])
    if version != _VERSION:
        raise TableFormatError(
            f"{path}: format version {version}, expected {_VERSION}")
    counts = [nu, nv, nu * nv, nt, nmu, nt * nmu]
    expected = 24 + 8 * sum(counts)
    if len(raw) != expected:
        raise TableFormatError(
            f"{path}: expected {expected} bytes, found {len(raw)} (truncated?)")
    arrays = []
    offset = 24
    for count in counts:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count,
                                    offset=offset).astype(float))
        offset += 8 * count
    u_grid, v_grid, f_vals, t_grid, mu_grid, g_vals = arrays
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise TableFormatError(f"{path}: non-finite payload")
    table_f = TableF(u_grid=u_grid, v_grid=v_grid,
                     values=f_vals.reshape(nu, nv))
    table_g = TableG(t_grid=t_grid, mu_grid=mu_grid,
                     values=g_vals.reshape(nt, nmu))
    return table_f, table_g
