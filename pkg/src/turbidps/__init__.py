"""Photometric stereo in scattering media.

Synthesizes images of Lambertian surfaces seen through a homogeneous
single-scattering medium (backscatter, source-surface and surface-camera
forward scatter, all evaluated analytically through precomputed lookup
tables), and inverts that model to recover per-pixel surface normals and
depth: backscatter subtraction, shape-aware forward-scatter removal via a
sparse-approximated linear system solved with BiCGStab, per-pixel linear
photometric stereo, and perspective normal integration.
"""

__version__ = "0.1.0"

from .scene import Medium, Camera, LightSource, Scene, ImageStack  # noqa: F401
from .tables import TableF, TableG, build_table_f, build_table_g  # noqa: F401
