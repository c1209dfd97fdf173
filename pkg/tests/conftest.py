import numpy as np
import pytest

from turbidps.scene import Camera, LightSource, Medium, make_plane_init, make_sphere_scene
from turbidps.tables import build_table_f, build_table_g


@pytest.fixture(scope="session")
def table_f():
    # default production grid
    return build_table_f(1024, 2048, 10.0)


@pytest.fixture(scope="session")
def table_g(table_f):
    return build_table_g(256, 256, table_f)


@pytest.fixture(scope="session")
def medium():
    # pure-scattering benchmark medium, per mm
    return Medium.from_coefficients(0.0, 5e-3)


@pytest.fixture(scope="session")
def plane_camera():
    return Camera(width=24, height=24, fx=320.0, fy=320.0, cx=11.5, cy=11.5,
                  pixel_area=1.5625)


@pytest.fixture(scope="session")
def plane_scene(plane_camera):
    return make_plane_init(np.ones((24, 24), bool), 400.0, plane_camera)


@pytest.fixture(scope="session")
def ring_lights():
    phis = 2 * np.pi * np.arange(8) / 8
    return [LightSource(position=np.array([100 * np.cos(p),
                                           100 * np.sin(p), 0.0]),
                        intensity=1e6) for p in phis]


def small_sphere(res=48, depth=300.0, radius=30.0, fx=200.0, albedo=0.8):
    camera = Camera(width=res, height=res, fx=fx, fy=fx,
                    cx=(res - 1) / 2, cy=(res - 1) / 2,
                    pixel_area=(depth / fx) ** 2)
    return camera, make_sphere_scene(camera, (0.0, 0.0, depth), radius, albedo)
