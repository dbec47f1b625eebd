import numpy as np
import pytest

from surfplace.fixtures import generate_fixtures
from surfplace.geometry import convex_hull_2d, plane_basis
from surfplace.surfaces import InteractionSurface


def random_convex_surface(rng, center=None, scale=1.0):
    """Convex polygon from the hull of random points in a random plane."""
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    u, v = plane_basis(n)
    xy = rng.uniform(-scale, scale, size=(rng.integers(3, 9), 2))
    hull = convex_hull_2d(xy)
    while len(hull) < 3:
        xy = rng.uniform(-scale, scale, size=(6, 2))
        hull = convex_hull_2d(xy)
    c = rng.uniform(-2, 2, size=3) if center is None else np.asarray(center, float)
    pts = c + xy[hull, :1] * u + xy[hull, 1:] * v
    return InteractionSurface(pts, n)


def sample_polygon(surface, count, rng):
    """Uniform points over the polygon's area plus points along its boundary."""
    poly = surface.polygon
    tris = [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]
    areas = np.array([np.linalg.norm(np.cross(b - a, c - a)) / 2 for a, b, c in tris])
    pick = rng.choice(len(tris), size=count, p=areas / areas.sum())
    r1, r2 = rng.random(count), rng.random(count)
    s = np.sqrt(r1)
    a = np.array([tris[k][0] for k in pick])
    b = np.array([tris[k][1] for k in pick])
    c = np.array([tris[k][2] for k in pick])
    inner = (1 - s)[:, None] * a + (s * (1 - r2))[:, None] * b + (s * r2)[:, None] * c
    edges = []
    for i in range(len(poly)):
        t = np.linspace(0, 1, count // len(poly), endpoint=False)[:, None]
        edges.append(poly[i] + t * (poly[(i + 1) % len(poly)] - poly[i]))
    return np.vstack([inner] + edges)


def square(center, normal=(0, 0, 1), half=0.5):
    c = np.asarray(center, float)
    n = np.asarray(normal, float)
    u, v = plane_basis(n)
    pts = np.array([c - half * u - half * v, c + half * u - half * v, c + half * u + half * v, c - half * u + half * v])
    return InteractionSurface(pts, n)


def rect_xy(x0, x1, y0, y1, z=0.0, normal=(0, 0, 1)):
    pts = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]], float)
    if normal[2] < 0:
        pts = pts[::-1]
    return InteractionSurface(pts, normal)


@pytest.fixture(scope="session")
def fixture_suite(tmp_path_factory):
    """The five generated tasks with their seed-0 judge caches recorded."""
    root = tmp_path_factory.mktemp("suite")
    tasks = generate_fixtures(root, seed=0, record=True)
    return root, tasks


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
