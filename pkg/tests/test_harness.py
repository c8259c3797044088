import numpy as np
import pytest

from app.analysis.catalog import coordinate_plane, load_catalog_scene
from app.analysis.cone import estimate_cone
from app.analysis.harness import (
    SQRT2,
    check_gradient_bound,
    check_perpendicular_limit,
    check_two_sided_bounds,
    dyadic_grid,
    flow_between_sheets,
    nearest_point,
    restricted_gradient,
    umbrella_start,
)
from app.analysis.scene import BasicPiece, SemialgebraicScene
from app.analysis.subspace import GrassPoint, Ray
from app.core.errors import HypothesisFailed, ProjectionLoss, RayInCone


@pytest.fixture
def wedge():
    """Two planes through the y-axis at 45 degrees."""
    return SemialgebraicScene("wedge", 3, 2, (BasicPiece.from_strings(3, ["z"]),
                                              BasicPiece.from_strings(3, ["z - x"])))


def test_restricted_gradient_vanishes_between_parallel_planes():
    xy = GrassPoint.from_normals([0, 0, 1])
    g = restricted_gradient([0, 0, 0], xy, [0, 0, 1], xy)
    assert np.allclose(g, 0.0)
    assert np.allclose(restricted_gradient([1, 0, 0], xy, [1, 0, 0], xy), 0.0)


def test_restricted_gradient_norm_is_at_most_sqrt2(rng):
    for _ in range(50):
        Ty = GrassPoint(rng.standard_normal((3, 2)))
        Tz = GrassPoint(rng.standard_normal((3, 2)))
        g = restricted_gradient(rng.standard_normal(3), Ty, rng.standard_normal(3), Tz)
        assert np.linalg.norm(g) <= SQRT2 + 1e-12


@pytest.mark.parametrize("name,kwargs", [
    ("two_planes", {}),
    ("two_spheres", {}),
])
def test_gradient_bound_holds(name, kwargs):
    scene = load_catalog_scene(name)
    report = check_gradient_bound(scene, count=2000, pool=150, fd_pairs=20, **kwargs)
    assert report.passed
    assert report.min_margin >= -1e-9
    assert report.fd_error <= 1e-4


def test_gradient_bound_on_umbrella_sheets():
    scene = load_catalog_scene("umbrella_sheets")
    report = check_gradient_bound(scene, center=[0, 0.5, 0.3], radius=0.25, count=2000, pool=150, fd_pairs=20)
    assert report.passed


def test_nearest_point_on_plane(plane):
    near = nearest_point(plane, [0.3, 0.1, 0.5], 1.0)
    assert near.distance == pytest.approx(0.5, abs=1e-6)
    assert near.point[2] == pytest.approx(0.0, abs=1e-9)
    assert near.piece == 0


def test_nearest_point_respects_inequalities():
    scene = load_catalog_scene("half_plane")
    near = nearest_point(scene, [0.2, 0.0, -0.3], 1.0)
    assert near.distance == pytest.approx(np.hypot(0.2, 0.3), abs=1e-5)
    assert near.point[2] >= -1e-7


def test_dyadic_grid():
    assert dyadic_grid(3) == [0.5, 0.25, 0.125]


def test_two_sided_bounds_at_a_smooth_point(plane):
    report = check_two_sided_bounds(plane, [0.3, 0.2, 0.0], [0, 0, 1], R=10, grid=dyadic_grid(8))
    assert report.theta == pytest.approx(np.pi / 2)
    assert report.passed
    assert all(row.holds for row in report.rows)
    assert report.delta_R == pytest.approx(0.5)


def test_two_sided_bounds_reject_tangent_directions(plane):
    with pytest.raises(RayInCone):
        check_two_sided_bounds(plane, [0.3, 0.2, 0.0], [1, 0, 0], R=10)


def test_flow_reaches_contact_between_crossing_planes(wedge):
    trace = flow_between_sheets(wedge, (0, 1), [0.5, 0.0, 0.0], [0.5, 0.0, 0.5], r=1.0, delta=10.0, v=[1, 0, 0])
    assert trace.termination == "critical_point"
    assert trace.contact
    assert trace.strictly_decreasing
    assert trace.rho[-1] < 1e-5
    assert trace.terminal_angle == pytest.approx(np.pi / 4)
    assert trace.decrease_error < 0.05


def test_flow_start_off_the_pieces(wedge):
    half = SemialgebraicScene("half", 3, 2, (BasicPiece.from_strings(3, ["z"], ge=["x"]),
                                             BasicPiece.from_strings(3, ["z - 1"])))
    with pytest.raises(ProjectionLoss):
        flow_between_sheets(half, (0, 1), [-0.5, 0, 0], [0, 0, 1], r=1.0, delta=1.0, v=[1, 0, 0])


def test_umbrella_start_lies_on_both_sheets():
    scene = load_catalog_scene("umbrella_sheets")
    y, z = umbrella_start()
    assert y[0] > 0 > z[0]
    for piece, point in zip(scene.pieces, (y, z)):
        assert abs(piece.equations[0].eval(point)) < 1e-15


@pytest.mark.slow
def test_umbrella_flow_terminates_critical():
    scene = load_catalog_scene("umbrella_sheets")
    y0, z0 = umbrella_start()
    trace = flow_between_sheets(scene, (0, 1), y0, z0, r=0.01, delta=0.5, v=[0, 1, 0])
    assert trace.termination == "critical_point"
    assert trace.strictly_decreasing
    assert trace.terminal_angle is not None and trace.terminal_angle < 0.05


def test_two_sided_bounds_on_the_half_plane(quick_schedule):
    scene = load_catalog_scene("half_plane")
    cone = estimate_cone(scene, quick_schedule)
    alpha = 0.6
    p = [np.sin(alpha), 0.0, np.cos(alpha)]
    for R in (10.0, 100.0):
        report = check_two_sided_bounds(scene, np.zeros(3), p, R, grid=dyadic_grid(8), cone=cone)
        assert report.theta == pytest.approx(alpha, abs=0.02)
        assert report.passed
        assert all(row.distance == pytest.approx(row.t * np.sin(alpha), abs=1e-5) for row in report.rows)


def test_two_sided_bounds_at_the_cusp_point(cusp):
    # the cone of the cusp is the ray e3, so e1 leaves it at a right angle
    report = check_two_sided_bounds(cusp, np.zeros(3), [1.0, 0.0, 0.0], R=10, grid=dyadic_grid(8), theta=np.pi / 2)
    assert report.passed
    assert report.delta_R >= 0.25
    assert all(row.holds for row in report.rows if row.t <= 0.25)


def test_perpendicular_limit_needs_a_direction_outside_the_cone(plane, quick_schedule):
    with pytest.raises(HypothesisFailed):
        check_perpendicular_limit(plane, Ray([1, 0, 0]), coordinate_plane(3, 2), quick_schedule)


@pytest.mark.slow
def test_perpendicular_limit_on_codim2(schedule):
    scene = load_catalog_scene("codim2")
    report = check_perpendicular_limit(scene, Ray([0, 0, 0, 1]), coordinate_plane(4, 1, 2), schedule)
    assert report.passed
    assert report.finest_angle == pytest.approx(np.pi / 2, abs=0.1)
    assert abs(report.direction[0]) == pytest.approx(1.0, abs=0.05)
