import dataclasses

import numpy as np
import pytest

from app.analysis.catalog import coordinate_plane, load_catalog_scene, pencil
from app.analysis.cone import estimate_cone
from app.analysis.fiber import (
    EXCEPTIONAL_VERDICTS,
    Verdict,
    classify_many,
    classify_ray,
    estimate_fiber,
    fiber_closure_check,
    fiber_connectivity,
    grassmann_dimension,
    medoid,
    plane_net,
    ray_containment_tol,
)
from app.analysis.subspace import GrassPoint, Ray, angle_subspaces, angle_vector_subspace, grass_hausdorff
from app.core.errors import RayNotInCone, SceneError
from app.schemas.results import FiberEstimateOut, RayClassificationOut


def test_plane_net_covers_every_plane():
    planes = pencil(3, axis=1, count=91)
    kept = plane_net(planes, 0.1)
    assert 0 < len(kept) < len(planes)
    net = [planes[i] for i in kept]
    assert grass_hausdorff(planes, net) <= 0.1
    assert plane_net([], 0.1) == []


def test_medoid_of_a_pencil():
    planes = pencil(3, axis=1, count=91)
    index, diameter = medoid(planes)
    assert 0 <= index < len(planes)
    assert diameter == pytest.approx(np.pi / 2, abs=0.02)
    assert medoid(planes[:1]) == (0, 0.0)


def test_grassmann_dimension():
    planes = pencil(3, axis=1, count=61)
    rep = planes[30]
    assert grassmann_dimension(rep, planes) == 1
    assert grassmann_dimension(rep, [rep, rep]) == 0


def test_ray_containment_tolerance_tightens_at_the_finest_scale(schedule):
    assert ray_containment_tol(schedule) == pytest.approx(5e-3)
    assert ray_containment_tol(schedule, schedule.K) == pytest.approx(5e-3)
    for k in schedule.window()[:-1]:
        assert ray_containment_tol(schedule, k) == pytest.approx(0.02)


def test_containment_margin_uses_the_tolerance_of_each_scale(plane, quick_schedule):
    fiber = estimate_fiber(plane, Ray([1, 0, 0]), quick_schedule)
    assert fiber.containment_margin(quick_schedule) == pytest.approx(5e-3, abs=1e-8)
    # tilted 0.01 off the ray: fine at a coarse scale, too much at the finest
    off_ray = GrassPoint.span([np.cos(0.01), 0.0, np.sin(0.01)], [0, 1, 0])
    coarse = dataclasses.replace(fiber, per_scale_planes={fiber.window[0]: [off_ray]})
    finest = dataclasses.replace(fiber, per_scale_planes={fiber.finest_scale: [off_ray]})
    assert coarse.containment_margin(quick_schedule) == pytest.approx(0.01, abs=1e-9)
    assert finest.containment_margin(quick_schedule) == pytest.approx(-5e-3, abs=1e-9)


def test_plane_fiber_is_a_single_plane(plane, quick_schedule):
    fiber = estimate_fiber(plane, Ray([1, 0, 0]), quick_schedule)
    assert fiber.stabilized
    assert len(fiber.clusters) == 1
    assert fiber.diameter < 1e-6
    assert angle_subspaces(fiber.representatives[0], coordinate_plane(3, 2)) < 1e-8
    assert fiber.window == quick_schedule.window()
    assert len(fiber_connectivity(fiber)) == 1


def test_fiber_off_the_cone(plane, quick_schedule):
    with pytest.raises(RayNotInCone):
        estimate_fiber(plane, Ray([0, 0, 1]), quick_schedule)


def test_fiber_needs_intermediate_dimension(quick_schedule):
    scene = load_catalog_scene("plane")
    full = type(scene)(name="full", n=3, d=3, pieces=scene.pieces)
    with pytest.raises(SceneError):
        estimate_fiber(full, Ray([1, 0, 0]), quick_schedule)


def test_fiber_json_reloads_with_the_same_components(plane, quick_schedule):
    fiber = estimate_fiber(plane, Ray([1, 1, 0]), quick_schedule)
    out = FiberEstimateOut.from_estimate(fiber)
    again = FiberEstimateOut.model_validate_json(out.model_dump_json()).to_estimate()
    assert len(fiber_connectivity(again)) == len(fiber_connectivity(fiber))
    assert len(again.clusters) == len(fiber.clusters)
    assert again.window == fiber.window


def test_classify_ordinary_ray_on_plane(plane, quick_schedule):
    result = classify_ray(plane, Ray([1, 0, 0]), quick_schedule)
    assert result.verdict is Verdict.ORDINARY
    assert result.evidence["cluster_count"] == 1
    assert result.evidence["in_cprime"] is False
    assert result.evidence["criterion_a"] is False
    assert result.evidence["distance_to_TvC"] < result.thresholds["epsilon_g"]
    out = RayClassificationOut.from_classification(plane.name, result)
    assert out.verdict == "ordinary"
    assert len(out.representatives) == 1


def test_classify_off_cone(plane, quick_schedule):
    result = classify_ray(plane, Ray([0, 0, 1]), quick_schedule)
    assert result.verdict is Verdict.NOT_IN_CONE
    assert result.fiber is None


def test_classify_many_keeps_order(plane, quick_schedule):
    rays = [Ray([1, 0, 0]), Ray([0, 0, 1]), Ray([0, 1, 0])]
    cone = estimate_cone(plane, quick_schedule)
    verdicts = [r.verdict for r in classify_many(plane, rays, quick_schedule, cone=cone)]
    assert verdicts == [Verdict.ORDINARY, Verdict.NOT_IN_CONE, Verdict.ORDINARY]


def test_closure_on_plane_passes(plane, quick_schedule):
    report = fiber_closure_check(plane, Ray([1, 0, 0]), m=2, schedule=quick_schedule)
    assert report.passed
    assert not report.vacuous and not report.inconclusive
    assert all(nb.max_distance < 1e-6 for nb in report.neighbors)
    # neighbours approach the ray and each carries its cone tangent
    tilts = [nb.tilt for nb in report.neighbors]
    assert tilts == sorted(tilts, reverse=True)
    assert all(nb.tangent is not None for nb in report.neighbors)
    assert len(report.tangent_trace) == len(report.neighbors) - 1
    assert max(report.tangent_trace, default=0.0) < 0.05
    assert report.tangent_contained


def test_closure_without_link_density_is_inconclusive(plane, quick_schedule):
    cone = estimate_cone(plane, quick_schedule)
    t = np.linspace(0.0, 2 * np.pi, 12, endpoint=False)
    ring = np.column_stack([np.cos(t), np.sin(t), np.zeros_like(t)])
    sparse = dataclasses.replace(cone, link_samples=[ring], link_pieces=[np.zeros(len(ring), dtype=int)],
                                 scales=[quick_schedule.K], radii=[quick_schedule.radius(quick_schedule.K)])
    report = fiber_closure_check(plane, Ray([1, 0, 0]), m=2, schedule=quick_schedule, cone=sparse)
    assert report.inconclusive
    assert report.starved
    assert report.tangent_contained is None


def test_classification_is_deterministic_for_a_fixed_seed(plane, quick_schedule):
    ray = Ray([1, 1, 0])
    a = classify_ray(plane, ray, quick_schedule)
    b = classify_ray(plane, ray, quick_schedule)
    assert a.verdict is b.verdict
    out_a = RayClassificationOut.from_classification(plane.name, a)
    assert out_a.model_dump_json() == RayClassificationOut.from_classification(plane.name, b).model_dump_json()
    for k in a.fiber.window:
        A, B = a.fiber.per_scale_planes[k], b.fiber.per_scale_planes[k]
        assert len(A) == len(B)
        assert all(np.array_equal(P.basis, Q.basis) for P, Q in zip(A, B))


@pytest.mark.slow
@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_umbrella_exceptional_fiber_is_the_pencil(whitney, schedule, sign):
    ray = Ray([0, sign, 0])
    fiber = estimate_fiber(whitney, ray, schedule)
    assert fiber.stabilized
    assert len(fiber.clusters) == 1
    cluster = fiber.clusters[0]
    assert cluster.dim_estimate == 1
    finest = cluster.finest_members(fiber.finest_scale)
    assert max(angle_vector_subspace(ray.direction, P) for P in finest) < ray_containment_tol(schedule)
    assert fiber.containment_margin(schedule) > 0
    assert grass_hausdorff(fiber.finest_planes, pencil(3, axis=1)) < 0.05
    assert len(fiber_connectivity(fiber)) == 1
    assert classify_ray(whitney, ray, schedule).verdict is Verdict.EXCEPTIONAL_B


@pytest.mark.slow
def test_umbrella_interior_ray_is_ordinary(whitney, schedule):
    result = classify_ray(whitney, Ray([0, np.sin(0.5), np.cos(0.5)]), schedule)
    assert result.verdict is Verdict.ORDINARY
    assert angle_subspaces(result.fiber.representatives[0], coordinate_plane(3, 0)) < 0.02


@pytest.mark.slow
def test_umbrella_axis_is_excluded_as_cprime(whitney, schedule):
    assert classify_ray(whitney, Ray([0, 0, 1]), schedule).verdict is Verdict.IN_CPRIME


@pytest.mark.slow
def test_cusp_ray_is_exceptional(cusp, schedule):
    result = classify_ray(cusp, Ray([0, 0, 1]), schedule)
    assert result.verdict in EXCEPTIONAL_VERDICTS
    assert grass_hausdorff(result.fiber.finest_planes, pencil(3, axis=2)) < 0.05


@pytest.mark.slow
def test_e1_crease_has_a_single_plane(schedule):
    scene = load_catalog_scene("e1")
    result = classify_ray(scene, Ray([0, 0, 1]), schedule)
    assert result.evidence["cluster_count"] == 1
    assert angle_subspaces(result.fiber.representatives[0], coordinate_plane(3, 1)) < 0.02
    assert result.verdict not in EXCEPTIONAL_VERDICTS


@pytest.mark.slow
def test_codim2_fiber_is_disconnected(schedule):
    scene = load_catalog_scene("codim2")
    fiber = estimate_fiber(scene, Ray([0, 0, 0, 1]), schedule)
    assert len(fiber.clusters) == 2
    P, Q = fiber.representatives
    assert angle_subspaces(P, Q) == pytest.approx(np.pi / 2, abs=0.05)
    assert len(fiber_connectivity(fiber)) == 2


@pytest.mark.slow
def test_notsbx_two_planes_in_cprime(schedule):
    scene = load_catalog_scene("notsbx")
    result = classify_ray(scene, Ray([0, 0, 1]), schedule)
    assert result.verdict is Verdict.IN_CPRIME
    reps = result.fiber.representatives
    assert len(reps) == 2
    targets = [coordinate_plane(3, 0), coordinate_plane(3, 1)]
    assert grass_hausdorff(reps, targets) < 0.02
    assert len(fiber_connectivity(result.fiber)) == 2
