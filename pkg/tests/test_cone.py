import dataclasses

import numpy as np
import pytest

from app.analysis.catalog import load_catalog_scene
from app.analysis.cone import cluster_link, cone_tangent_at, estimate_cone, ray_in_cprime, singular_link
from app.analysis.subspace import GrassPoint, Ray, angle_subspaces
from app.core.errors import NotOnCone
from app.schemas.results import ConeEstimateOut


@pytest.fixture
def plane_cone(plane, quick_schedule):
    return estimate_cone(plane, quick_schedule)


def test_plane_cone_is_the_plane(plane_cone):
    assert plane_cone.stabilized
    assert plane_cone.cone_dim == 2
    assert len(plane_cone.clusters) == 1
    assert np.allclose(plane_cone.cloud()[:, 2], 0.0, atol=1e-12)
    assert plane_cone.contains([1, 1, 0])
    assert not plane_cone.contains([0, 0, 1])


def test_initial_forms_of_the_plane(plane_cone):
    assert [[str(g) for g in forms] for forms in plane_cone.algebraic_overapprox] == [["z"]]
    assert plane_cone.initial_form_residual < 1e-9


def test_consistent_estimate_carries_no_warnings(plane_cone):
    assert plane_cone.warnings == []
    assert ConeEstimateOut.from_estimate(plane_cone).warnings == []


def test_inconsistent_estimates_are_flagged(plane_cone):
    off_forms = dataclasses.replace(plane_cone, initial_form_residual=0.1)
    assert off_forms.initial_forms_violated
    assert off_forms.warnings == ["initial_forms_violated"]
    too_big = dataclasses.replace(plane_cone, d=1, initial_form_residual=0.1)
    assert too_big.dimension_exceeded
    assert ConeEstimateOut.from_estimate(too_big).warnings == ["initial_forms_violated", "dimension_exceeded"]


def test_cone_tangent_on_plane(plane_cone):
    tangent = cone_tangent_at(plane_cone, [1, 0, 0])
    assert tangent.link_dim == 1
    assert tangent.cvc_is_d_plane
    assert not tangent.singular_flag
    assert angle_subspaces(tangent.full_tangent, GrassPoint.from_normals([0, 0, 1])) < 0.05
    with pytest.raises(NotOnCone):
        cone_tangent_at(plane_cone, [0, 0, 1])


def test_cluster_link_separates_far_directions():
    arc = np.array([[np.cos(t), np.sin(t), 0.0] for t in np.linspace(0, 0.5, 60)])
    point = np.array([[0.0, 0.0, 1.0]] * 3)
    clusters = cluster_link(np.vstack([arc, point]), 3)
    assert len(clusters) == 2
    assert clusters[0].dim == 1
    assert clusters[1].dim == 0
    assert np.allclose(clusters[1].centre, [0, 0, 1])
    assert cluster_link(np.zeros((0, 3)), 3) == []


def test_smooth_scene_has_no_cprime(plane, quick_schedule):
    assert len(singular_link(plane, quick_schedule)) == 0
    assert not ray_in_cprime(plane, Ray([1, 0, 0]), quick_schedule)


@pytest.mark.slow
def test_umbrella_cone_is_a_half_plane(whitney, schedule):
    cone = estimate_cone(whitney, schedule)
    assert cone.cone_dim == 2
    for inside in ([0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0.6, 0.8]):
        assert cone.contains(inside)
    for outside in ([1, 0, 0], [0, 0, -1], [0.7, 0, 0.7]):
        assert not cone.contains(outside)
    assert cone_tangent_at(cone, [0, 1, 0]).boundary
    interior = cone_tangent_at(cone, [0, 0.6, 0.8])
    assert interior.cvc_is_d_plane
    assert angle_subspaces(interior.full_tangent, GrassPoint.from_normals([1, 0, 0])) < 0.05


@pytest.mark.slow
def test_cusp_cone_is_a_single_ray(cusp, schedule):
    cone = estimate_cone(cusp, schedule)
    assert cone.cone_dim == 1
    assert len(cone.clusters) == 1
    assert np.linalg.norm(cone.clusters[0].centre - np.array([0, 0, 1])) < 0.02


@pytest.mark.slow
def test_umbrella_singular_axis_is_in_cprime(whitney, schedule):
    locus = singular_link(whitney, schedule)
    assert ray_in_cprime(whitney, Ray([0, 0, 1]), schedule, locus_link=locus)
    assert not ray_in_cprime(whitney, Ray([0, np.sin(0.6), np.cos(0.6)]), schedule, locus_link=locus)


@pytest.mark.slow
def test_notsbx_and_xy_union_share_cprime(schedule):
    for name in ("notsbx", "xy_union"):
        scene = load_catalog_scene(name)
        assert ray_in_cprime(scene, Ray([0, 0, 1]), schedule)


@pytest.mark.parametrize("name,v", [("plane", [1, 0, 0]), ("sphere", [1, 0, 0]), ("sphere", [0.6, -0.8, 0])])
def test_cone_tangent_does_not_depend_on_the_scale(name, v, quick_schedule):
    cone = estimate_cone(load_catalog_scene(name), quick_schedule)
    K = quick_schedule.K
    # r_{K-2} = 4 r_K
    fine = cone_tangent_at(cone, v, scale=K)
    coarse = cone_tangent_at(cone, v, scale=K - 2)
    assert not fine.singular_flag and not coarse.singular_flag
    assert angle_subspaces(fine.full_tangent, coarse.full_tangent) < 0.02
