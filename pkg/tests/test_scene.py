import json

import numpy as np
import pytest
from pydantic import ValidationError

from app.analysis.catalog import load_catalog_scene
from app.analysis.scene import (
    BasicPiece,
    SemialgebraicScene,
    derive_singular_locus,
    load_scene,
    newton_project,
    on_singular_part,
    satisfies,
    satisfies_batch,
    scene_from_model,
    tangent_planes,
    tangent_space_at,
)
from app.analysis.subspace import GrassPoint, angle_subspaces, angle_vector_subspace
from app.core.errors import (
    InputError,
    NoConvergence,
    OffVariety,
    ParseError,
    SceneError,
    SignViolation,
    SingularLocusUnavailable,
    SingularPoint,
)
from app.schemas.scene import SceneFile


def on_any(pieces, x) -> bool:
    return any(satisfies(p, x, tol=1e-9) for p in pieces)


def test_catalog_scene_loads(whitney):
    assert (whitney.n, whitney.d) == (3, 2)
    assert whitney.origin_on_set
    assert len(whitney.pieces) == 1


def test_scene_model_round_trip(whitney):
    again = scene_from_model(SceneFile.model_validate_json(whitney.to_model().model_dump_json()))
    assert again.pieces[0].equations == whitney.pieces[0].equations
    assert again.d == whitney.d


def test_scene_file_validation():
    with pytest.raises(ValidationError):
        SceneFile(name="bad", ambient_dim=2, declared_dim=3, pieces=[{"equations": ["x"]}])
    with pytest.raises(ValidationError):
        SceneFile(name="bad", ambient_dim=2, declared_dim=1, pieces=[])


def test_unknown_variable_is_a_parse_error():
    model = SceneFile(name="bad", ambient_dim=2, declared_dim=1, pieces=[{"equations": ["x - z"]}])
    with pytest.raises(ParseError):
        scene_from_model(model)


def test_load_scene_errors(tmp_path):
    with pytest.raises(InputError):
        load_scene(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(SceneError):
        load_scene(broken)
    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps({"name": "x", "ambient_dim": 3}), encoding="utf-8")
    with pytest.raises(SceneError):
        load_scene(invalid)


def test_scene_needs_pieces_of_its_dimension():
    with pytest.raises(SceneError):
        SemialgebraicScene("mixed", 3, 2, (BasicPiece.from_strings(2, ["x"]),))
    with pytest.raises(SceneError):
        SemialgebraicScene("empty", 3, 2, ())


def test_origin_off_set_is_only_a_warning(caplog):
    scene = SemialgebraicScene("shifted", 3, 2, (BasicPiece.from_strings(3, ["z - 1"]),))
    assert not scene.origin_on_set
    assert "origin not on set" in caplog.text


def test_require_fiber_dims():
    curve = SemialgebraicScene("full", 2, 2, (BasicPiece(2),))
    with pytest.raises(SceneError):
        curve.require_fiber_dims()


def test_satisfies_signs():
    piece = BasicPiece.from_strings(3, ["x"], ge=["z"], ne=["y"])
    assert satisfies(piece, [0, 1, 0])
    assert not satisfies(piece, [0, 1, -0.5])
    assert not satisfies(piece, [0, 0, 1])
    assert not satisfies(piece, [0.1, 1, 1])
    mask, cause = satisfies_batch(piece, np.array([[0, 1, 0], [0, 1, -1], [1, 1, 1]], dtype=float))
    assert mask.tolist() == [True, False, False]
    assert cause.tolist() == ["", "sign_violation", "off_variety"]


def test_closure_relaxes_strict_and_drops_exclusions():
    piece = BasicPiece.from_strings(3, ["x"], gt=["z"], ne=["y"])
    closed = piece.closure()
    assert satisfies(closed, [0, 0, 0])
    assert not satisfies(piece, [0, 0, 0])


def test_tangent_space_on_umbrella(whitney):
    x = np.array([1.0, 1.0, 1.0])
    result = tangent_space_at(whitney, whitney.pieces[0], x)
    assert result.regular
    normal = np.array([2.0, -2.0, -1.0])
    assert angle_vector_subspace(normal, result.plane) == pytest.approx(np.pi / 2)
    assert result.plane == GrassPoint.from_normals(normal)


def test_tangent_space_errors(whitney):
    with pytest.raises(SingularPoint):
        tangent_space_at(whitney, whitney.pieces[0], [0, 0, 0.5])
    with pytest.raises(OffVariety):
        tangent_space_at(whitney, whitney.pieces[0], [1, 0, 0])


def test_boundary_points_are_not_regular():
    scene = load_catalog_scene("half_plane")
    result = tangent_space_at(scene, scene.pieces[0], [0, 1, 0])
    assert not result.regular
    _, regular, _ = tangent_planes(scene, scene.pieces[0], np.array([[0, 1, 0], [0, 1, 1.0]]))
    assert regular.tolist() == [False, True]


def test_batch_tangent_planes_match_pointwise(whitney, rng):
    piece = whitney.pieces[0]
    Y = rng.uniform(0.2, 1.0, size=(10, 2))
    X = np.column_stack([Y[:, 0] * np.sqrt(Y[:, 1]), Y[:, 0], Y[:, 1]])
    B, regular, _ = tangent_planes(whitney, piece, X)
    assert regular.all()
    for x, b in zip(X, B):
        assert angle_subspaces(GrassPoint(b), tangent_space_at(whitney, piece, x).plane) < 1e-8


def test_newton_projection_lands_on_sphere():
    scene = load_catalog_scene("sphere")
    x = newton_project(scene.pieces[0], [0.3, 0.2, 0.4])
    assert satisfies(scene.pieces[0], x)
    on_radius = newton_project(scene.pieces[0], [0.3, 0.2, 0.1], radius=0.5)
    assert np.linalg.norm(on_radius) == pytest.approx(0.5)


def test_newton_projection_errors():
    piece = BasicPiece.from_strings(3, ["x^2 + y^2 + z^2 + 1"])
    with pytest.raises(NoConvergence):
        newton_project(piece, [0.1, 0.2, 0.3], max_iter=20)
    half = BasicPiece.from_strings(3, ["x"], ge=["z"])
    with pytest.raises(SignViolation):
        newton_project(half, [0.2, 0, -1])


@pytest.mark.parametrize("name,singular,regular", [
    ("whitney", [0, 0, 0.5], [0, 1, 0]),
    ("notsbx", [0, 0, -0.3], [0, 1, 0.2]),
    ("xy_union", [0, 0, 0.7], [1, 0, 0.2]),
    ("half_plane", [0, 0.4, 0], [0, 0.4, 0.4]),
])
def test_derived_singular_locus(name, singular, regular):
    pieces = derive_singular_locus(load_catalog_scene(name))
    assert on_any(pieces, singular)
    assert not on_any(pieces, regular)


def test_smooth_scene_has_empty_singular_locus(plane):
    assert derive_singular_locus(plane) == []


def test_singular_locus_needs_complete_intersections():
    scene = SemialgebraicScene("line", 3, 2, (BasicPiece.from_strings(3, ["x", "y"]),))
    with pytest.raises(SingularLocusUnavailable):
        derive_singular_locus(scene)
    override = SemialgebraicScene("line", 3, 2, (BasicPiece.from_strings(3, ["x", "y"]),),
                                  singular_locus=(BasicPiece.from_strings(3, ["x", "y", "z"]),))
    assert len(derive_singular_locus(override)) == 1


def test_removed_axis_leaves_no_singular_points_on_the_set():
    axis = np.array([[0.0, 0.0, t] for t in (-0.5, -0.01, 0.02, 0.4)])
    notsbx = load_catalog_scene("notsbx")
    assert all(on_any(derive_singular_locus(notsbx), x) for x in axis)
    assert not on_singular_part(notsbx, axis).any()
    assert on_singular_part(load_catalog_scene("xy_union"), axis).all()
    assert not on_singular_part(notsbx, [[0.0, 0.3, 0.1], [0.2, 0.0, -0.4]]).any()
