import pytest
from pydantic import ValidationError

from app.analysis.subspace import GrassPoint
from app.core.errors import InputError, NashFiberError, NotStabilized, ParseError
from app.schemas.grass import GrassPointModel
from app.schemas.results import CheckResult, RayRequest, SceneRequest, VerifyReport, clean_mapping, finite
from app.schemas.schedule import ScaleSchedule


def test_schedule_defaults_come_from_settings():
    s = ScaleSchedule()
    assert (s.r0, s.lam, s.K, s.delta0, s.mu, s.samples_per_scale) == (0.5, 0.5, 12, 0.4, 0.8, 400)
    assert s.radius(1) == pytest.approx(0.25)
    assert s.aperture(12) == pytest.approx(0.4 * 0.8 ** 12)
    assert s.window() == [9, 10, 11, 12]
    assert s.scale_seed(5) == s.seed ^ 5


def test_aperture_is_capped_at_one():
    assert ScaleSchedule(delta0=1.0, mu=1.0).aperture(3) == 1.0


@pytest.mark.parametrize("field,value", [("lambda", 1.0), ("mu", 0.0), ("delta0", 1.5), ("K", 0), ("r0", -1)])
def test_schedule_rejects_bad_values(field, value):
    with pytest.raises(ValidationError):
        ScaleSchedule.model_validate({field: value})


def test_schedule_updated_accepts_lambda_alias():
    s = ScaleSchedule().updated(lam=0.25, K=6, seed=None)
    assert (s.lam, s.K) == (0.25, 6)
    assert ScaleSchedule().updated() == ScaleSchedule()


def test_grass_point_model_shape():
    P = GrassPoint.span([1, 0, 0], [0, 1, 0])
    assert GrassPointModel.from_point(P).to_point() == P
    with pytest.raises(ValidationError):
        GrassPointModel(n=3, k=2, basis=[1.0, 0.0])
    with pytest.raises(ValidationError):
        GrassPointModel(n=2, k=3, basis=[0.0] * 6)


def test_finite_and_clean_mapping():
    assert finite(float("inf")) is None
    assert finite(float("nan")) is None
    assert clean_mapping({"a": 1.5, "b": None, "c": True}) == {"a": 1.5, "b": None, "c": True}


def test_check_result_status_must_agree():
    with pytest.raises(ValidationError):
        CheckResult(check="x", scene="plane", passed=True, status="fail")
    report = VerifyReport(results=[CheckResult(check="x", scene="plane", passed=True, status="pass")])
    assert report.passed


def test_scene_request_needs_exactly_one_source():
    assert SceneRequest(catalog="whitney").catalog == "whitney"
    with pytest.raises(ValidationError):
        SceneRequest()
    inline = {"name": "p", "ambient_dim": 3, "declared_dim": 2, "pieces": [{"equations": ["z"]}]}
    with pytest.raises(ValidationError):
        SceneRequest(catalog="plane", scene=inline)
    request = RayRequest(scene=inline, ray=[1, 0, 0], schedule={"K": 6, "lambda": 0.5})
    assert request.schedule.K == 6


def test_error_hierarchy_exit_codes():
    assert NashFiberError("x").exit_code == 1
    assert InputError("x").exit_code == 2
    assert NotStabilized("x").exit_code == 3
    err = ParseError("bad token", position=4, text="x + $")
    assert err.exit_code == 2
    assert str(err) == "bad token (at position 4)"
    assert NotStabilized("moving", trace=[0.3]).to_dict() == {"error": "NotStabilized", "detail": "moving",
                                                              "trace": [0.3]}
