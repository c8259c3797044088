import json

from app.cli import SPHERE_MAP_SCHEMA, build_parser, config_from_args, main
from app.core.config import current_settings, override_settings, settings

QUICK = ["--K", "6", "--samples", "120"]


def test_flags_override_schedule_and_thresholds():
    args = build_parser().parse_args(["classify", "whitney", "--ray", "0,2,0", "--lambda", "0.25",
                                      "--seed", "7", "--epsilon-g", "0.1"])
    config = config_from_args(args)
    assert config.ray == [0.0, 1.0, 0.0]
    assert config.schedule.lam == 0.25
    assert config.schedule.seed == 7
    assert config.schedule.K == settings.K
    assert config.epsilon_g == 0.1
    assert config.link_epsilon == settings.LINK_EPSILON


def test_missing_scene_file_is_an_input_error():
    assert main(["cone", "missing.json"]) == 2


def test_unknown_catalog_name_is_an_input_error():
    assert main(["cone", "klein_bottle"]) == 2


def test_zero_ray_is_rejected():
    assert main(["classify", "plane", "--ray", "0,0,0"]) == 2


def test_bad_lambda_is_rejected():
    assert main(["cone", "plane", "--lambda", "1.5"]) == 2


def test_ray_length_must_match_scene():
    assert main(["classify", "plane", "--ray", "1,0", *QUICK]) == 2


def test_classify_off_cone_ray(capsys):
    assert main(["classify", "plane", "--ray", "0,0,1", *QUICK]) == 0
    assert "not_in_cone" in capsys.readouterr().out


def test_classify_json(capsys):
    assert main(["classify", "plane", "--ray", "0,0,1", "--json", *QUICK]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["verdict"] == "not_in_cone"
    assert data["thresholds"]["epsilon_g"] == settings.EPSILON_G


def test_cone_summary(capsys):
    assert main(["cone", "plane", *QUICK]) == 0
    out = capsys.readouterr().out
    assert "link: 1 cluster(s), dim C = 2" in out
    assert "initial forms, piece 0: z" in out


def test_fiber_round_trip(tmp_path, capsys):
    path = tmp_path / "fiber.json"
    assert main(["fiber", "plane", "--ray", "1,0,0", "--output", str(path), *QUICK]) == 0
    assert json.loads(path.read_text())["scene"] == "plane"
    capsys.readouterr()
    assert main(["fiber", "--load", str(path)]) == 0
    assert capsys.readouterr().out.strip() == "1 component(s)"


def test_fiber_load_rejects_garbage(tmp_path):
    path = tmp_path / "fiber.json"
    path.write_text("{}")
    assert main(["fiber", "--load", str(path)]) == 2


def test_sphere_map_csv(tmp_path):
    path = tmp_path / "map.csv"
    assert main(["sphere-map", "plane", "--grid", "20", "--jobs", "1", "--output", str(path), *QUICK]) == 0
    lines = path.read_text().splitlines()
    assert lines[0] == f"# {SPHERE_MAP_SCHEMA}"
    assert lines[1] == "v1,v2,v3,verdict,fiber_diameter,cluster_count"
    assert len(lines) == 22
    assert all(line.split(",")[3] in {"not_in_cone", "ordinary", "in_Cprime", "inconclusive"} for line in lines[2:])


def test_verify_without_matches():
    assert main(["verify", "--filter", "no-such-check"]) == 0


def test_dump_samples(tmp_path):
    path = tmp_path / "samples.jsonl"
    assert main(["dump-samples", "plane", "--output", str(path), *QUICK]) == 0
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert records
    assert {r["k"] for r in records} <= set(range(1, 7))
    assert all(abs(r["x"][2]) < 1e-6 for r in records)


def test_check_dimension_json(capsys):
    assert main(["check-dimension", "plane", "--json", *QUICK]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["declared"] == 2
    assert report["matches"] is True


def test_threshold_flags_apply_to_the_run_only(capsys):
    before = settings.model_dump()
    assert main(["classify", "plane", "--ray", "1,0,0", "--json", "--epsilon-g", "0.1", "--window", "3", *QUICK]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["thresholds"]["epsilon_g"] == 0.1
    assert settings.model_dump() == before


def test_override_settings_restores_on_exit():
    with override_settings(EPSILON_G=0.3) as active:
        assert current_settings() is active
        assert current_settings().EPSILON_G == 0.3
        with override_settings(FIBER_WINDOW=2):
            assert (current_settings().EPSILON_G, current_settings().FIBER_WINDOW) == (0.3, 2)
        assert current_settings().FIBER_WINDOW == settings.FIBER_WINDOW
    assert current_settings() is settings
