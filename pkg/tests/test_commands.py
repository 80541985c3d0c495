import json

import pytest
from pydantic import ValidationError

import main
from app.api import commands
from app.models.errors import LevelOutOfRange
from config.settings import Settings


@pytest.fixture
def config(tmp_path):
    return commands.configure(Settings(output_dir=str(tmp_path), random_flags=20))


def test_settings_reject_unbalanced_integrals():
    with pytest.raises(ValidationError):
        Settings(f1_y=[2.0, 1.0, 1.0])


def test_settings_reject_inverted_radii():
    with pytest.raises(ValidationError):
        Settings(r1=0.1, r2=0.2)


def test_settings_reject_unknown_height_modes():
    with pytest.raises(ValidationError):
        Settings(height_mode="elliptic")


def test_print_defaults_lists_every_alias():
    text = Settings().print_defaults()
    assert "PSEUDOTOR_SEED=20091001" in text
    assert "PSEUDOTOR_TORUS_LABELS=[[2.0,3.3],[1.5,2.4],[2.5,3.9],[2.2,3.1]]" in text
    assert len(text.splitlines()) == len(Settings.model_fields)


def test_config_file_overrides_defaults(tmp_path):
    path = tmp_path / "run.env"
    path.write_text("PSEUDOTOR_SEED=7\nPSEUDOTOR_LOOP_LEVELS=[0.1, 0.2]\n")
    loaded = Settings(_env_file=str(path))
    assert loaded.seed == 7
    assert loaded.loop_levels == [0.1, 0.2]


def test_moment_command_writes_the_hexagon(config, tmp_path):
    commands.cmd_moment(config, 50)
    data = json.loads((tmp_path / "polygon.json").read_text())
    assert data["schema_version"] == 1
    assert len(data["hull"]) == 6
    assert len(data["vertices"]) == 6
    assert len(data["segments"]) == 3


def test_moment_command_is_deterministic(config, tmp_path):
    first = commands.cmd_moment(config, 20)["json"].read_bytes()
    second = commands.cmd_moment(config, 20)["json"].read_bytes()
    assert first == second


def test_moment_command_needs_samples(config):
    with pytest.raises(ValueError):
        commands.cmd_moment(config, 0)


def test_fiber_command_writes_json_and_csv(config, tmp_path):
    paths = commands.cmd_fiber(config, -0.5, 2.0, 3.3, res=2, loop_stride=32)
    data = json.loads(paths["json"].read_text())
    assert data["type"] == "Smooth"
    assert data["residual"] < 1e-8
    assert data["holonomy"] < 1e-5
    assert len(data["samples"]) == 2 * 4
    rows = paths["csv"].read_text().splitlines()
    assert len(rows) == 1 + 8


def test_isotopy_command_derives_radii_from_the_trajectories(config, tmp_path):
    report = commands.cmd_isotopy(config, -0.5, 2.0, 3.3, res=1)
    assert report.passed
    assert report.r2 < report.r1 < report.min_clearance
    assert (tmp_path / "isotopy.json").exists()
    assert len((tmp_path / "isotopy_after.csv").read_text().splitlines()) == 1 + 8


def test_fiber_command_rejects_levels_out_of_range(config):
    with pytest.raises(LevelOutOfRange):
        commands.cmd_fiber(config, 1.5, 2.0, 3.3, res=2)


def test_section_command(config, tmp_path):
    result = commands.cmd_section(config, [1, 1, 1], [1, -1, 0])
    assert abs(result["section"]) > 0
    assert json.loads((tmp_path / "section.json").read_text())["chart"] == list(result["chart"])


def test_cli_prints_defaults(tmp_path):
    assert main.main(["config", "--print-defaults", "--out", str(tmp_path)]) == main.EXIT_PASS


def test_cli_maps_bad_levels_to_usage_errors(tmp_path):
    argv = ["fiber", "--level", "1.5", "--c1", "2", "--c2", "3.3", "--out", str(tmp_path)]
    assert main.main(argv) == main.EXIT_USAGE


def test_cli_rejects_unknown_commands():
    with pytest.raises(SystemExit) as excinfo:
        main.main(["plot"])
    assert excinfo.value.code == main.EXIT_USAGE


def test_cli_takes_the_log_level_from_the_config_file(tmp_path, monkeypatch):
    path = tmp_path / "run.env"
    path.write_text("PSEUDOTOR_LOG_LEVEL=WARNING\n")
    levels = []
    monkeypatch.setattr(main, "configure_logging", levels.append)
    argv = ["config", "--config", str(path), "--out", str(tmp_path)]
    try:
        assert main.main(argv) == main.EXIT_PASS
    finally:
        commands.configure(Settings())
    assert levels == ["WARNING"]
