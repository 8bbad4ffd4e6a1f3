import json
import math

import numpy as np
import pytest

from spatialrc.cli import (
    EXIT_CONFIG,
    EXIT_DESIGN,
    EXIT_OK,
    EXIT_SIMULATION,
    ConfigError,
    load_config,
    main,
    resolve_config,
)

FAST_SCENARIO = """
# two periods at constant speed, enough for a quick end-to-end run
sim.duration = 2.5
velocity.segments = 10.0 6.283185307179586 6.283185307179586
traditional.n_conv = 1000
"""


def _write(tmp_path, text, name="case.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_applies_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, "plant.J = 2.0\nsim.variant = none\n"))
    assert cfg.inertia == 2.0
    assert cfg.variant == "none"
    assert cfg.stiffness == 1.0e4
    assert cfg.n_conv == 1717
    assert cfg.loop.crossover_hz == 50.0
    assert cfg.nbar == 5


def test_reference_hyperparameters_accepted_verbatim(tmp_path):
    text = ("kernel.sigma_n = 1e-6\nkernel.length_scale = 0.1\n"
            "kernel.sigma_f = 1\nspatial.p_per = 6.283185307179586\n")
    cfg = load_config(_write(tmp_path, text))
    assert cfg.sigma_n == 1e-6
    assert cfg.length_scale == 0.1
    assert cfg.sigma_f == 1.0
    assert cfg.p_per == pytest.approx(2.0 * math.pi, abs=0.0)


def test_negative_inertia_rejected_with_field_name(tmp_path):
    with pytest.raises(ConfigError, match="inertia"):
        load_config(_write(tmp_path, "plant.J = -1.0\n"))


def test_unknown_keys_listed(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(_write(tmp_path, "foo.bar = 1\nplant.J = 1\nbaz.qux = 2\n"))
    assert "foo.bar" in str(err.value) and "baz.qux" in str(err.value)


def test_malformed_line_rejected(tmp_path):
    with pytest.raises(ConfigError, match="key = value"):
        load_config(_write(tmp_path, "this is not an assignment\n"))


def test_duplicate_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="duplicate"):
        load_config(_write(tmp_path, "plant.J = 1\nplant.J = 2\n"))


def test_resolved_config_covers_every_key(tmp_path):
    _, resolved = resolve_config(_write(tmp_path, "plant.J = 1.5\n"))
    assert resolved["plant.J"] == "1.5"
    assert "velocity.segments" in resolved
    assert "disturbance.amplitudes" in resolved


@pytest.fixture(scope="module")
def default_outputs(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_run")
    code = main(["simulate", "--out", str(out)])
    assert code == EXIT_OK
    return out


def test_simulate_default_row_and_column_counts(default_outputs):
    lines = (default_outputs / "timeseries.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest_checksum=")
    header = lines[1].split(",")
    assert header == ["t", "p", "d", "e_trad", "e_spatial", "f_trad", "f_spatial"]
    assert len(lines) == 2 + 14000
    metrics = (default_outputs / "metrics.csv").read_text().splitlines()
    body = [l for l in metrics if l and not l.startswith("#")][1:]
    assert len(body) == 20  # ten periods for each of the two variants
    assert sum(1 for l in body if l.startswith("traditional,")) == 10
    assert sum(1 for l in body if l.startswith("spatial,")) == 10


def test_simulate_manifest_contents(default_outputs):
    manifest = json.loads((default_outputs / "manifest.json").read_text())
    checksum = manifest["config_checksum"]
    for name in ("timeseries.csv", "metrics.csv"):
        first = (default_outputs / name).read_text().splitlines()[0]
        assert checksum in first
    assert manifest["design"]["preview_spatial"] == 2
    assert manifest["design"]["n_conv"] == 1717
    assert 48.0 <= manifest["design"]["crossover_hz"] <= 52.0
    assert "velocity.segments" in manifest["resolved_config"]


def test_simulate_variant_none_zero_feedforward(tmp_path):
    cfg_path = _write(tmp_path, FAST_SCENARIO)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out),
                 "--variant", "none"]) == EXIT_OK
    data = np.loadtxt(out / "timeseries.csv", delimiter=",", skiprows=2)
    f_trad, f_spatial = data[:, 5], data[:, 6]
    assert np.all(f_trad == 0.0) and np.all(f_spatial == 0.0)
    metrics = (out / "metrics.csv").read_text().splitlines()
    assert all(l.startswith("none,") for l in metrics[2:])


def test_simulate_byte_identical_reruns(tmp_path):
    cfg_path = _write(tmp_path, FAST_SCENARIO)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out1)]) == EXIT_OK
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out2)]) == EXIT_OK
    for name in ("timeseries.csv", "metrics.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_exit_code_config_error(tmp_path, capsys):
    bad = _write(tmp_path, "plant.J = -5\n")
    assert main(["simulate", "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "inertia" in capsys.readouterr().err


def test_exit_code_missing_config(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg"),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_exit_code_design_failure(tmp_path, capsys):
    bad = _write(tmp_path, "loop.crossover_hz = 400.0\n")
    assert main(["simulate", "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == EXIT_DESIGN
    assert "design failed" in capsys.readouterr().err


def test_exit_code_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg_path = _write(tmp_path, FAST_SCENARIO)
    code = main(["simulate", "--config", str(cfg_path),
                 "--out", str(blocker / "sub")])
    assert code == EXIT_SIMULATION


def test_kernel_profile_output(tmp_path):
    cfg_path = _write(tmp_path, "kernel.length_scale = 0.2\n")
    out = tmp_path / "kernel.csv"
    assert main(["kernel-profile", "--config", str(cfg_path),
                 "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[1] == "lag,kappa"
    data = np.loadtxt(out, delimiter=",", skiprows=2)
    assert data.shape == (1025, 2)
    lag, kappa = data[:, 0], data[:, 1]
    assert kappa[np.argmin(np.abs(lag))] == pytest.approx(1.0, abs=1e-12)


def test_design_report_prints_margins(capsys):
    assert main(["design-report"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "crossover" in out
    assert "phase margin" in out
    assert "preview" in out
