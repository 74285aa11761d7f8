import filecmp

import numpy as np
import pytest

from oslc_sl.bench import cli, problems, runner
from oslc_sl.bench.config import ExperimentConfig, parse_config_text
from oslc_sl.fields import ConfigError


def breakpoint_grid(t, n=4001):
    knots = problems.test1_exact_cdf(t).knots
    return np.unique(np.concatenate([np.linspace(-3, 4, n), knots]))


# -- closed forms ------------------------------------------------------------------


def test_exact_f_examples():
    assert problems.test1_exact_f(0.5, 0.1) == 2.0
    assert problems.test1_exact_f(0.5, -0.4) == 1.0
    # [-1 + t, 0) starts at -0.5, so -0.6 is outside the support
    assert problems.test1_exact_f(0.5, -0.6) == 0.0
    assert problems.test1_exact_f(1.5, 1.0) == 1.0
    assert problems.test1_exact_f(1.5, -0.5) == 0.0


def test_exact_u_examples():
    assert problems.test1_exact_u(0.0, 0.5) == 1.5
    x = np.linspace(0.5, 4, 200)
    np.testing.assert_array_equal(problems.test1_exact_u(2.0, x), problems.test1_terminal(x))
    for t in (0.0, 0.4, 1.3, 2.0):
        assert problems.test1_exact_u(t, 1 + t / 2 + 1e-9) == 2.0


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 1.7, 2.0])
def test_exact_mass_and_cdf_link(t):
    x = breakpoint_grid(t)
    mid = 0.5 * (x[1:] + x[:-1])
    cell_mass = problems.test1_exact_f(t, mid) * np.diff(x)
    assert abs(cell_mass.sum() - 2.0) <= 1e-12
    u = problems.test1_exact_u(t, x)
    # u is the running integral of f, branch by branch
    np.testing.assert_allclose(np.diff(u), cell_mass, atol=1e-12)
    np.testing.assert_allclose(u, problems.test1_exact_cdf(t).right(x), atol=1e-12)


def test_builtin_problems():
    p1 = problems.builtin_problem("test1")
    assert p1.drift(0.0, -0.3)[0, 0] == -1.0
    p2 = problems.builtin_problem("test2")
    np.testing.assert_array_equal(p2.drift(0.0, [[2.0, 0.5]]), [[0.0, 0.0]])
    assert p2.T == 1.5 and p2.h == 2 * p2.dx
    assert p2.initial.total_mass == pytest.approx(1.4 * 0.5)
    p3 = problems.builtin_problem("test3")
    np.testing.assert_allclose(p3.diffusion(0.0, [[0.0, 0.0]])[0], 0.1 * np.eye(2))
    assert p3.terminal(np.array([[0.8, 0.0]]))[0] == 0.0
    with pytest.raises(ConfigError):
        problems.builtin_problem("test9")


# -- configuration -------------------------------------------------------------------


def test_config_parse():
    cfg = ExperimentConfig.from_text("# comment\ntest = test2\ndx = 0.1  # trailing\nmargin = auto\nroi = -1, 1, -1, 1\n")
    assert cfg.test == "test2" and cfg.dx == 0.1 and cfg.margin is None and cfg.roi == (-1, 1, -1, 1)
    again = ExperimentConfig.from_text(cfg.resolved().to_text())
    assert again == cfg.resolved()


@pytest.mark.parametrize(
    "text, needle",
    [
        ("bogus = 1", "unknown key"),
        ("dx = 0.1\ndx = 0.2", "line 2"),
        ("dx =", "empty value"),
        ("dx 0.1", "key = value"),
        ("test = test7", "test"),
        ("dx = a", "numbers"),
        ("parallel = maybe", "parallel"),
    ],
)
def test_config_errors(text, needle):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert needle in str(info.value)


def test_config_file_missing(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "none.cfg")


def test_couplings_and_margin_floor():
    prob = problems.builtin_problem("test1")
    cfg = ExperimentConfig(test="test1")
    h, rule, _ = cfg.time_step(prob, 0.02, "transport")
    assert rule == "dx_over_h_to_zero" and h == pytest.approx(0.06)
    assert cfg.time_step(prob, 0.02 / 8, "transport")[0] == pytest.approx(0.06 / 4)
    h, rule, _ = cfg.time_step(prob, 0.01, "conservative")
    assert rule == "dx2_over_h_bounded" and h == pytest.approx(0.03)
    assert ExperimentConfig(h=0.1).time_step(prob, 0.02, "transport")[:2] == (0.1, "fixed")
    with pytest.raises(ConfigError):
        ExperimentConfig(h=0.1, coupling="dx2_over_h_bounded").time_step(prob, 0.02, "transport")
    assert cfg.margin_for(prob, 0.06) == 3.0
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(margin=1.0).margin_for(prob, 0.06)
    assert "floor" in str(info.value)


def test_margin_rejected_before_solving(tmp_path):
    cfg = ExperimentConfig(test="test1", margin=0.5, out=str(tmp_path / "o"))
    with pytest.raises(ConfigError):
        runner.run_experiment(cfg, "conservative")
    assert not (tmp_path / "o").exists()


def test_custom_problem(tmp_path):
    text = (
        "test = custom\ndrift = constant 0.2\ndiffusion = constant 0.1\nbox = -1, 1\n"
        "initial_box = -0.5, 0.5\nterminal_point = 0.0\nT = 0.5\ndx = 0.05\nh = 0.05\n"
        f"out = {tmp_path}\n"
    )
    rep = runner.run_experiment(ExperimentConfig.from_text(text), "conservative")
    assert rep.passed
    with pytest.raises(ConfigError):
        ExperimentConfig(test="custom").problem()


# -- runner and CLI ----------------------------------------------------------------------


def test_ladder_rows(tmp_path):
    cfg = ExperimentConfig(test="test1", ladder=(0.04, 0.03, 0.02), out=str(tmp_path))
    rep = runner.run_experiment(cfg, "ladder")
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert len(lines) == 4
    assert rep.passed and rep.exit_code == 0


def test_artifacts_and_config_echo(tmp_path):
    cfg = ExperimentConfig(test="test1", seed=11, out=str(tmp_path), duality_samples=3)
    rep = runner.run_experiment(cfg, "conservative")
    for name in ("config.txt", "summary.txt", "snapshots_f.csv", "masses.csv", "duality.csv", "clamped.csv", "lumped_areas.csv"):
        assert (tmp_path / name).exists(), name
    assert "seed = 11" in (tmp_path / "config.txt").read_text()
    assert "result: PASS" in (tmp_path / "summary.txt").read_text()
    assert [c.name for c in rep.checks] == ["mass drift", "minimum weight", "duality gap / |g|_inf"]


@pytest.mark.parametrize("command", ["conservative", "check"])
def test_reproducible_csv(tmp_path, command):
    outs = []
    for run in ("a", "b"):
        cfg = ExperimentConfig(test="test2", seed=4, out=str(tmp_path / run), duality_samples=2, oslc_pairs=500)
        runner.run_experiment(cfg, command)
        outs.append(tmp_path / run)
    csvs = sorted(p.name for p in outs[0].glob("*.csv"))
    match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], csvs, shallow=False)
    assert not mismatch and not errors


def _write_cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


def test_cli_exit_ok(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "test = test1\nduality_samples = 2\n")
    assert cli.main(["conservative", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    assert "result: PASS" in capsys.readouterr().out
    assert "seed = 3" in (tmp_path / "o" / "config.txt").read_text()


def test_cli_exit_invariant(tmp_path, monkeypatch):
    monkeypatch.setattr(runner, "MASS_TOL", -1.0)
    cfg = _write_cfg(tmp_path, "test = test1\nduality_samples = 0\n")
    assert cli.main(["conservative", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "FAIL" in (tmp_path / "o" / "summary.txt").read_text()


def test_cli_exit_solver(tmp_path):
    cfg = _write_cfg(tmp_path, "test = test1\nescape = raise\n")
    assert cli.main(["transport", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    text = (tmp_path / "o" / "error.txt").read_text()
    assert "EndpointEscaped" in text and "traceback" in text


def test_cli_exit_config(tmp_path):
    cfg = _write_cfg(tmp_path, "test = test1\nmargin = 0.1\n")
    assert cli.main(["transport", "--config", cfg, "--out", str(tmp_path / "o")]) == 4
    assert "error: config" in (tmp_path / "o" / "error.txt").read_text()
    assert cli.main(["transport", "--config", str(tmp_path / "missing.cfg")]) == 4


def test_triangle_import_config(tmp_path, data_dir):
    text = (
        f"test = test2\nmesh_node = {data_dir / 'test2_domain.node'}\nmesh_ele = {data_dir / 'test2_domain.ele'}\n"
        f"duality_samples = 2\nout = {tmp_path}\n"
    )
    rep = runner.run_experiment(ExperimentConfig.from_text(text), "conservative")
    assert rep.passed and rep.info["simplices"] == 2327
    small = f"test = test2\nmesh_node = {data_dir / 'unit_square.node'}\nmesh_ele = {data_dir / 'unit_square.ele'}\n"
    with pytest.raises(ConfigError):
        runner.run_experiment(ExperimentConfig.from_text(small + f"out = {tmp_path / 'x'}\n"), "conservative")
