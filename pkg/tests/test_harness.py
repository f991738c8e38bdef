import json
import math

import numpy as np
import pytest

from flowsampler import diagnostics as D
from flowsampler import gaussian_flows as G
from flowsampler.errors import ConfigError, FormatError
from flowsampler.harness import cli
from flowsampler.harness.config import config_from_dict, load_config, sweep_configs
from flowsampler.harness.experiment import (
    COLUMNS,
    ExperimentError,
    Trajectory,
    output_path,
    run_experiment,
)
from flowsampler.harness.plot import emit_plot, render_svg


def base_config(tmp_path, **overrides):
    cfg = {
        "target": {"kind": "gaussian", "lambda": 1.0},
        "flow": {"family": "gaussian", "name": "fisher_rao", "dt": 0.01},
        "T": 10,
        "report_interval": 0.1,
        "seeds": {"dynamics": 1, "probe": 0},
        "output_dir": str(tmp_path),
    }
    cfg.update(overrides)
    return cfg


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


# --- configuration --------------------------------------------------------------------


def test_config_defaults_follow_benchmark_initialization(tmp_path):
    cfg = config_from_dict(base_config(tmp_path))
    m, C = cfg.initial_moments()
    np.testing.assert_array_equal(m, [10.0, 10.0])
    np.testing.assert_array_equal(C, np.diag([0.5, 2.0]))
    assert cfg.steps_per_report == 10 and cfg.n_reports == 100
    assert cfg.name() == "gaussian_lam1_gaussian_fisher_rao"


@pytest.mark.parametrize("patch", [
    {"target": {"kind": "banana", "lambda": 1.0}},
    {"target": {"kind": "rosenbrock"}},
    {"flow": {"family": "particle", "name": "hmc"}},
    {"flow": {"family": "gaussian", "name": "fisher_rao", "dt": 0.03}},
    {"report_interval": 0.3},
    {"seeds": {"dynamics": 1}},
    {"seeds": {"dynamics": 1.5, "probe": 0}},
    {"initial": {"mean": [0.0, 0.0], "cov": [[1.0, 2.0], [2.0, 1.0]]}},
    {"initial": {"mean": [0.0], "cov": [[1.0]]}},
    {"flow": {"family": "particle", "name": "ai_svgd", "particles": 2}},
    {"flow": {"family": "gaussian", "name": "stein_bilinear"}},
    {"colour": "red"},
])
def test_config_validation(tmp_path, patch):
    with pytest.raises(ConfigError):
        config_from_dict(base_config(tmp_path, **patch))


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    sweep = write_json(tmp_path / "sweep.json", base_config(tmp_path, sweep=[{}]))
    with pytest.raises(ConfigError):
        load_config(sweep)


def test_sweep_expansion(tmp_path):
    raw = base_config(tmp_path, sweep=[{"flow": {"name": "fisher_rao"}},
                                       {"flow": {"name": "wasserstein"}}])
    cfgs = sweep_configs(raw, [0.01, 0.1, 1.0])
    assert len(cfgs) == 6
    assert sorted({c.name() for c in cfgs}) == sorted(
        f"gaussian_lam{lam:g}_gaussian_{n}" for lam in (0.01, 0.1, 1.0)
        for n in ("fisher_rao", "wasserstein"))


# --- experiments -------------------------------------------------------------------------


def test_fisher_rao_gaussian_run_matches_closed_form_and_rate(tmp_path):
    traj = run_experiment(config_from_dict(base_config(tmp_path)))
    t, err = traj.times, traj.metric("mean_err")
    assert t[0] == 0.0 and t[-1] == pytest.approx(10.0) and len(t) == 101
    exact = G.analytic_fisher_rao_gaussian([10.0, 10.0], np.diag([0.5, 2.0]), np.zeros(2),
                                           np.eye(2), 10.0)
    assert err[-1] == pytest.approx(np.linalg.norm(exact.mean), rel=1e-6)
    assert D.fit_log_slope(t, err, t_min=2.0) == pytest.approx(-1.0, rel=0.1)


def test_fisher_rao_gaussian_run_final_mean_error_literal(tmp_path):
    # From m0 = (10, 10) the exact flow has |m_10| = 9.36e-4, so this bound is
    # out of reach for any faithful integrator.
    traj = run_experiment(config_from_dict(base_config(tmp_path)), write=False)
    assert traj.metric("mean_err")[-1] < 1e-4


def test_run_writes_csv_and_round_trips(tmp_path):
    cfg = config_from_dict(base_config(tmp_path, T=1))
    traj = run_experiment(cfg)
    path = output_path(cfg)
    assert path.read_text().splitlines()[0] == ",".join(COLUMNS)
    back = Trajectory.from_csv(path)
    assert back.rows == traj.rows
    assert (back.flow, back.target, back.lam) == ("fisher_rao", "gaussian", 1.0)


def test_ai_svgd_rosenbrock_bit_identical(tmp_path):
    raw = base_config(tmp_path, target={"kind": "rosenbrock", "lambda": 0.1},
                      flow={"family": "particle", "name": "ai_svgd", "particles": 1000,
                            "dt": 0.01},
                      T=15, seeds={"dynamics": 7, "probe": 0})
    a = run_experiment(config_from_dict(dict(raw, output_dir=str(tmp_path / "a"))))
    b = run_experiment(config_from_dict(dict(raw, output_dir=str(tmp_path / "b"))))
    assert a.rows == b.rows
    name = "rosenbrock_lam0.1_particle_ai_svgd.csv"
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_divergence_surfaces_config_and_partial_rows(tmp_path):
    raw = base_config(tmp_path, flow={"family": "particle", "name": "langevin", "dt": 10.0,
                                      "particles": 10},
                      T=4000, report_interval=10.0)
    cfg = config_from_dict(raw, "diverge.json")
    with pytest.raises(ExperimentError) as info:
        run_experiment(cfg)
    assert info.value.numerical
    assert "diverge.json" in str(info.value)
    lines = output_path(cfg).read_text().splitlines()
    assert len(lines) > 2
    assert all(math.isfinite(float(v)) for v in lines[-1].split(",")[:4])


def test_reference_rosenbrock_lambda_one():
    from flowsampler import targets as T

    ref = D.cached_reference(T.rosenbrock(1.0), probe_seed=0)
    assert ref.cov[1, 1] == pytest.approx(250.0, rel=1e-3)


# --- plots -------------------------------------------------------------------------------------


def make_traj(flow, lam, scale=1.0, n=20):
    t = np.linspace(0.0, 2.0, n)
    rows = [(float(ti), scale * math.exp(-ti), 0.5 * scale * math.exp(-2 * ti), 0.1 + ti)
            for ti in t]
    return Trajectory(flow, "gaussian", lam, rows)


def test_single_trajectory_plot(tmp_path):
    svg = render_svg([make_traj("langevin", 1.0)], metrics=("mean_err",))
    assert svg.count("<polyline") == 1
    assert ">t</text>" in svg and ">mean error</text>" in svg
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_plot_grid_and_determinism(tmp_path):
    paths = []
    for flow in ("langevin", "svgd", "ai_svgd"):
        for lam in (0.01, 0.1, 1.0):
            p = tmp_path / f"{flow}_{lam}.csv"
            make_traj(flow, lam, scale=1.0 / lam).to_csv(p)
            paths.append(p)
    out1 = emit_plot(paths, tmp_path / "a.svg")
    out2 = emit_plot(list(reversed(paths)), tmp_path / "b.svg")
    svg = out1.read_text()
    assert out1.read_bytes() == out2.read_bytes()
    # rows: three lambdas; columns: three metrics; one line per flow in each panel
    assert svg.count("<polyline") == 27
    assert svg.count('fill="none" stroke="#000"') == 9
    for lam in ("0.01", "0.1", "1"):
        assert f"lambda = {lam})" in svg
    linear = emit_plot(paths, tmp_path / "c.svg", style="linear").read_text()
    assert linear != svg


def test_empty_csv_is_format_error_and_writes_nothing(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    out = tmp_path / "plot.svg"
    with pytest.raises(FormatError):
        emit_plot([empty], out)
    assert not out.exists()
    header_only = tmp_path / "header.csv"
    header_only.write_text(",".join(COLUMNS) + "\n")
    with pytest.raises(FormatError):
        emit_plot([header_only], out)
    assert not out.exists()


@pytest.mark.parametrize("body", [
    "t,mean_err\n0,1\n",
    ",".join(COLUMNS) + "\n0,1,1,1,a,gaussian,1.0\n0,1,1,1,a,gaussian,1.0\n",
    ",".join(COLUMNS) + "\n0,1,nan,1,a,gaussian,1.0\n",
    ",".join(COLUMNS) + "\n0,1,1,1,a,gaussian,1.0\n1,1,1,1,b,gaussian,1.0\n",
])
def test_schema_violations(tmp_path, body):
    p = tmp_path / "x.csv"
    p.write_text(body)
    with pytest.raises(FormatError):
        Trajectory.from_csv(p)


# --- command line --------------------------------------------------------------------------------


def test_cli_run_and_plot(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", base_config(tmp_path, T=1))
    assert cli.main(["run", "--config", str(cfg)]) == 0
    csv_path = capsys.readouterr().out.strip()
    assert csv_path.endswith("gaussian_lam1_gaussian_fisher_rao.csv")
    out = tmp_path / "fig.svg"
    assert cli.main(["plot", "--input", str(tmp_path / "*.csv"), "--output", str(out),
                     "--log-y"]) == 0
    assert out.read_text().count("<polyline") == 3


def test_cli_sweep(tmp_path, capsys):
    raw = base_config(tmp_path, T=1, flow={"family": "gaussian", "name": "kalman_wasserstein",
                                           "dt": 0.05})
    cfg = write_json(tmp_path / "s.json", raw)
    assert cli.main(["sweep", "--config", str(cfg), "--lambda", "0.01,0.1,1"]) == 0
    printed = capsys.readouterr().out.split()
    assert len(printed) == 3
    assert sorted(p.name for p in tmp_path.glob("*.csv")) == sorted(
        f"gaussian_lam{lam}_gaussian_kalman_wasserstein.csv" for lam in ("0.01", "0.1", "1"))


def test_cli_reference(capsys):
    assert cli.main(["reference", "--target", "gaussian", "--lambda", "0.01"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["cov"] == [[1.0, 0.0], [0.0, 100.0]]
    assert len(data["cos_values"]) == 20


def test_cli_exit_codes(tmp_path, capsys):
    bad = write_json(tmp_path / "bad.json", base_config(tmp_path, report_interval=0.3))
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert cli.main(["run"]) == 2
    assert cli.main(["plot", "--input", str(tmp_path / "none*.csv"), "--output",
                     str(tmp_path / "x.svg")]) == 2
    assert cli.main(["sweep", "--config", str(bad), "--lambda", "-1"]) == 2
    diverge = write_json(tmp_path / "d.json", base_config(
        tmp_path, flow={"family": "particle", "name": "langevin", "dt": 10.0, "particles": 10},
        T=4000, report_interval=10.0))
    assert cli.main(["run", "--config", str(diverge)]) == 3
    assert "d.json" in capsys.readouterr().err
