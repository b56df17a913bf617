import json

import numpy as np
import pytest
from click.testing import CliRunner

import multicox as mx
from conftest import make_params
from multicox.cli import main
from multicox.modelio import FitMetadata


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workspace(tmp_path):
    """A saved model plus matching config on [0, 1]."""
    dom = mx.ObservationDomain.interval(0.0, 1.0)
    basis = mx.make_bspline_basis(dom, 4, 3)
    quad = basis.default_quadrature()
    gram, penalty = mx.gram_matrix(basis, quad), mx.penalty_matrix(basis, quad)
    theta = mx.canonicalize(make_params(
        basis, quad, gram, penalty,
        np.full(basis.q, np.log(8.0)), np.ones((basis.q, 1)), [0.5],
    ))
    model_path = tmp_path / "truth.json"
    meta = FitMetadata(nu1=1e-5, nu2=1e-4, p=1, S=400, seed=3, objective=0.0, converged=True)
    mx.save_model(theta, meta, str(model_path))
    config = {
        "domain": {"kind": "interval", "a": 0.0, "b": 1.0},
        "basis": {"kind": "bspline", "num_interior_knots": 4, "degree": 3},
        "fit": {"p": 1, "nu1": 1e-5, "nu2": 1e-4, "S": 400, "S_eval": 400,
                "seed": 12, "max_outer_iters": 1},
        "cv": {"nu1": [1e-5], "nu2": [1e-4], "p": [1], "folds": 2},
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    return tmp_path, model_path, config_path


def test_simulate_is_deterministic(runner, workspace):
    tmp, model, _ = workspace
    for name in ("a.csv", "b.csv"):
        result = runner.invoke(main, ["simulate", "--model", str(model), "--n", "10",
                                      "--seed", "5", "--out", str(tmp / name)])
        assert result.exit_code == 0, result.output
    assert (tmp / "a.csv").read_bytes() == (tmp / "b.csv").read_bytes()
    header = (tmp / "a.csv").read_text().splitlines()[0]
    assert header == "replicate_id,t"


def test_fit_then_scores_pipeline(runner, workspace):
    tmp, model, config = workspace
    events = tmp / "events.csv"
    fitted = tmp / "fitted.json"
    assert runner.invoke(main, ["simulate", "--model", str(model), "--n", "40",
                                "--seed", "9", "--out", str(events)]).exit_code == 0
    result = runner.invoke(main, ["fit", "--events", str(events), "--config", str(config),
                                  "--out", str(fitted)])
    assert result.exit_code == 0, result.output
    assert fitted.exists() and (tmp / "fitted.json.report.json").exists()
    report = json.loads((tmp / "fitted.json.report.json").read_text())
    assert report["n_replicates"] == 40
    assert len(report["per_replicate_loglik"]) == 40

    scores_csv = tmp / "scores.csv"
    result = runner.invoke(main, ["scores", "--model", str(fitted), "--events", str(events),
                                  "--out", str(scores_csv)])
    assert result.exit_code == 0, result.output
    lines = scores_csv.read_text().splitlines()
    assert lines[0] == "replicate_id,count,u1,se1"
    assert len(lines) == 41


def test_export_curves(runner, workspace):
    tmp, model, _ = workspace
    out = tmp / "curves.csv"
    result = runner.invoke(main, ["export-curves", "--model", str(model),
                                  "--resolution", "25", "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = out.read_text().splitlines()
    assert lines[0] == "t,lambda0,phi1,xi1,lambda_plus1,lambda_minus1"
    assert len(lines) == 26
    # numeric fields round-trip losslessly
    first = lines[1].split(",")
    assert float(first[1]) == 8.0 or repr(float(first[1])) == first[1]


def test_cv_single_point_grid(runner, workspace):
    tmp, model, config = workspace
    events = tmp / "events.csv"
    runner.invoke(main, ["simulate", "--model", str(model), "--n", "8", "--seed", "2",
                         "--out", str(events)])
    out = tmp / "cv.csv"
    result = runner.invoke(main, ["cv", "--events", str(events), "--config", str(config),
                                  "--folds", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = out.read_text().splitlines()
    assert lines[0] == "nu1,nu2,p,cv_value,valid,is_best"
    assert len(lines) == 2
    assert lines[1].endswith(",1,1")  # valid and best


def test_cv_grid_file_override(runner, workspace):
    tmp, model, config = workspace
    events = tmp / "events.csv"
    runner.invoke(main, ["simulate", "--model", str(model), "--n", "6", "--seed", "4",
                         "--out", str(events)])
    grid_path = tmp / "grid.json"
    grid_path.write_text(json.dumps({"cv": {"points": [[1e-5, 1e-4, 0]]}}))
    out = tmp / "cv.csv"
    result = runner.invoke(main, ["cv", "--events", str(events), "--config", str(config),
                                  "--grid", str(grid_path), "--folds", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert ",0," in out.read_text().splitlines()[1]


def test_errors_exit_nonzero(runner, workspace, tmp_path):
    tmp, model, config = workspace
    bad_events = tmp_path / "bad.csv"
    bad_events.write_text("replicate_id,t\na,oops\n")
    result = runner.invoke(main, ["fit", "--events", str(bad_events), "--config", str(config),
                                  "--out", str(tmp_path / "m.json")])
    assert result.exit_code != 0
    assert "line 2" in result.output
