"""Command-line interface: simulate / fit / cv / scores / export-curves.

All commands read and write plain files; the config file is a JSON document
with sections `domain`, `basis`, `fit`, and optionally `quadrature`, `cv`,
and `events` (column mappings). See the README for the schema.
"""

from __future__ import annotations

import functools
import json

import click
import numpy as np

from . import estimation, modelio, process
from .domain import build_quadrature
from .exceptions import EstimationError, ModelFileError, NumericError
from .scores import component_curves, posterior_scores_dataset, summarize_scores


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, KeyError, OSError, NumericError, EstimationError, ModelFileError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _fit_config_from(doc: dict) -> estimation.FitConfig:
    fit_doc = dict(doc.get("fit", {}))
    seed = fit_doc.get("seed", 0)
    fit_doc["seed"] = tuple(seed) if isinstance(seed, list) else seed
    return estimation.FitConfig(**fit_doc)


def _event_format_from(doc: dict, domain) -> modelio.EventFormat:
    ev = doc.get("events", {})
    coords = ev.get("coord_columns")
    return modelio.EventFormat(
        domain=domain,
        replicate_column=ev.get("replicate_column", "replicate_id"),
        coord_columns=tuple(coords) if coords else None,
        group_by_day=bool(ev.get("group_by_day", False)),
        fill_empty_days=bool(ev.get("fill_empty_days", True)),
        date_format=ev.get("date_format"),
    )


def _build_model_pieces(doc: dict):
    domain = modelio.domain_from_dict(doc["domain"])
    basis = modelio.basis_from_config(doc["basis"], domain)
    quad_doc = doc.get("quadrature")
    if quad_doc is None:
        quad = basis.default_quadrature()
    elif quad_doc.get("kind") == "per_span":
        quad = basis.default_quadrature(int(quad_doc["value"]))
    elif quad_doc.get("kind") == "grid":
        quad = build_quadrature(domain, int(quad_doc["value"]))
    else:
        raise ValueError(f"unknown quadrature config {quad_doc!r}")
    return domain, basis, quad


def _grid_from(doc: dict) -> list[tuple[float, float, int]]:
    cv = doc.get("cv")
    if cv is None:
        raise ValueError("config has no 'cv' section and no --grid file was given")
    if "points" in cv:
        return [(float(a), float(b), int(c)) for a, b, c in cv["points"]]
    return [
        (float(nu1), float(nu2), int(p))
        for p in cv["p"]
        for nu1 in cv["nu1"]
        for nu2 in cv["nu2"]
    ]


@click.group()
def main():
    """Multiplicative component models for replicated point processes."""


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--n", "n", required=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True, type=click.Path())
@_cli_errors
def simulate(model_path, n, seed, out):
    """Simulate N replicates from a saved model and write an event CSV."""
    loaded = modelio.load_model(model_path)
    theta = loaded.params
    dataset, _ = process.simulate_replicates(theta, theta.basis, theta.basis.domain, n, seed)
    modelio.write_events_csv(dataset, out)
    click.echo(f"wrote {sum(p.m for p in dataset.patterns)} events in {n} replicates to {out}")


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def fit(events_path, config_path, out_path):
    """Fit the model to an event file; writes the model file and a fit report."""
    doc = _load_config(config_path)
    domain, basis, quad = _build_model_pieces(doc)
    loaded = modelio.load_events(events_path, _event_format_from(doc, domain))
    if loaded.dropped_out_of_domain:
        click.echo(f"dropped {loaded.dropped_out_of_domain} out-of-domain events")
    config = _fit_config_from(doc)
    result = estimation.fit(loaded.dataset, basis, config, quad=quad)
    metadata = modelio.FitMetadata(
        nu1=config.nu1, nu2=config.nu2, p=config.p, S=config.S, seed=config.seed,
        objective=result.objective, converged=result.converged,
    )
    modelio.save_model(result.params, metadata, out_path)
    report = {
        "objective": result.objective,
        "converged": result.converged,
        "n_replicates": loaded.dataset.n,
        "events_dropped": loaded.dropped_out_of_domain,
        "per_replicate_loglik": result.per_replicate_loglik.tolist(),
        "trace": result.trace,
    }
    report_path = out_path + ".report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    click.echo(f"fit {'converged' if result.converged else 'did NOT converge'}; "
               f"objective {result.objective:.6f}; model -> {out_path}, report -> {report_path}")


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--grid", "grid_path", type=click.Path(exists=True), help="JSON grid file; defaults to the config's cv section")
@click.option("--folds", type=int, default=None, help="number of folds (n = leave-one-out); defaults to config cv.folds or 5")
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def cv(events_path, config_path, grid_path, folds, out_path):
    """Cross-validate over a (nu1, nu2, p) grid and write the CV table CSV."""
    doc = _load_config(config_path)
    domain, basis, quad = _build_model_pieces(doc)
    loaded = modelio.load_events(events_path, _event_format_from(doc, domain))
    grid = _grid_from(_load_config(grid_path)) if grid_path else _grid_from(doc)
    if folds is None:
        folds = int(doc.get("cv", {}).get("folds", 5))
    config = _fit_config_from(doc)
    table = estimation.cross_validate(loaded.dataset, basis, grid, folds, config, quad=quad)
    modelio.write_cv_csv(table, out_path)
    best = table.best
    click.echo(f"best grid point: nu1={best.nu1:g} nu2={best.nu2:g} p={best.p} (CV={best.cv_value:.6f}); table -> {out_path}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True), help="optional config with an events column-mapping section")
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def scores(model_path, events_path, config_path, out_path):
    """Posterior scores for each replicate in an event file."""
    loaded_model = modelio.load_model(model_path)
    theta = loaded_model.params
    doc = _load_config(config_path) if config_path else {}
    loaded = modelio.load_events(events_path, _event_format_from(doc, theta.basis.domain))
    draws = estimation.MCDraws.generate(
        theta.p, loaded_model.metadata.S or 10_000, estimation.child_seed(loaded_model.metadata.seed or 0, 3)
    )
    u, se, _ = posterior_scores_dataset(loaded.dataset, theta, draws)
    summary = summarize_scores(loaded.dataset, u)
    modelio.write_scores_csv(summary, se, out_path)
    if summary.corr_u1_count is not None:
        click.echo(f"corr(u1, count) = {summary.corr_u1_count:.4f}")
    click.echo(f"score table -> {out_path}")


@main.command("export-curves")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--resolution", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def export_curves(model_path, resolution, out_path):
    """Evaluate baseline/component curves on a grid and write them as CSV."""
    loaded = modelio.load_model(model_path)
    curves = component_curves(loaded.params, grid_resolution=resolution)
    modelio.write_curves_csv(curves, out_path)
    click.echo(f"curves ({len(np.atleast_1d(curves.lambda0))} grid points) -> {out_path}")


if __name__ == "__main__":
    main()
