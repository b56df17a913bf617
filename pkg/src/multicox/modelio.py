"""Event-file ingestion, model persistence, and CSV export.

Events arrive as CSV (header: replicate_id,t or replicate_id,x,y, or custom
column mappings including date-to-day grouping for city data-portal exports)
or as a JSON array of replicates. Models persist as versioned JSON; floats
are serialized with shortest round-trip representation, so save/load is
bit-exact.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from datetime import datetime
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .basis import BasisSystem, BSplineBasis, GaussianKernelBasis, gram_matrix, make_bspline_basis, make_kernel_basis, penalty_matrix
from .domain import ObservationDomain, build_quadrature
from .exceptions import ModelFileError
from .likelihood import ModelParams
from .process import Dataset, PointPattern
from .scores import ComponentCurves, ScoreSummary

MODEL_FORMAT_VERSION = 1

_DATE_FORMATS = ("%Y-%m-%d", "%m/%d/%Y %I:%M:%S %p", "%m/%d/%Y")


@dataclass(frozen=True)
class EventFormat:
    """Column mapping for event files.

    group_by_day parses the replicate column as a date/datetime and groups
    events by calendar day; fill_empty_days then inserts empty replicates for
    days without events between the first and last observed day.
    """

    domain: ObservationDomain
    replicate_column: str = "replicate_id"
    coord_columns: Optional[tuple[str, ...]] = None
    group_by_day: bool = False
    fill_empty_days: bool = True
    date_format: Optional[str] = None

    def resolved_coords(self) -> tuple[str, ...]:
        if self.coord_columns is not None:
            return tuple(self.coord_columns)
        return ("t",) if self.domain.kind == "interval" else ("x", "y")


class LoadedEvents(NamedTuple):
    dataset: Dataset
    dropped_out_of_domain: int


def _parse_day(raw: str, fmt: Optional[str], line: int) -> str:
    candidates = (fmt,) if fmt else _DATE_FORMATS
    for cand in candidates:
        try:
            return datetime.strptime(raw.strip(), cand).date().isoformat()
        except ValueError:
            continue
    try:
        return datetime.fromisoformat(raw.strip()).date().isoformat()
    except ValueError:
        raise ValueError(f"line {line}: cannot parse date {raw!r}") from None


def _rows_from_csv(path: str, fmt: EventFormat):
    coords = fmt.resolved_coords()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError("event file is empty")
        missing = [c for c in (fmt.replicate_column, *coords) if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"event file is missing columns {missing}; found {reader.fieldnames}")
        for row in reader:
            line = reader.line_num
            rep = row[fmt.replicate_column]
            if rep is None or rep == "":
                raise ValueError(f"line {line}: empty replicate id")
            if fmt.group_by_day:
                rep = _parse_day(rep, fmt.date_format, line)
            try:
                point = [float(row[c]) for c in coords]
            except (TypeError, ValueError):
                raise ValueError(f"line {line}: malformed coordinates {[row.get(c) for c in coords]!r}") from None
            yield rep, point


def _rows_from_json(path: str, fmt: EventFormat):
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise ValueError("JSON event file must be an array of replicates")
    for entry in payload:
        rep = str(entry["replicate_id"])
        for point in entry.get("points", []):
            yield rep, list(np.atleast_1d(np.asarray(point, dtype=float)))


def load_events(path: str, fmt: EventFormat) -> LoadedEvents:
    """Read events, group into replicates, and drop out-of-domain points
    (returning their count). Replicates keep file order; day-grouped data is
    ordered chronologically."""
    rows = _rows_from_json(path, fmt) if str(path).endswith(".json") else _rows_from_csv(path, fmt)
    domain = fmt.domain
    ndim = domain.dim
    groups: dict[str, list] = {}
    dropped = 0
    for rep, point in rows:
        if len(point) != ndim:
            raise ValueError(f"replicate {rep!r}: expected {ndim} coordinates, got {len(point)}")
        value = point[0] if ndim == 1 else np.asarray(point)
        inside = domain.contains_points(np.asarray(value) if ndim == 1 else value[None, :])
        groups.setdefault(rep, [])
        if bool(inside.all()):
            groups[rep].append(value)
        else:
            dropped += 1
    if not groups:
        raise ValueError("event file contains zero replicates")

    ids = list(groups)
    if fmt.group_by_day:
        ids = sorted(ids)
        if fmt.fill_empty_days:
            first = datetime.fromisoformat(ids[0]).toordinal()
            last = datetime.fromisoformat(ids[-1]).toordinal()
            ids = [datetime.fromordinal(o).date().isoformat() for o in range(first, last + 1)]
    patterns = []
    for rep in ids:
        pts = groups.get(rep, [])
        if ndim == 1:
            arr = np.array(pts, dtype=float)
        else:
            arr = np.array(pts, dtype=float).reshape(len(pts), 2)
        patterns.append(PointPattern(replicate_id=rep, points=arr))
    return LoadedEvents(dataset=Dataset(domain=domain, patterns=patterns), dropped_out_of_domain=dropped)


# --- model persistence ---


@dataclass(frozen=True)
class FitMetadata:
    nu1: float
    nu2: float
    p: int
    S: int
    seed: object
    objective: float
    converged: bool


def _domain_to_dict(domain: ObservationDomain) -> dict:
    if domain.kind == "interval":
        return {"kind": "interval", "a": domain.a, "b": domain.b}
    out = {"kind": "planar", "rect": list(domain.rect)}
    if domain.polygon is not None:
        out["polygon"] = domain.polygon.tolist()
    return out


def domain_from_dict(spec: dict) -> ObservationDomain:
    if spec["kind"] == "interval":
        return ObservationDomain.interval(spec["a"], spec["b"])
    if spec["kind"] == "planar":
        poly = spec.get("polygon")
        return ObservationDomain.planar(spec["rect"], polygon=np.asarray(poly, dtype=float) if poly else None)
    raise ValueError(f"unknown domain kind {spec['kind']!r}")


def _basis_to_dict(basis: BasisSystem) -> dict:
    if isinstance(basis, BSplineBasis):
        return {"kind": "bspline", "degree": basis.degree, "knots": basis.knots.tolist()}
    if isinstance(basis, GaussianKernelBasis):
        return {"kind": "gaussian_kernel", "centers": basis.centers.tolist(), "bandwidths": basis.bandwidths.tolist()}
    raise ValueError(f"cannot serialize basis kind {basis.kind!r}")


def _basis_from_dict(spec: dict, domain: ObservationDomain) -> BasisSystem:
    if spec["kind"] == "bspline":
        return BSplineBasis(domain, np.asarray(spec["knots"], dtype=float), int(spec["degree"]))
    if spec["kind"] == "gaussian_kernel":
        return GaussianKernelBasis(
            domain, np.asarray(spec["centers"], dtype=float), np.asarray(spec["bandwidths"], dtype=float)
        )
    raise ValueError(f"unknown basis kind {spec['kind']!r}")


def basis_from_config(spec: dict, domain: ObservationDomain) -> BasisSystem:
    """Construct a basis from config-file construction parameters."""
    if spec["kind"] == "bspline":
        if "knots" in spec:
            return BSplineBasis(domain, np.asarray(spec["knots"], dtype=float), int(spec["degree"]))
        return make_bspline_basis(domain, int(spec["num_interior_knots"]), int(spec.get("degree", 3)))
    if spec["kind"] == "gaussian_kernel":
        if "centers" in spec:
            return _basis_from_dict(spec, domain)
        return make_kernel_basis(domain, int(spec["grid_count"]))
    raise ValueError(f"unknown basis kind {spec['kind']!r}")


def _quad_descriptor_args(resolution: str):
    m = re.fullmatch(r"gauss(\d+)x\d+panels", resolution)
    if m:
        return "per_span", int(m.group(1))
    m = re.fullmatch(r"grid(\d+)", resolution)
    if m:
        return "grid", int(m.group(1))
    raise ValueError(f"unrecognized quadrature descriptor {resolution!r}")


def save_model(theta: ModelParams, metadata: FitMetadata, path: str) -> None:
    """Write a canonical model to versioned JSON (round-trip exact)."""
    if not theta.is_canonical():
        raise ValueError("save_model requires canonical parameters (run canonicalize)")
    kind, value = _quad_descriptor_args(theta.quad.resolution)
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "domain": _domain_to_dict(theta.basis.domain),
        "basis": _basis_to_dict(theta.basis),
        "quadrature": {"kind": kind, "value": value},
        "c0": theta.c0.tolist(),
        "C": theta.C.tolist(),
        "sigma": theta.sigma.tolist(),
        "fit": {
            "nu1": metadata.nu1,
            "nu2": metadata.nu2,
            "p": metadata.p,
            "S": metadata.S,
            "seed": list(metadata.seed) if isinstance(metadata.seed, (tuple, list)) else metadata.seed,
            "objective": metadata.objective,
            "converged": metadata.converged,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


class LoadedModel(NamedTuple):
    params: ModelParams
    metadata: FitMetadata


def load_model(path: str) -> LoadedModel:
    """Rebuild a saved model: re-binds domain/basis, recomputes J and Omega,
    and verifies the canonical-form invariants."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"not a model file: {exc}") from None
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION})")
    try:
        domain = domain_from_dict(doc["domain"])
        basis = _basis_from_dict(doc["basis"], domain)
        qkind, qvalue = doc["quadrature"]["kind"], int(doc["quadrature"]["value"])
        if qkind == "per_span":
            quad = basis.default_quadrature(qvalue)
        elif qkind == "grid":
            quad = build_quadrature(domain, qvalue)
        else:
            raise ValueError(f"unknown quadrature kind {qkind!r}")
        gram = gram_matrix(basis, quad)
        penalty = penalty_matrix(basis, quad)
        c0 = np.asarray(doc["c0"], dtype=float)
        C = np.asarray(doc["C"], dtype=float).reshape(len(c0), -1)
        sigma = np.asarray(doc["sigma"], dtype=float)
        params = ModelParams(c0=c0, C=C, sigma=sigma, basis=basis, gram=gram, penalty=penalty, quad=quad)
    except (KeyError, ValueError) as exc:
        raise ModelFileError(f"invalid model file: {exc}") from None
    if not params.is_canonical(tol=1e-8):
        raise ModelFileError("stored parameters violate the canonical-form invariants")
    fitdoc = doc.get("fit", {})
    seed = fitdoc.get("seed")
    metadata = FitMetadata(
        nu1=fitdoc.get("nu1", float("nan")),
        nu2=fitdoc.get("nu2", float("nan")),
        p=int(fitdoc.get("p", params.p)),
        S=int(fitdoc.get("S", 0)),
        seed=tuple(seed) if isinstance(seed, list) else seed,
        objective=fitdoc.get("objective", float("nan")),
        converged=bool(fitdoc.get("converged", False)),
    )
    return LoadedModel(params=params, metadata=metadata)


# --- CSV export ---


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_events_csv(dataset: Dataset, path: str) -> None:
    ndim = dataset.domain.dim
    header = ["replicate_id", "t"] if ndim == 1 else ["replicate_id", "x", "y"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for pat in dataset.patterns:
            for point in np.atleast_1d(pat.points):
                coords = [point] if ndim == 1 else list(point)
                writer.writerow([pat.replicate_id, *(_fmt(c) for c in coords)])


def write_cv_csv(table, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nu1", "nu2", "p", "cv_value", "valid", "is_best"])
        for i, e in enumerate(table.entries):
            writer.writerow([_fmt(e.nu1), _fmt(e.nu2), e.p, _fmt(e.cv_value), int(e.valid), int(i == table.best_index)])


def write_scores_csv(summary: ScoreSummary, score_se: Optional[np.ndarray], path: str) -> None:
    p = summary.scores.shape[1]
    header = ["replicate_id", "count"] + [f"u{k + 1}" for k in range(p)]
    if score_se is not None:
        header += [f"se{k + 1}" for k in range(p)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, rep in enumerate(summary.replicate_ids):
            row = [rep, int(summary.counts[i])] + [_fmt(v) for v in summary.scores[i]]
            if score_se is not None:
                row += [_fmt(v) for v in score_se[i]]
            writer.writerow(row)


def write_curves_csv(curves: ComponentCurves, path: str) -> None:
    p = curves.phi.shape[1]
    grid = np.atleast_1d(curves.grid)
    ndim = 1 if grid.ndim == 1 else 2
    header = (["t"] if ndim == 1 else ["x", "y"]) + ["lambda0"]
    for k in range(p):
        header += [f"phi{k + 1}", f"xi{k + 1}", f"lambda_plus{k + 1}", f"lambda_minus{k + 1}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(grid)):
            row = [_fmt(grid[i])] if ndim == 1 else [_fmt(grid[i, 0]), _fmt(grid[i, 1])]
            row.append(_fmt(curves.lambda0[i]))
            for k in range(p):
                row += [
                    _fmt(curves.phi[i, k]),
                    _fmt(curves.xi[i, k]),
                    _fmt(curves.lam_plus[i, k]),
                    _fmt(curves.lam_minus[i, k]),
                ]
            writer.writerow(row)
