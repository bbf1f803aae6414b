"""Tab-separated readers and writers for coordinates, matrices, graphs and results."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from .core import FeatureMatrix, SpatialLocations, TestResult
from .errors import DimensionError, ParseError, UnknownLocation, ValidationError
from .graph import Graph

RESULT_HEADER = ("feature", "Q", "Z", "pval", "padj", "method", "kernel")


def fmt(x: Optional[float]) -> str:
    """Real number with 17 significant digits; ``NA`` for missing values."""
    if x is None:
        return "NA"
    return f"{float(x):.17g}"


def _lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.strip() and not line.startswith("#"):
                yield no, line.split("\t")


def _float(tok: str, path, no: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"{path}:{no}: cannot parse {tok!r} as a number") from None


def parse_grid(spec: str) -> SpatialLocations:
    """Lattice locations from ``"rows,cols,boundary"``."""
    parts = spec.split(",")
    if len(parts) != 3:
        raise ParseError(f"grid spec {spec!r} must look like rows,cols,boundary")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"grid spec {spec!r} has non-integer dimensions") from None
    try:
        return SpatialLocations.from_grid(rows, cols, parts[2].strip())
    except ValidationError as exc:
        raise ParseError(f"grid spec {spec!r}: {exc}") from None


def read_coordinates(path) -> SpatialLocations:
    """Read ``id  x  y  [z]`` rows after a header line."""
    it = _lines(path)
    try:
        no, header = next(it)
    except StopIteration:
        raise ParseError(f"{path}: empty coordinate file") from None
    if len(header) not in (3, 4):
        raise DimensionError(f"{path}:{no}: header must be id, x, y and optionally z")
    width = len(header)
    ids, pts = [], []
    for no, tok in it:
        if len(tok) != width:
            raise ParseError(f"{path}:{no}: expected {width} fields, found {len(tok)}")
        ids.append(tok[0])
        pts.append([_float(t, path, no) for t in tok[1:]])
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate location ids")
    if len(pts) < 2:
        raise ParseError(f"{path}: at least two locations are required")
    return SpatialLocations(np.array(pts), ids=tuple(ids))


def read_matrix(path, fmt_name: str = "dense_tsv",
                location_ids: Optional[Sequence[str]] = None) -> FeatureMatrix:
    """Read a feature matrix.

    ``dense_tsv`` has a header of location ids (first cell ignored) and one
    feature per row. ``triplet`` lines are ``feature  location  value``;
    missing entries are zero and ``location_ids`` is required. With
    ``location_ids`` the columns follow that order.
    """
    if fmt_name == "dense_tsv":
        it = _lines(path)
        try:
            no, header = next(it)
        except StopIteration:
            raise ParseError(f"{path}: empty matrix file") from None
        cols = header[1:]
        fids, rows = [], []
        for no, tok in it:
            if len(tok) != len(header):
                raise ParseError(f"{path}:{no}: expected {len(header)} fields, found {len(tok)}")
            fids.append(tok[0])
            rows.append([_float(t, path, no) for t in tok[1:]])
        vals = np.array(rows, dtype=float).reshape(len(rows), len(cols))
        if location_ids is not None:
            index = {c: i for i, c in enumerate(cols)}
            missing = [c for c in location_ids if c not in index]
            unknown = [c for c in cols if c not in set(location_ids)]
            if unknown:
                raise UnknownLocation(f"{path}: unknown location id {unknown[0]!r}")
            if missing:
                raise DimensionError(f"{path}: no column for location {missing[0]!r}")
            vals = vals[:, [index[c] for c in location_ids]]
        return FeatureMatrix(vals, tuple(fids))
    if fmt_name == "triplet":
        if location_ids is None:
            raise ValidationError("triplet format needs the location ids")
        index = {c: i for i, c in enumerate(location_ids)}
        feats: dict[str, int] = {}
        entries = []
        for no, tok in _lines(path):
            if len(tok) != 3:
                raise ParseError(f"{path}:{no}: expected 3 fields, found {len(tok)}")
            if tok[1] not in index:
                raise UnknownLocation(f"{path}:{no}: unknown location id {tok[1]!r}")
            fi = feats.setdefault(tok[0], len(feats))
            entries.append((fi, index[tok[1]], _float(tok[2], path, no)))
        vals = np.zeros((len(feats), len(location_ids)))
        for fi, li, v in entries:
            vals[fi, li] = v
        return FeatureMatrix(vals, tuple(feats))
    raise ValidationError(f"unknown matrix format {fmt_name!r}")


def write_matrix(m: FeatureMatrix, path, location_ids: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("feature\t" + "\t".join(location_ids) + "\n")
        for fid, row in zip(m.feature_ids, m.values):
            fh.write(fid + "\t" + "\t".join(fmt(v) for v in row) + "\n")


def write_coordinates(locs: SpatialLocations, path) -> None:
    names = ["id", "x", "y", "z"][: locs.dim + 1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(names) + "\n")
        for i, p in zip(locs.ids, locs.points):
            fh.write(i + "\t" + "\t".join(fmt(v) for v in p) + "\n")


def read_graph(path, n: Optional[int] = None) -> Graph:
    """Edge list ``i  j  w`` with 0-based node indices."""
    edges = []
    top = -1
    for no, tok in _lines(path):
        if len(tok) not in (2, 3):
            raise ParseError(f"{path}:{no}: expected i, j and optionally w")
        try:
            a, b = int(tok[0]), int(tok[1])
        except ValueError:
            raise ParseError(f"{path}:{no}: node indices must be integers") from None
        w = _float(tok[2], path, no) if len(tok) == 3 else 1.0
        if a < 0 or b < 0 or a == b:
            raise ParseError(f"{path}:{no}: invalid edge ({a}, {b})")
        edges.append((a, b, w))
        top = max(top, a, b)
    n = top + 1 if n is None else n
    if top >= n:
        raise DimensionError(f"{path}: node index {top} exceeds n={n}")
    try:
        return Graph.from_edges(n, edges)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_results(results: Iterable[TestResult], path) -> None:
    """TSV of test results in the given order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(RESULT_HEADER) + "\n")
        for r in results:
            fh.write("\t".join([r.feature_id, fmt(r.q), fmt(r.z_score), fmt(r.p_value),
                                fmt(r.p_adjusted), r.method, r.kernel_name]) + "\n")


def write_pairs(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("feature_a\tfeature_b\tR\tZ\tpval\n")
        for r in results:
            fh.write("\t".join([r.feature_a, r.feature_b, fmt(r.r), fmt(r.z_score),
                                fmt(r.p_value)]) + "\n")
