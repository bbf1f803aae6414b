"""Command-line interface.

Subcommands: ``qtest``, ``rtest``, ``spectrum``, ``simulate`` and ``bench``.
Exit codes: 0 success, 1 invalid input or configuration, 2 computation error.
Set ``QUADTEST_LOG`` to ``error``, ``info`` or ``debug`` for progress messages
on standard error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import io
from .core import FeatureMatrix, SpatialLocations
from .errors import ComputeError, ConfigError, DimensionError, QuadTestError, ValidationError
from .graph import Graph, grid_adjacency, knn_graph
from .kernel import (
    DENSE_CAP,
    DenseKernel,
    KernelOperator,
    adjacency_kernel,
    car_grid_kernel,
    car_kernel,
    gaussian_kernel,
    identity_kernel,
    laplacian_kernel,
    matern_kernel,
)
from .qtest import QTestConfig, liu_cumulants, liu_sf, q_statistic, run_qtest_batch
from .rtest import all_pairs, rtest_block
from .sim import NBDist, PatternSpec, generate_pattern, nb_counts, null_features
from .spectra import classify_definiteness, grid_spectrum, kernel_spectrum

log = logging.getLogger("quadtest")

KERNEL_DEFAULTS = {
    "gaussian": {"bandwidth": 2.0},
    "matern": {"nu": 1.5, "bandwidth": 2.0},
    "moran": {"k": 4},
    "laplacian": {"k": 4, "normalized": 0},
    "car": {"rho": 0.9, "k": 4, "dense_max": DENSE_CAP},
    "identity": {},
}
_ALIASES = {"adjacency": "moran"}
_PVALUE = {"normal": "normal", "welch": "welch", "liu": "liu", "perm": "permutation",
           "auto": "auto"}


def parse_kernel_spec(spec: str) -> tuple[str, dict]:
    """Split ``name:key=value,...`` and fill in defaults."""
    name, _, rest = spec.partition(":")
    name = _ALIASES.get(name.strip(), name.strip())
    if name not in KERNEL_DEFAULTS:
        raise ConfigError(f"unknown kernel {name!r}; valid kernels: "
                          + ", ".join(sorted(KERNEL_DEFAULTS)))
    params = dict(KERNEL_DEFAULTS[name])
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq or key not in params:
            raise ConfigError(f"kernel {name!r} accepts {sorted(params)}; got {item!r}")
        try:
            params[key] = float(val)
        except ValueError:
            raise ConfigError(f"kernel parameter {key} must be numeric, got {val!r}") from None
    for key in ("k", "dense_max"):
        if key in params:
            if params[key] != int(params[key]) or params[key] < 1:
                raise ConfigError(f"kernel parameter {key} must be a positive integer")
            params[key] = int(params[key])
    return name, params


def _graph_for(params: dict, locs: Optional[SpatialLocations], graph: Optional[Graph]) -> Graph:
    if graph is not None:
        return graph
    if locs is None:
        raise ConfigError("graph kernels need --graph, --coords or --grid")
    g = locs.grid
    if g is not None and params["k"] == 4:
        return grid_adjacency(g.rows, g.cols, "four_neighbor", g.boundary)
    return knn_graph(locs, params["k"], "average")


def build_kernel(spec: str, locs: Optional[SpatialLocations] = None,
                 graph: Optional[Graph] = None) -> KernelOperator:
    """Kernel operator from a spec string such as ``car:rho=0.9,k=4``."""
    name, p = parse_kernel_spec(spec)
    if name in ("gaussian", "matern"):
        if locs is None:
            raise ConfigError(f"{name} needs --coords or --grid")
        backend = "grid_fft" if locs.grid is not None and locs.grid.boundary == "torus" else "dense"
        if name == "gaussian":
            return gaussian_kernel(locs, p["bandwidth"], backend)
        return matern_kernel(locs, p["nu"], p["bandwidth"], backend)
    if name == "identity":
        n = locs.n if locs is not None else (graph.n if graph is not None else None)
        if n is None:
            raise ConfigError("identity needs locations or a graph")
        return identity_kernel(n)
    g = _graph_for(p, locs, graph)
    if name == "moran":
        return adjacency_kernel(g)
    if name == "laplacian":
        return laplacian_kernel(g, bool(p["normalized"]))
    grid = locs.grid if locs is not None else None
    if (graph is None and grid is not None and grid.boundary == "torus" and p["k"] == 4
            and min(grid.rows, grid.cols) >= 3):
        return car_grid_kernel(grid.rows, grid.cols, p["rho"])
    k = car_kernel(g, p["rho"])
    if g.n <= p["dense_max"]:
        return DenseKernel(k.to_dense(), name="car", psd=True, check_symmetric=False)
    return k


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_inputs(p: argparse.ArgumentParser, matrix: bool = True) -> None:
    p.add_argument("--coords", help="TSV with header id, x, y [, z]")
    p.add_argument("--grid", help="lattice locations as rows,cols,boundary")
    p.add_argument("--graph", help="edge list i<TAB>j<TAB>w, 0-based")
    p.add_argument("--kernel", default="car", help="kernel spec, e.g. car:rho=0.9,k=4")
    if matrix:
        p.add_argument("--matrix", required=True, help="feature matrix file")
        p.add_argument("--format", default="dense_tsv", choices=["dense_tsv", "triplet"])
        p.add_argument("--model", default="gaussian", choices=["gaussian", "poisson", "negbin"])
        p.add_argument("--dispersion", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="output file")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quadtest", description="Quadratic-form spatial tests.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    q = sub.add_parser("qtest", help="test each feature for spatial structure")
    _add_inputs(q)
    q.add_argument("--pvalue", default="auto", choices=sorted(_PVALUE))
    q.add_argument("--nperm", type=int, default=999)
    q.add_argument("--bh", action="store_true", help="add Benjamini-Hochberg adjusted p-values")

    r = sub.add_parser("rtest", help="test all feature pairs for spatial co-variation")
    _add_inputs(r)
    r.add_argument("--block-size", type=int, default=256)

    s = sub.add_parser("spectrum", help="kernel eigenvalues and definiteness")
    _add_inputs(s, matrix=False)
    s.add_argument("--centered", action="store_true")

    m = sub.add_parser("simulate", help="write a synthetic count matrix and coordinates")
    m.add_argument("--grid", required=True)
    m.add_argument("--n-features", type=int, default=100)
    m.add_argument("--pattern", default="blob", choices=["null", "blob", "cosine", "checkerboard"])
    m.add_argument("--mean", type=float, default=0.5)
    m.add_argument("--dispersion", type=float, default=0.1)
    m.add_argument("--noise", default="ramp", help="noise level in [0, 1] or 'ramp'")
    m.add_argument("--gain", type=float, default=1.0)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="matrix output")
    m.add_argument("--coords-out", help="coordinates output")

    b = sub.add_parser("bench", help="time single-feature FFT Q-tests")
    b.add_argument("--sizes", default="128,256,512")
    b.add_argument("--kernel", default="gaussian")
    b.add_argument("--seed", type=int, default=0)
    return parser


def _locations(args) -> Optional[SpatialLocations]:
    if args.coords and args.grid:
        raise ConfigError("give either --coords or --grid, not both")
    if args.coords:
        return io.read_coordinates(args.coords)
    if args.grid:
        return io.parse_grid(args.grid)
    return None


def _load(args):
    locs = _locations(args)
    graph = io.read_graph(args.graph, locs.n if locs is not None else None) if args.graph else None
    ids = locs.ids if locs is not None else None
    m = io.read_matrix(args.matrix, args.format, ids)
    if locs is not None:
        m.check_locations(locs)
    elif graph is not None:
        if graph.n > m.n_locations:
            raise DimensionError("graph has more nodes than the matrix has columns")
        graph = Graph(m.n_locations, graph.i, graph.j, graph.w)
    return locs, graph, m


def _cmd_qtest(args) -> None:
    locs, graph, m = _load(args)
    k = build_kernel(args.kernel, locs, graph)
    cfg = QTestConfig(pvalue_method=_PVALUE[args.pvalue], n_perm=args.nperm, seed=args.seed,
                      model=args.model, dispersion=args.dispersion, bh=args.bh,
                      threads=args.threads)
    log.info("testing %d features on n=%d with %s", m.n_features, k.n, k.name)
    res = run_qtest_batch(m, k, cfg)
    _require_out(args)
    io.write_results(res, args.out)


def _cmd_rtest(args) -> None:
    locs, graph, m = _load(args)
    k = build_kernel(args.kernel, locs, graph)
    log.info("testing %d pairs", m.n_features * (m.n_features - 1) // 2)
    res = rtest_block(m, all_pairs(m.n_features), k, args.block_size, args.model,
                      args.dispersion)
    _require_out(args)
    io.write_pairs(res, args.out)


def _cmd_spectrum(args) -> None:
    locs = _locations(args)
    graph = io.read_graph(args.graph, locs.n if locs is not None else None) if args.graph else None
    k = build_kernel(args.kernel, locs, graph)
    s = kernel_spectrum(k, centered=args.centered)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("index\teigenvalue\n")
            for i, lam in enumerate(s.eigenvalues):
                fh.write(f"{i}\t{io.fmt(lam)}\n")
    if args.centered:
        rep = classify_definiteness(s)
        print(f"class\t{rep.kind}\npositive\t{rep.n_positive}\nnegative\t{rep.n_negative}\n"
              f"zero\t{rep.n_zero}\ntol\t{io.fmt(rep.tol)}")
    else:
        print(f"n_eigenvalues\t{len(s)}\nmax\t{io.fmt(s.eigenvalues[0])}\n"
              f"min\t{io.fmt(s.eigenvalues[-1])}")


def _cmd_simulate(args) -> None:
    locs = io.parse_grid(args.grid)
    rows, cols = locs.grid.shape
    f = args.n_features
    if args.pattern == "null":
        m = null_features(f, locs.n, NBDist(args.mean, args.dispersion), args.seed)
    else:
        spec = {
            "blob": PatternSpec("low_freq_blob", radius=max(rows, cols) / 6.0),
            "cosine": PatternSpec("cosine_mode", freq=(1, 1)),
            "checkerboard": PatternSpec("checkerboard"),
        }[args.pattern]
        pattern = generate_pattern(spec, (rows, cols))
        if args.noise == "ramp":
            levels = np.linspace(0.0, 1.0, f)
        else:
            try:
                levels = np.full(f, float(args.noise))
            except ValueError:
                raise ConfigError("--noise must be a number or 'ramp'") from None
        vals = np.array([nb_counts(pattern, args.mean, args.dispersion, lv, [args.seed, i],
                                   args.gain) for i, lv in enumerate(levels)])
        m = FeatureMatrix(vals.reshape(f, locs.n), tuple(f"gene{i}" for i in range(f)))
    io.write_matrix(m, args.out, locs.ids)
    if args.coords_out:
        io.write_coordinates(locs, args.coords_out)


def _cmd_bench(args) -> None:
    print("rows\tcols\tn\tseconds")
    rng = np.random.default_rng(args.seed)
    for tok in args.sizes.split(","):
        side = int(tok)
        locs = SpatialLocations.from_grid(side, side, "torus")
        t0 = time.perf_counter()
        k = build_kernel(args.kernel, locs)
        z = rng.standard_normal(locs.n)
        z = (z - z.mean()) / z.std(ddof=1)
        q = q_statistic(z, k)
        liu_sf(q, *liu_cumulants(grid_spectrum(k, centered=True), standardized=True))
        print(f"{side}\t{side}\t{locs.n}\t{time.perf_counter() - t0:.4f}")


def _require_out(args) -> None:
    if not args.out:
        raise ConfigError("--out is required")


_COMMANDS = {"qtest": _cmd_qtest, "rtest": _cmd_rtest, "spectrum": _cmd_spectrum,
             "simulate": _cmd_simulate, "bench": _cmd_bench}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return the exit code."""
    level = os.environ.get("QUADTEST_LOG", "error").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.ERROR),
                        format="quadtest: %(message)s")
    try:
        args = make_parser().parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be positive")
        _COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ValidationError, OSError) as exc:
        print(f"quadtest: error: {exc}", file=sys.stderr)
        return 1
    except (ComputeError, QuadTestError) as exc:
        print(f"quadtest: computation failed: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
