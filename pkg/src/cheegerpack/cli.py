"""Command-line interface: ``cheegerpack <command> --config run.yaml --out DIR``.

Commands: ``solve``, ``sweep``, ``pack``, ``seba``, ``dynamic``, ``census``.
Exit codes: 0 success, 1 numerical failure, 2 configuration or I/O error.

Config files are YAML mappings with the sections below; unknown keys are
rejected and numbers may be given as expressions (``"2*pi"``)::

    manifold: {kind, resolution, extent, phi, metric}
    bc: neumann | dirichlet
    seed: 0
    eigen: {count, tol, max_restarts}
    sweep: {n_levels, indices}
    pack: {k, selection, symmetry}
    seba: {k, l, max_iter, normalization, mode, selection}
    flow: {name: shear | identity, b, t_max}
    census: {manifold, kmax, p, q, t_max}
"""

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .assembly import assemble
from .census import ball_threshold_check, census_table
from .dynamics import (
    assemble_dynamic,
    build_dynamic_packing,
    dynamic_sweep,
    identity_flow,
    shear_flow,
)
from .eigensolve import smallest_eigenpairs
from .errors import CheegerError, ConfigError, NumericalError
from .export import (
    write_advected_polylines,
    write_census,
    write_csv,
    write_eigenpairs,
    write_json,
    write_polylines,
    write_sweep,
    write_vertex_functions,
)
from .expr import evaluate_constant
from .levelset import _select, build_packing, chain_segments, superlevel_sweep
from .manifold import build_grid
from .nodal import nodal_domains
from .seba import canonicalize, min_disjoint_threshold, seba_certify, seba_rotate, seba_vectors

log = logging.getLogger("cheegerpack")

COMMANDS = ("solve", "sweep", "pack", "seba", "dynamic", "census")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _number(v, name):
    if isinstance(v, bool):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        return evaluate_constant(v)
    raise ConfigError(f"{name} must be a number or expression, got {v!r}")


def _integer(v, name, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {v}")
    return v


def _choice(v, name, options):
    if v not in options:
        raise ConfigError(f"{name} must be one of {options}, got {v!r}")
    return v


def _int_list(v, name):
    if isinstance(v, int) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{name} must be an integer or a non-empty list of integers")
    return [_integer(x, name, 1) for x in v]


def _section(raw, name, allowed):
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(map(str, unknown))}")
    return raw


@dataclass
class ManifoldSpec:
    kind: str
    resolution: tuple
    extent: tuple
    phi: object = 0.0
    metric: object = None


@dataclass
class EigenSpec:
    count: int = 10
    tol: float = 1e-8
    max_restarts: int = 500


@dataclass
class SweepSpec:
    n_levels: int = 256
    indices: list = None


@dataclass
class PackSpec:
    k: list = field(default_factory=lambda: list(range(2, 11)))
    selection: str = "min_ratio"
    symmetry: bool = True


@dataclass
class SebaSpec:
    k: int = 3
    l: int = None
    max_iter: int = 5000
    normalization: str = "max"
    mode: str = None
    selection: str = "min_ratio"


@dataclass
class FlowSpec:
    name: str = "shear"
    b: float = 0.0
    t_max: int = 2


@dataclass
class CensusSpec:
    manifold: str = "torus"
    kmax: int = 200
    p: int = None
    q: int = None
    t_max: int = 2


@dataclass
class RunConfig:
    """Validated run configuration."""

    manifold: ManifoldSpec = None
    bc: str = "neumann"
    seed: int = 0
    eigen: EigenSpec = field(default_factory=EigenSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    pack: PackSpec = field(default_factory=PackSpec)
    seba: SebaSpec = field(default_factory=SebaSpec)
    flow: FlowSpec = None
    census: CensusSpec = None
    out: str = None

    def echo(self):
        return asdict(self)


_TOP = ("manifold", "bc", "seed", "eigen", "sweep", "pack", "seba", "flow", "census", "out")


def parse_config(raw):
    """Validate a config mapping into a :class:`RunConfig`.

    Raises
    ------
    ConfigError
        Unknown keys, wrong types or out-of-range values.
    """
    raw = _section(raw, "config", _TOP)
    cfg = RunConfig()
    if "manifold" in raw:
        m = _section(raw["manifold"], "manifold", ("kind", "resolution", "extent", "phi", "metric"))
        for key in ("kind", "resolution", "extent"):
            if key not in m:
                raise ConfigError(f"manifold.{key} is required")
        # scalars apply to every axis
        res, ext = m["resolution"], m["extent"]
        if isinstance(res, list):
            res = tuple(_integer(r, "manifold.resolution", 2) for r in res)
        else:
            res = _integer(res, "manifold.resolution", 2)
        if isinstance(ext, list):
            ext = tuple(_number(e, "manifold.extent") for e in ext)
        else:
            ext = _number(ext, "manifold.extent")
        phi = m.get("phi", 0.0)
        if not isinstance(phi, (int, float, str)) or isinstance(phi, bool):
            raise ConfigError("manifold.phi must be a number or an expression in x, y")
        metric = m.get("metric")
        if metric is not None and not isinstance(metric, dict):
            raise ConfigError("manifold.metric must be a mapping of g11[, g12, g22] expressions")
        cfg.manifold = ManifoldSpec(m["kind"], res, ext, phi, metric)
    cfg.bc = _choice(raw.get("bc", "neumann"), "bc", ("neumann", "dirichlet"))
    cfg.seed = _integer(raw.get("seed", 0), "seed", 0)
    if "eigen" in raw:
        e = _section(raw["eigen"], "eigen", ("count", "tol", "max_restarts"))
        cfg.eigen = EigenSpec(
            _integer(e.get("count", 10), "eigen.count", 1),
            _number(e.get("tol", 1e-8), "eigen.tol"),
            _integer(e.get("max_restarts", 500), "eigen.max_restarts", 1),
        )
    if "sweep" in raw:
        s = _section(raw["sweep"], "sweep", ("n_levels", "indices"))
        idx = s.get("indices")
        cfg.sweep = SweepSpec(
            _integer(s.get("n_levels", 256), "sweep.n_levels", 16),
            None if idx is None else _int_list(idx, "sweep.indices"),
        )
    if "pack" in raw:
        p = _section(raw["pack"], "pack", ("k", "selection", "symmetry"))
        sym = p.get("symmetry", True)
        if not isinstance(sym, bool):
            raise ConfigError("pack.symmetry must be true or false")
        cfg.pack = PackSpec(
            _int_list(p.get("k", list(range(2, 11))), "pack.k"),
            _choice(p.get("selection", "min_ratio"), "pack.selection", ("min_ratio", "midpoint")),
            sym,
        )
    if "seba" in raw:
        s = _section(raw["seba"], "seba", ("k", "l", "max_iter", "normalization", "mode", "selection"))
        mode = s.get("mode")
        cfg.seba = SebaSpec(
            _integer(s.get("k", 3), "seba.k", 2),
            None if s.get("l") is None else _integer(s["l"], "seba.l", 2),
            _integer(s.get("max_iter", 5000), "seba.max_iter", 1),
            _choice(s.get("normalization", "max"), "seba.normalization", ("max", "mass")),
            None if mode is None else _choice(mode, "seba.mode", ("neumann", "dirichlet")),
            _choice(s.get("selection", "min_ratio"), "seba.selection", ("min_ratio", "midpoint")),
        )
    if "flow" in raw:
        f = _section(raw["flow"], "flow", ("name", "b", "t_max"))
        cfg.flow = FlowSpec(
            _choice(f.get("name", "shear"), "flow.name", ("shear", "identity")),
            _number(f.get("b", 0.0), "flow.b"),
            _integer(f.get("t_max", 2), "flow.t_max", 1),
        )
    if "census" in raw:
        c = _section(raw["census"], "census", ("manifold", "kmax", "p", "q", "t_max"))
        cfg.census = CensusSpec(
            _choice(c.get("manifold", "torus"), "census.manifold", ("torus", "cylinder", "ball", "shear")),
            _integer(c.get("kmax", 200), "census.kmax", 1),
            None if c.get("p") is None else _integer(c["p"], "census.p", 1),
            None if c.get("q") is None else _integer(c["q"], "census.q", 1),
            _integer(c.get("t_max", 2), "census.t_max", 1),
        )
    if "out" in raw:
        if not isinstance(raw["out"], str):
            raise ConfigError("out must be a path string")
        cfg.out = raw["out"]
    return cfg


def load_config(path):
    """Read a YAML config; bare names resolve to the packaged configs (e.g. ``torus``)."""
    p = Path(path)
    if not p.exists():
        packaged = resources.files("cheegerpack") / "configs" / f"{p.stem}.yaml"
        if p.suffix in ("", ".yaml") and packaged.is_file():
            text = packaged.read_text()
        else:
            raise ConfigError(f"config file not found: {path}")
    else:
        text = p.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(raw)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _need(cfg, section):
    if getattr(cfg, section) is None:
        raise ConfigError(f"this command needs a {section!r} section")


def _domain(cfg):
    _need(cfg, "manifold")
    m = cfg.manifold
    return build_grid(m.kind, m.resolution, m.extent, m.phi, m.metric)


def _flow(cfg, grid):
    f = cfg.flow
    if f.name == "shear":
        if grid.kind != "cylinder":
            raise ConfigError("the shear flow lives on a cylinder")
        return shear_flow(f.b, f.t_max, grid.extent)
    return identity_flow(f.t_max, grid.extent, grid.periodic)


def _solve(cfg, out, grid, op, count=None):
    count = cfg.eigen.count if count is None else count
    basis = smallest_eigenpairs(op, count, cfg.eigen.tol, cfg.eigen.max_restarts, cfg.seed)
    write_eigenpairs(out / "eigenpairs.csv", grid, basis)
    summary = {
        "version": __version__,
        "config": cfg.echo(),
        "bc": op.bc,
        "eigenvalues": basis.eigenvalues,
        "residuals": basis.residuals,
    }
    write_json(out / "summary.json", summary)
    log.info("eigenvalues: %s", np.array2string(basis.eigenvalues, precision=6))
    return basis


def cmd_solve(cfg, out):
    grid, metric, weight = _domain(cfg)
    _solve(cfg, out, grid, assemble(grid, metric, weight, cfg.bc))
    return 0


def _sweep_all(cfg, out, grid, basis, sweep_fn):
    indices = cfg.sweep.indices or list(range(1, len(basis) + 1))
    rows = []
    for i in indices:
        if i > len(basis):
            raise ConfigError(f"sweep index {i} exceeds eigen.count = {len(basis)}")
        u = basis.vector(i)
        lam = float(basis.eigenvalues[i - 1])
        for j, dom in enumerate(nodal_domains(grid, u).domains):
            sw = sweep_fn(u, dom, lam, i, j)
            write_sweep(out / f"sweep_u{i}_d{j}.csv", sw)
            rows.append({
                "index": i,
                "eigenvalue": lam,
                "domain": j,
                "sign": dom.sign,
                "size": dom.size,
                "nonempty": sw.nonempty,
                "s_upper": sw.s_upper,
                "S_measure_estimate": sw.S_measure_estimate,
                "S_measure_lower_bound": sw.S_measure_lower_bound,
                "bound_degenerate": sw.bound_degenerate,
                "hbar": sw.hbar,
                "min_ratio": sw.min_ratio(),
                "ratio_bound": sw.ratio_bound,
            })
    return rows


def cmd_sweep(cfg, out):
    grid, metric, weight = _domain(cfg)
    basis = _solve(cfg, out, grid, assemble(grid, metric, weight, cfg.bc))

    def run(u, dom, lam, i, j):
        return superlevel_sweep(grid, metric, weight, u, dom, lam, cfg.bc, cfg.sweep.n_levels)

    rows = _sweep_all(cfg, out, grid, basis, run)
    write_json(out / "sweeps.json", {"config": cfg.echo(), "sweeps": rows})
    return 0


def _packing_json(cfg, pk):
    return {
        "config": cfg.echo(),
        "k": pk.k,
        "r_k": pk.r_k,
        "witness_eigenvalue": pk.witness_eigenvalue,
        "sets": [
            {"domain": p.domain_index, "sign": p.sign, "s": p.s, "volume": p.volume,
             "perimeter": p.perimeter, "ratio": p.ratio, "n_vertices": int(len(p.vertices))}
            for p in pk.sets
        ],
        "certificate": pk.certificate,
    }


def cmd_pack(cfg, out):
    grid, metric, weight = _domain(cfg)
    count = max(cfg.eigen.count, max(cfg.pack.k))
    basis = _solve(cfg, out, grid, assemble(grid, metric, weight, cfg.bc), count)
    for k in cfg.pack.k:
        pk = build_packing(grid, metric, weight, basis, k, cfg.bc, cfg.pack.selection,
                           cfg.sweep.n_levels, cfg.pack.symmetry)
        for i, p in enumerate(pk.sets):
            write_polylines(out / f"packing_k{k}_set{i}.txt", p.polylines)
        write_json(out / f"packing_k{k}.json", _packing_json(cfg, pk))
        log.info("k=%d: r_k=%d max ratio %.6g, certificate holds", k, pk.r_k, pk.max_ratio)
    return 0


def cmd_seba(cfg, out):
    grid, metric, weight = _domain(cfg)
    s = cfg.seba
    mode = s.mode or cfg.bc
    basis = _solve(cfg, out, grid, assemble(grid, metric, weight, cfg.bc), max(cfg.eigen.count, s.k))
    U, V = seba_vectors(basis, s.k, s.normalization)
    rot = seba_rotate(V, s.l, s.max_iter)
    if not rot.converged:
        raise NumericalError(f"SEBA did not converge within {s.max_iter} iterations")
    alpha = canonicalize(rot.alpha, U, grid.vertex_coords)
    a = min_disjoint_threshold(U @ alpha.T)
    cert = seba_certify(grid, metric, weight, basis, alpha, a, mode, cfg.sweep.n_levels,
                        s.selection, s.normalization)
    res = cert.result
    cols = {}
    for i in range(alpha.shape[0]):
        cols[f"f{i + 1}"] = res.combinations[:, i]
        cols[f"tau_f{i + 1}"] = res.sparse_functions[:, i]
    write_vertex_functions(out / "seba_functions.csv", grid, cols)
    doc = {"config": cfg.echo(), "iterations": rot.iterations}
    doc.update(cert.as_dict())
    write_json(out / "seba.json", doc)
    log.info("a = %.4f, bound (Rayleigh form) %.4f", a, cert.rayleigh_bound)
    return 0


def cmd_dynamic(cfg, out):
    _need(cfg, "flow")
    grid, metric, weight = _domain(cfg)
    if not np.allclose(weight.phi, 0.0) or cfg.manifold.metric is not None:
        raise ConfigError("dynamic runs use the flow's own metric and density; drop manifold.phi/metric")
    fm = _flow(cfg, grid)
    basis = _solve(cfg, out, grid, assemble_dynamic(grid, fm, cfg.bc))

    def run(u, dom, lam, i, j):
        sw, levels = dynamic_sweep(grid, fm, u, dom, lam, cfg.bc, cfg.sweep.n_levels,
                                   return_levels=True)
        rows = ((r.s, *r.perimeter_t) for r in sw.records)
        write_csv(out / f"perimeter_t_u{i}_d{j}.csv", ["s"] + [f"t{t}" for t in fm.times], rows)
        if sw.nonempty:
            lines = chain_segments(grid, levels[_select(sw, "min_ratio")])
            write_advected_polylines(out / f"advected_u{i}_d{j}.csv", fm, lines)
        return sw

    rows = _sweep_all(cfg, out, grid, basis, run)
    write_json(out / "sweeps.json", {"config": cfg.echo(), "sweeps": rows})
    for k in (k for k in cfg.pack.k if k <= len(basis)):
        pk = build_dynamic_packing(grid, fm, basis, k, cfg.bc, cfg.pack.selection, cfg.sweep.n_levels)
        write_json(out / f"packing_k{k}.json", _packing_json(cfg, pk))
    return 0


def cmd_census(cfg, out):
    _need(cfg, "census")
    c = cfg.census
    params = {}
    if c.manifold == "shear":
        if c.p is None or c.q is None:
            raise ConfigError("shear census needs census.p and census.q")
        params = {"p": c.p, "q": c.q, "t_max": c.t_max}
    rows = census_table(c.manifold, c.kmax, **params)
    write_census(out / "census.csv", rows)
    bad = [r[0] for r in rows if r[2] < r[3]]
    doc = {"config": cfg.echo(), "rows": len(rows), "violations": bad, "all_rows_ok": not bad}
    if c.manifold == "ball" and c.kmax >= 18:
        l17, mid, l18, holds = ball_threshold_check()
        doc["ball_threshold"] = {"lambda_17": l17, "threshold": mid, "lambda_18": l18, "holds": holds}
    write_json(out / "census.json", doc)
    log.info("%s census: %d rows, %d violations", c.manifold, len(rows), len(bad))
    return 0


_HANDLERS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "pack": cmd_pack,
    "seba": cmd_seba,
    "dynamic": cmd_dynamic,
    "census": cmd_census,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cheegerpack",
        description="Eigenpairs, nodal domains and Cheeger packings on weighted grids.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML file or packaged config name")
    parser.add_argument("--out", help="output directory (overrides the config's 'out')")
    parser.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK thread limit")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config's seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg.seed = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        out = Path(args.out or cfg.out or "out")
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=args.threads):
            return _HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except CheegerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
