"""Experiment harness: configuration parsing, study drivers, CSV output.

The CSV schema is fixed:

    experiment,level,degree,h,dofs_fine,dofs_small,j,lambda_re,lambda_im,
    err_lambda,err_u_h1,err_u_b,err_uadj_h1,wall_ms

One row per (level, eigenvalue index). ``err_lambda`` is the error of the
cluster mean containing index j. For the L-shape runs, where no analytic
eigenfunctions exist, the eigenfunction columns carry the ZZ estimator
values (primal, combined, adjoint) instead.
"""

import csv
import io
import logging
import time
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone

import numpy as np
import scipy.sparse.linalg as spla

from . import __version__
from .adaptivity import adaptive_multilevel
from .correction import multilevel_solve
from .exceptions import MleigError
from .fem import Coefficients, ExactFunction, assemble_pencil, build_space
from .mesh import generate_l_shape, generate_unit_square, refine_red
from .metrics import align_to_exact, fit_order
from .smalleig import ClusterSelector, solve_dense_pencil, eigenvalue_order

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("experiment,level,degree,h,dofs_fine,dofs_small,j,lambda_re,"
               "lambda_im,err_lambda,err_u_h1,err_u_b,err_uadj_h1,wall_ms")

EXPERIMENTS = ("multi_space", "multi_grid", "lshape_adaptive", "complex_b",
               "direct_baseline")
DOMAINS = ("unit_square", "l_shape")

LSHAPE_LAMBDA_1 = 9.95240442893276

# (k, l) Fourier modes of the first six unit-square eigenvalues, ordered by
# k^2 + l^2 = 2, 5, 5, 8, 10, 10
FIRST6_MODES = ((1, 1), (1, 2), (2, 1), (2, 2), (1, 3), (3, 1))
FIRST6_TARGETS = ((1, 1), (2, 2), (4, 1), (5, 2))

ARPACK_THRESHOLD = 420


@dataclass
class ExperimentConfig:
    """Resolved settings of one experiment run."""

    experiment: str = "multi_grid"
    domain: str = "unit_square"
    coarse_n: int = 4
    levels: int = 5
    degrees: tuple = (1,)
    b_re: tuple = (1.0, 0.5)
    b_im: tuple = (0.0, 0.0)
    target_index: int = 1
    cluster_count: int = 1
    targets: tuple = ()                  # ((index, count), ...); overrides
    quad_degree: int = 0                 # 0 = per-space default 2p+2
    theta: float = 0.4
    max_iters: int = 12
    seed: int = 0
    dense_limit: int = 3000
    output: str = "results.csv"

    @property
    def b(self):
        return (complex(self.b_re[0], self.b_im[0]),
                complex(self.b_re[1], self.b_im[1]))

    def target_list(self):
        if self.targets:
            return tuple(self.targets)
        return ((self.target_index, self.cluster_count),)


_TUPLE_FIELDS = {"degrees": int, "b_re": float, "b_im": float}
_SCALAR_TYPES = {"experiment": str, "domain": str,
                 "output": str, "coarse_n": int, "levels": int,
                 "target_index": int, "cluster_count": int, "quad_degree": int,
                 "max_iters": int, "seed": int, "dense_limit": int,
                 "theta": float}


def parse_config(text):
    """Parse flat ``key = value`` configuration text into an ExperimentConfig.

    ``#`` starts a comment. ``H = 0.25`` may be given instead of
    ``coarse_n = 4``. ``targets = 1:1,2:2`` selects several clusters.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "H":
            h = float(val)
            n = round(1.0 / h)
            if abs(n * h - 1.0) > 1e-9 or n < 1:
                raise ValueError(f"line {lineno}: H must be a reciprocal integer")
            values["coarse_n"] = n
        elif key == "targets":
            pairs = []
            for part in val.replace(",", " ").split():
                i, _, m = part.partition(":")
                pairs.append((int(i), int(m) if m else 1))
            values["targets"] = tuple(pairs)
        elif key in _TUPLE_FIELDS:
            conv = _TUPLE_FIELDS[key]
            values[key] = tuple(conv(tok) for tok in
                                val.replace(",", " ").split())
        elif key in _SCALAR_TYPES:
            values[key] = _SCALAR_TYPES[key](val)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")

    cfg = ExperimentConfig(**values)
    return _apply_experiment_defaults(cfg, explicitly_set=set(values))


def _apply_experiment_defaults(cfg, explicitly_set=frozenset()):
    if cfg.experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {cfg.experiment!r}")
    if cfg.domain not in DOMAINS:
        raise ValueError(f"unknown domain {cfg.domain!r}")
    updates = {}
    if cfg.experiment == "multi_space" and "degrees" not in explicitly_set:
        updates["degrees"] = (1, 2, 3, 4)
    if cfg.experiment == "multi_space" and "levels" not in explicitly_set:
        updates["levels"] = 3
    if cfg.experiment == "complex_b":
        if "b_im" not in explicitly_set:
            updates["b_im"] = (2.0, -1.0)
        if "levels" not in explicitly_set:
            updates["levels"] = 4
    if cfg.experiment == "lshape_adaptive":
        updates["domain"] = "l_shape"
    cfg = replace(cfg, **updates)
    if cfg.experiment == "multi_space" and not cfg.degrees:
        raise ValueError("multi_space requires a nonempty degree ladder")
    if cfg.levels < 1:
        raise ValueError("levels must be >= 1")
    if any(v != 0.0 for v in cfg.b_im) and cfg.experiment not in (
            "complex_b", "direct_baseline"):
        logger.warning("complex b used outside the complex_b experiment")
    return cfg


# -- model problem helpers ----------------------------------------------------

def config_coefficients(cfg):
    return Coefficients.constant(b=cfg.b)


def square_reference(b, mode):
    """Exact eigenvalue (b1^2 + b2^2)/4 + (k^2 + l^2) pi^2."""
    k, l = mode
    return (b[0] ** 2 + b[1] ** 2) / 4.0 + (k * k + l * l) * np.pi ** 2


def square_eigenfunction(b, mode):
    k, l = mode
    b1, b2 = b

    def value(x):
        return (np.exp((b1 * x[:, 0] + b2 * x[:, 1]) / 2.0)
                * np.sin(k * np.pi * x[:, 0]) * np.sin(l * np.pi * x[:, 1]))

    def gradient(x):
        e = np.exp((b1 * x[:, 0] + b2 * x[:, 1]) / 2.0)
        sx, cx = np.sin(k * np.pi * x[:, 0]), np.cos(k * np.pi * x[:, 0])
        sy, cy = np.sin(l * np.pi * x[:, 1]), np.cos(l * np.pi * x[:, 1])
        out = np.empty((x.shape[0], 2), dtype=complex)
        out[:, 0] = e * (b1 / 2.0 * sx * sy + k * np.pi * cx * sy)
        out[:, 1] = e * (b2 / 2.0 * sx * sy + l * np.pi * sx * cy)
        return out

    return ExactFunction(value=value, gradient=gradient)


def square_adjoint_eigenfunction(b, mode):
    conj_b = (-np.conj(b[0]), -np.conj(b[1]))
    return square_eigenfunction(conj_b, mode)


def _modes_for_target(index, count):
    """Fourier modes for cluster positions index..index+count-1, or None."""
    if index + count - 1 > len(FIRST6_MODES):
        return None
    return FIRST6_MODES[index - 1:index - 1 + count]


def reference_for_target(cfg, index, count):
    """Cluster-mean reference eigenvalue, or None when unknown."""
    if cfg.domain == "l_shape":
        if cfg.b == (1.0 + 0j, 0.5 + 0j) and index == 1 and count == 1:
            return complex(LSHAPE_LAMBDA_1)
        return None
    modes = _modes_for_target(index, count)
    if modes is None:
        return None
    return complex(np.mean([square_reference(cfg.b, m) for m in modes]))


# -- CSV assembly -------------------------------------------------------------

@dataclass
class RunResult:
    rows: list = field(default_factory=list)
    finest_mesh: object = None
    finest_pencil: object = None
    wall_s: float = 0.0
    config: ExperimentConfig = None


def _fmt(x):
    if x is None:
        return "nan"
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _row(experiment, level, degree, h, dofs_fine, dofs_small, j, lam,
         err_lambda, err_u_h1, err_u_b, err_uadj_h1, wall_ms):
    return [experiment, str(level), str(degree), _fmt(h), str(dofs_fine),
            str(dofs_small), str(j), _fmt(float(np.real(lam))),
            _fmt(float(np.imag(lam))), _fmt(err_lambda), _fmt(err_u_h1),
            _fmt(err_u_b), _fmt(err_uadj_h1), _fmt(wall_ms)]


def _eigfn_errors(cfg, cluster, index, count):
    """Aligned per-member eigenfunction errors, or NaNs when no analytic
    eigenfunctions are available."""
    nan = [float("nan")] * count
    if cfg.domain != "unit_square":
        return nan, nan, nan
    modes = _modes_for_target(index, count)
    if modes is None:
        return nan, nan, nan
    space = cluster.space
    primal = cluster.primal_full()
    adjoint = cluster.adjoint_full()
    exact = [square_eigenfunction(cfg.b, m) for m in modes]
    exact_adj = [square_adjoint_eigenfunction(cfg.b, m) for m in modes]
    qd = 2 * space.degree + 6
    e_h1 = align_to_exact(space, primal, exact, norm="h1", quad_degree=qd)
    e_b = align_to_exact(space, primal, exact, norm="b", quad_degree=qd)
    ea_h1 = align_to_exact(space, adjoint, exact_adj, norm="h1", quad_degree=qd)
    return list(e_h1), list(e_b), list(ea_h1)


# -- experiment drivers ---------------------------------------------------------

def _mesh_chain(cfg):
    gen = generate_unit_square if cfg.domain == "unit_square" else generate_l_shape
    meshes = [gen(cfg.coarse_n)]
    for _ in range(cfg.levels - 1):
        meshes.append(refine_red(meshes[-1]))
    return meshes


def _quad(cfg):
    return cfg.quad_degree if cfg.quad_degree else None


def _run_multilevel_style(cfg, result, multi_space):
    coeffs = config_coefficients(cfg)
    qd = _quad(cfg)
    if multi_space:
        mesh_list = _mesh_chain(cfg)
        plans = [[build_space(mesh, d) for d in cfg.degrees]
                 for mesh in mesh_list]
        hs = [1.0 / (cfg.coarse_n * 2 ** k) for k in range(cfg.levels)]
    else:
        meshes = _mesh_chain(cfg)
        deg = cfg.degrees[0]
        plans = [[build_space(mesh, deg) for mesh in meshes]]
        hs = [None]

    for plan, h_plan in zip(plans, hs):
        pencils = [assemble_pencil(s, coeffs, qd) for s in plan]
        result.finest_mesh = plan[-1].mesh
        result.finest_pencil = pencils[-1]
        for index, count in cfg.target_list():
            ref = reference_for_target(cfg, index, count)
            selector = ClusterSelector(index=index, count=count)
            _, history = multilevel_solve(coeffs, plan, selector,
                                          quad_degree=qd,
                                          dense_limit=cfg.dense_limit,
                                          pencils=pencils)
            for rec in history:
                err_lam = (abs(rec.lambda_hat - ref) if ref is not None
                           else float("nan"))
                e_h1, e_b, ea_h1 = _eigfn_errors(cfg, rec.cluster, index, count)
                h_row = h_plan if multi_space else 1.0 / (cfg.coarse_n *
                                                          2 ** (rec.level - 1))
                degree = cfg.degrees[rec.level - 1] if multi_space else cfg.degrees[0]
                lams = rec.lambdas
                for offset in range(count):
                    result.rows.append(_row(
                        cfg.experiment, rec.level, degree, h_row,
                        rec.dofs_fine, rec.dofs_small, index + offset,
                        lams[offset], err_lam, e_h1[offset], e_b[offset],
                        ea_h1[offset], rec.wall_ms))


def direct_eigensolve(pencil, max_position, seed=0):
    """Direct Galerkin eigenpairs of the pencil up to a sorted position.

    Dense for small spaces, shift-invert Arnoldi around the origin for large
    ones. Returns (lams, right_vectors, left_vectors) sorted by (Re, Im, abs),
    truncated to ``max_position`` entries.
    """
    n = pencil.size
    if n <= ARPACK_THRESHOLD:
        triples = solve_dense_pencil(*pencil.dense())
        triples = triples[:max_position]
        lams = np.array([t.lam for t in triples])
        R = np.column_stack([t.right_vec for t in triples])
        L = np.column_stack([t.left_vec for t in triples])
        return lams, R, L
    k = min(max_position + 4, n - 2)
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    A, B = pencil.A_mat.tocsc(), pencil.B_mat.tocsc()
    wr, vr = spla.eigs(A, k=k, M=B, sigma=0.0, v0=v0)
    wl, vl = spla.eigs(A.conj().T, k=k, M=B.conj().T, sigma=0.0, v0=v0)
    # left pencil: A^H y = conj(lambda) B^H y  <=>  y^H A = lambda y^H B
    wl = np.conj(wl)
    ir = eigenvalue_order(wr)[:max_position]
    il = eigenvalue_order(wl)[:max_position]
    if np.abs(wr[ir] - wl[il]).max() > 1e-6 * (1 + np.abs(wr[ir]).max()):
        logger.warning("left/right Arnoldi eigenvalues differ beyond tolerance")
    return wr[ir], vr[:, ir], vl[:, il]


def _run_direct_baseline(cfg, result):
    coeffs = config_coefficients(cfg)
    qd = _quad(cfg)
    multi_space = len(cfg.degrees) > 1
    max_pos = max(i + m - 1 for i, m in cfg.target_list())

    if multi_space:
        levels = [(lv + 1, build_space(mesh, d), 1.0 / (cfg.coarse_n * 2 ** k))
                  for k, mesh in enumerate(_mesh_chain(cfg))
                  for lv, d in enumerate(cfg.degrees)]
    else:
        deg = cfg.degrees[0]
        levels = [(k + 1, build_space(mesh, deg), 1.0 / (cfg.coarse_n * 2 ** k))
                  for k, mesh in enumerate(_mesh_chain(cfg))]

    for level, space, h in levels:
        t0 = time.perf_counter()
        pencil = assemble_pencil(space, coeffs, qd)
        lams, R, L = direct_eigensolve(pencil, max_pos, seed=cfg.seed)
        wall = 1e3 * (time.perf_counter() - t0)
        result.finest_mesh = space.mesh
        result.finest_pencil = pencil
        for index, count in cfg.target_list():
            ref = reference_for_target(cfg, index, count)
            sel = slice(index - 1, index - 1 + count)
            cluster_lams = lams[sel]
            lam_hat = cluster_lams.mean()
            err_lam = abs(lam_hat - ref) if ref is not None else float("nan")
            pseudo = _PseudoCluster(space, R[:, sel], L[:, sel], cluster_lams)
            e_h1, e_b, ea_h1 = _eigfn_errors(cfg, pseudo, index, count)
            for offset in range(count):
                result.rows.append(_row(
                    cfg.experiment, level, space.degree, h,
                    space.interior_count, space.interior_count, index + offset,
                    cluster_lams[offset], err_lam, e_h1[offset], e_b[offset],
                    ea_h1[offset], wall))


class _PseudoCluster:
    """Duck-typed stand-in for EigenCluster used by the baseline rows."""

    def __init__(self, space, primal, adjoint, lambdas):
        self.space = space
        self.primal = primal
        self.adjoint = adjoint
        self.lambdas = lambdas
        self.m = primal.shape[1]

    def primal_full(self):
        return self.space.extend(self.primal.T).T

    def adjoint_full(self):
        return self.space.extend(self.adjoint.T).T


def _run_complex_b(cfg, result):
    """Multigrid run with complex b; the substitution-derived reference is
    accepted only after a direct fine-grid cross-check."""
    coeffs = config_coefficients(cfg)
    qd = _quad(cfg)
    for index, count in cfg.target_list():
        modes = _modes_for_target(index, count)
        if modes is None:
            raise MleigError("complex_b requires targets within the first 6")
    meshes = _mesh_chain(cfg)
    deg = cfg.degrees[0]
    spaces = [build_space(mesh, deg) for mesh in meshes]
    pencils = [assemble_pencil(s, coeffs, qd) for s in spaces]
    result.finest_mesh = spaces[-1].mesh
    result.finest_pencil = pencils[-1]

    max_pos = max(i + m - 1 for i, m in cfg.target_list())
    # cross-check oracle: a high-order direct solve whose own discretization
    # error sits far below the 1e-4 agreement requirement
    oracle_space = build_space(spaces[-1].mesh, min(spaces[-1].degree + 2, 4))
    oracle_pencil = assemble_pencil(oracle_space, coeffs, _quad(cfg))
    fine_lams, _, _ = direct_eigensolve(oracle_pencil, max_pos, seed=cfg.seed)

    for index, count in cfg.target_list():
        modes = _modes_for_target(index, count)
        formula = complex(np.mean([square_reference(cfg.b, m) for m in modes]))
        direct = fine_lams[index - 1:index - 1 + count].mean()
        gap = abs(formula - direct)
        if gap > 1e-4:
            raise MleigError(
                f"substitution reference {formula} and direct solve {direct} "
                f"disagree by {gap:.3e} (tolerance 1e-4)")
        selector = ClusterSelector(index=index, count=count)
        _, history = multilevel_solve(coeffs, spaces, selector, quad_degree=qd,
                                      dense_limit=cfg.dense_limit,
                                      pencils=pencils)
        for rec in history:
            err_lam = abs(rec.lambda_hat - formula)
            e_h1, e_b, ea_h1 = _eigfn_errors(cfg, rec.cluster, index, count)
            h_row = 1.0 / (cfg.coarse_n * 2 ** (rec.level - 1))
            for offset in range(count):
                result.rows.append(_row(
                    cfg.experiment, rec.level, deg, h_row, rec.dofs_fine,
                    rec.dofs_small, index + offset, rec.lambdas[offset],
                    err_lam, e_h1[offset], e_b[offset], ea_h1[offset],
                    rec.wall_ms))


def _run_lshape_adaptive(cfg, result):
    coeffs = config_coefficients(cfg)
    mesh = generate_l_shape(cfg.coarse_n)
    index, count = cfg.target_list()[0]
    ref = reference_for_target(cfg, index, count)
    selector = ClusterSelector(index=index, count=count)
    cluster, history = adaptive_multilevel(
        coeffs, mesh, selector, theta=cfg.theta, max_iters=cfg.max_iters,
        quad_degree=_quad(cfg), dense_limit=cfg.dense_limit)
    result.finest_mesh = cluster.space.mesh
    result.finest_pencil = None
    for rec in history:
        err_lam = (abs(rec.lambda_hat - ref) if ref is not None
                   else float("nan"))
        h_row = rec.space.mesh.mesh_size()
        for offset in range(count):
            result.rows.append(_row(
                cfg.experiment, rec.iteration + 1, 1, h_row, rec.dofs_fine,
                rec.dofs_small, index + offset, rec.lambdas[offset], err_lam,
                rec.estimator_primal, rec.estimator_total,
                rec.estimator_adjoint, rec.wall_ms))


def run_experiment(cfg):
    """Execute one experiment and return the collected RunResult."""
    t0 = time.perf_counter()
    result = RunResult(config=cfg)
    if cfg.experiment == "multi_grid":
        _run_multilevel_style(cfg, result, multi_space=False)
    elif cfg.experiment == "multi_space":
        _run_multilevel_style(cfg, result, multi_space=True)
    elif cfg.experiment == "direct_baseline":
        _run_direct_baseline(cfg, result)
    elif cfg.experiment == "complex_b":
        _run_complex_b(cfg, result)
    elif cfg.experiment == "lshape_adaptive":
        _run_lshape_adaptive(cfg, result)
    else:
        raise ValueError(f"unknown experiment {cfg.experiment!r}")
    result.wall_s = time.perf_counter() - t0
    return result


def write_csv(result, path_or_file):
    """Write metadata header lines and the data rows of a run."""
    cfg = result.config
    cfg_text = " ".join(f"{f.name}={getattr(cfg, f.name)!r}"
                        for f in fields(cfg))
    close = False
    if isinstance(path_or_file, (str, bytes)):
        fh = open(path_or_file, "w", newline="")
        close = True
    else:
        fh = path_or_file
    try:
        fh.write(f"# mleig {__version__} "
                 f"generated {datetime.now(timezone.utc).isoformat()}\n")
        fh.write(f"# config: {cfg_text}\n")
        qd = cfg.quad_degree if cfg.quad_degree else "2p+2"
        fh.write(f"# quadrature: assembly={qd} error_norms=2p+6\n")
        fh.write(f"# wall_clock_s={result.wall_s:.3f}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS.split(","))
        writer.writerows(result.rows)
    finally:
        if close:
            fh.close()


def run(cfg, output=None):
    """Run one experiment and write its CSV; returns the RunResult."""
    result = run_experiment(cfg)
    write_csv(result, output or cfg.output)
    return result


# -- summaries -----------------------------------------------------------------

def read_csv(path_or_file):
    """Rows of a harness CSV as a list of dicts (comments skipped)."""
    close = False
    if isinstance(path_or_file, (str, bytes)):
        fh = open(path_or_file, "r", newline="")
        close = True
    else:
        fh = path_or_file
    try:
        filtered = [ln for ln in fh if not ln.startswith("#")]
    finally:
        if close:
            fh.close()
    reader = csv.DictReader(io.StringIO("".join(filtered)))
    expected = CSV_COLUMNS.split(",")
    if reader.fieldnames is None or list(reader.fieldnames) != expected:
        raise ValueError("CSV header does not match the harness schema")
    rows = []
    for raw in reader:
        if None in raw.values() or any(v is None for v in raw.values()):
            raise ValueError("malformed CSV row")
        rows.append(raw)
    return rows


def _fit_or_none(xs, errs):
    pairs = [(x, e) for x, e in zip(xs, errs)
             if x > 0 and np.isfinite(e) and e > 0]
    if len(pairs) < 2:
        return None
    xs = [p[0] for p in pairs]
    es = [p[1] for p in pairs]
    if len(set(xs)) < 2:
        return None
    return fit_order(xs, es)


def summarize(path_or_file, out=None):
    """Print fitted convergence orders and final errors per experiment.

    Returns the summary text. Raises ValueError on malformed or empty input.
    """
    rows = read_csv(path_or_file)
    if not rows:
        raise ValueError("no data")
    lines = []
    experiments = []
    for r in rows:
        if r["experiment"] not in experiments:
            experiments.append(r["experiment"])
    for exp in experiments:
        sub = [r for r in rows if r["experiment"] == exp]
        lines.append(f"experiment {exp}:")
        adaptive = exp == "lshape_adaptive"
        levels = sorted({int(r["level"]) for r in sub})
        js = sorted({int(r["j"]) for r in sub})
        per_level_h = {lv: {float(r["h"]) for r in sub if int(r["level"]) == lv}
                       for lv in levels}
        ladder_mode = (not adaptive) and any(len(hs) > 1
                                             for hs in per_level_h.values())
        if adaptive:
            for j in js:
                pts = [(float(r["dofs_fine"]), float(r["err_lambda"]))
                       for r in sub if int(r["j"]) == j]
                order = _fit_or_none([p[0] for p in pts], [p[1] for p in pts])
                final = pts[-1][1]
                txt = f"{order:+.2f}" if order is not None else "n/a"
                lines.append(f"  j={j}: dof order {txt}, "
                             f"final err_lambda {final:.3e}")
        elif ladder_mode:
            for lv in levels:
                for j in js:
                    pts = [(float(r["h"]), float(r["err_lambda"])) for r in sub
                           if int(r["level"]) == lv and int(r["j"]) == j]
                    order = _fit_or_none([p[0] for p in pts],
                                         [p[1] for p in pts])
                    final = min((p[1] for p in pts), default=float("nan"))
                    txt = (f"{order:.2f}" if order is not None else "n/a")
                    lines.append(f"  level {lv} j={j}: h order {txt}, "
                                 f"final err_lambda {final:.3e}")
        else:
            for j in js:
                pts = [(float(r["h"]), float(r["err_lambda"])) for r in sub
                       if int(r["j"]) == j]
                order = _fit_or_none([p[0] for p in pts], [p[1] for p in pts])
                final = pts[-1][1]
                txt = f"{order:.2f}" if order is not None else "n/a"
                lines.append(f"  j={j}: h order {txt}, "
                             f"final err_lambda {final:.3e}")
    text = "\n".join(lines) + "\n"
    if out is not None:
        out.write(text)
    return text
