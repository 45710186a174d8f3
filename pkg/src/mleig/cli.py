"""Command line interface.

    mleig run CONFIG [--dump-mesh PATH] [--dump-matrix PATH]
    mleig summarize CSV

Exit codes: 0 success, 2 invalid configuration or malformed input,
3 numerical failure during a run.
"""

import argparse
import sys

from .exceptions import MleigError
from .harness import parse_config, run_experiment, summarize, write_csv
from .mesh import write_mesh_text


def write_matrix_text(matrix, path):
    """Dump a sparse matrix in coordinate text format: ``i j re im`` lines."""
    coo = matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v.real:.17g} {v.imag:.17g}\n")


def _cmd_run(args):
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        result = run_experiment(cfg)
    except MleigError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        try:
            with open(cfg.output, "a") as fh:
                fh.write(f"# error: {exc}\n")
        except OSError:
            pass
        return 3

    write_csv(result, args.output or cfg.output)
    if args.dump_mesh:
        if result.finest_mesh is None:
            print("error: run produced no mesh to dump", file=sys.stderr)
            return 2
        write_mesh_text(result.finest_mesh, args.dump_mesh)
    if args.dump_matrix:
        pencil = result.finest_pencil
        if pencil is None:
            from .fem import assemble_pencil, build_space
            from .harness import config_coefficients
            space = build_space(result.finest_mesh, cfg.degrees[0])
            pencil = assemble_pencil(space, config_coefficients(cfg))
        write_matrix_text(pencil.A_mat, args.dump_matrix)
    return 0


def _cmd_summarize(args):
    try:
        text = summarize(args.csv)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mleig",
        description="Multilevel correction solver for nonsymmetric PDE "
                    "eigenvalue problems")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment configuration")
    p_run.add_argument("config", help="path to a key = value config file")
    p_run.add_argument("--output", help="override the CSV output path")
    p_run.add_argument("--dump-mesh", metavar="PATH",
                       help="write the finest mesh in text format")
    p_run.add_argument("--dump-matrix", metavar="PATH",
                       help="write the finest interior matrix of the form "
                            "a(.,.) in 'i j re im' format")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize",
                           help="print convergence orders from a results CSV")
    p_sum.add_argument("csv", help="CSV file produced by 'mleig run'")
    p_sum.set_defaults(func=_cmd_summarize)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
