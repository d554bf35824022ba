"""Command-line interface: ``rq1 <subcommand> ...``.

Exit codes: 0 success, 1 a check failed, 2 invalid input (usage, mesh
file, configuration), 3 solver failure.
"""

import argparse
from dataclasses import dataclass, field
import json
import sys

import numpy as np

from . import analysis, vtk
from .assembly import FormKind
from .errors import (AssumptionError, ConfigurationError, MeshFormatError, RQ1Error,
                     SingularSystemError)
from .mesh import (build_topology, check_internal_edge_assumption, generate_ball_mesh,
                   generate_box_mesh, read_mesh, write_mesh)
from .system import BoundarySpec, format_diagnostics, solve_stokes

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_SOLVE = 0, 1, 2, 3

SLOPE_L2U = (1.75, 2.25)
SLOPE_H1U = (0.8, 1.2)
SLOPE_L2P_MIN = 1.3
STABILITY_RATIO_MAX = 2.0

# Boundary condition presets; "channel" leaves the x1 = max face natural.
BC_PRESETS = ("dirichlet", "channel")


@dataclass
class RunConfig:
    subcommand: str
    form: FormKind = FormKind.B_CONSISTENT
    operator: FormKind = FormKind.LAPLACIAN
    bc: str = "dirichlet"
    levels: int = 3
    domain: str = "box"
    out: str = None
    json: bool = False
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.form = FormKind(self.form)
        self.operator = FormKind(self.operator)
        if self.bc not in BC_PRESETS:
            raise ConfigurationError(f"unknown boundary preset {self.bc!r}")
        if self.form is FormKind.B_CONSISTENT and self.has_natural_boundary:
            raise ConfigurationError(
                "form b requires Dirichlet data on the whole boundary; "
                "use --form btilde with a natural outflow boundary"
            )

    @property
    def has_natural_boundary(self):
        return self.subcommand == "poiseuille" or self.bc == "channel"


# --------------------------------------------------------------------------
# Helpers.

def _emit(cfg, payload, text_lines):
    if cfg.json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=float))
    else:
        for line in text_lines:
            print(line)


def _convergence_meshes(levels, domain):
    if domain == "ball":
        return [generate_ball_mesh(1.0, r) for r in range(levels)]
    return [generate_box_mesh((1.0, 1.0, 1.0), (2**k,) * 3, origin=(-0.5, -0.5, -0.5))
            for k in range(1, levels + 1)]


def infsup_meshes(levels):
    """Unit-box meshes with n = 3, 4, ..., levels + 2 subdivisions per axis."""
    return [generate_box_mesh((1.0, 1.0, 1.0), (n,) * 3) for n in range(3, levels + 3)]


def slopes_ok(slopes):
    s_u, s_h1, s_p = slopes
    return (SLOPE_L2U[0] <= s_u <= SLOPE_L2U[1] and SLOPE_H1U[0] <= s_h1 <= SLOPE_H1U[1]
            and s_p >= SLOPE_L2P_MIN)


# --------------------------------------------------------------------------
# Subcommands.

def cmd_verify_element(cfg):
    constant = cfg.options.get("combined_constant") or analysis.COMBINED_CONSTANT
    results = analysis.run_verification_suite(combined_constant=constant)
    ok = all(passed for _, passed in results.values())
    _emit(cfg, {"passed": ok, "checks": {k: {"deviation": d, "passed": p} for k, (d, p) in results.items()}},
          [f"{'PASS' if p else 'FAIL'} {k} max_deviation={d:.3e}" for k, (d, p) in results.items()]
          + [f"verify-element: {'all checks passed' if ok else 'FAILED'}"])
    return EXIT_OK if ok else EXIT_CHECK


def cmd_convergence(cfg):
    meshes = _convergence_meshes(cfg.levels, cfg.domain)
    table = analysis.run_convergence_study(analysis.cubic_case(cfg.domain), meshes, cfg.form, cfg.operator)
    if cfg.options.get("no_timing"):
        for row in table.rows:
            row.seconds = 0.0
    csv = table.to_csv()
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(csv)
    if table.error is not None:
        print(f"error: solver failed after {len(table.rows)} levels: {table.error}", file=sys.stderr)
        return EXIT_SOLVE
    finest = table.finest_slopes()
    ok = slopes_ok(finest)
    lines = ([] if cfg.out else [csv.rstrip()]) + [
        "boundary pressure L2 error per level: "
        + " ".join(format(r.eL2p_boundary, ".6e") for r in table.rows),
        "finest-pair slopes: eL2u={:.3f} eH1u={:.3f} eL2p={:.3f}".format(*finest),
        f"convergence: {'PASS' if ok else 'FAIL'}",
    ]
    _emit(cfg, {"passed": ok, "slopes": table.slopes(),
                "rows": [vars(r) for r in table.rows]}, lines)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_infsup(cfg):
    if cfg.options.get("mesh_paths"):
        meshes = [read_mesh(p) for p in cfg.options["mesh_paths"]]
    else:
        meshes = infsup_meshes(cfg.levels)
    betas = []
    for mesh in meshes:
        try:
            betas.append((mesh.h, analysis.estimate_infsup(mesh, cfg.form)))
        except AssumptionError as exc:
            print(f"error: internal-edge assumption violated: {exc}", file=sys.stderr)
            return EXIT_CHECK
    vals = np.array([b for _, b in betas])
    ok = bool(np.all(vals > 0) and vals.max() / vals.min() <= STABILITY_RATIO_MAX)
    csv = "h,beta\n" + "".join(f"{h:.17g},{b:.17g}\n" for h, b in betas)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(csv)
    _emit(cfg, {"passed": ok, "h": [h for h, _ in betas], "beta": vals.tolist()},
          [csv.rstrip(), f"max/min = {vals.max() / vals.min():.4f}", f"infsup: {'PASS' if ok else 'FAIL'}"])
    return EXIT_OK if ok else EXIT_CHECK


def cmd_poiseuille(cfg):
    sub = tuple(cfg.options.get("subdivisions") or analysis.POISEUILLE_SUBDIVISIONS)
    rep = analysis.run_poiseuille(cfg.operator, sub)
    if cfg.out:
        vtk.write_solution(cfg.out, rep.solution)
    payload = {"operator": rep.operator, "inflow": rep.inflow, "outflow": rep.outflow,
               "flux_balance": rep.flux_balance, "symmetry_defect": rep.symmetry_defect,
               "monotone_pressure": rep.monotone_pressure, "pressure_integral": rep.pressure_integral,
               "passed": rep.passed}
    _emit(cfg, payload, [
        f"operator={rep.operator}",
        f"inflow_flux={rep.inflow:.12g}",
        f"outflow_flux={rep.outflow:.12g}",
        f"flux_balance={rep.flux_balance:.3e}",
        f"symmetry_defect={rep.symmetry_defect:.3e}",
        f"pressure_monotone={rep.monotone_pressure}",
        f"pressure_integral={rep.pressure_integral:.12g}",
        f"poiseuille: {'PASS' if rep.passed else 'FAIL'}",
    ])
    return EXIT_OK if rep.passed else EXIT_CHECK


def _zero_case():
    def u(x):
        return np.zeros((len(x), 3))

    def grad_u(x):
        return np.zeros((len(x), 3, 3))

    def p(x):
        return np.zeros(len(x))

    return analysis.ManufacturedCase("zero", u, grad_u, p, u)


def cmd_solve(cfg):
    mesh = read_mesh(cfg.options["mesh_path"])
    name = cfg.options.get("case", "cubic")
    case = _zero_case() if name == "zero" else analysis.CASES[name]()
    if cfg.bc == "channel":
        xmax = mesh.vertices[:, 0].max()
        boundary = BoundarySpec([])
        boundary.add(lambda x: np.abs(x[:, 0] - xmax) > 1e-9, (0, 1, 2), case.u)
        mean = False
    else:
        boundary = BoundarySpec.full(case.u)
        mean = True
    sol = solve_stokes(mesh, boundary, case.f, cfg.form, cfg.operator, mean_constraint=mean)
    errs = analysis.error_norms(sol, case, pressure_modulo_constant=mean)
    if cfg.out:
        vtk.write_solution(cfg.out, sol)
    payload = {"diagnostics": sol.diagnostics,
               "errors": {"eL2u": errs[0], "eH1u": errs[1], "eL2p": errs[2]}}
    _emit(cfg, payload, [format_diagnostics(sol.diagnostics).rstrip(),
                         f"eL2u={errs[0]:.17g}", f"eH1u={errs[1]:.17g}", f"eL2p={errs[2]:.17g}"])
    return EXIT_OK


def cmd_mesh(cfg):
    o = cfg.options
    if cfg.domain == "ball":
        mesh = generate_ball_mesh(o.get("radius") or 1.0, o.get("refinement") or 0)
    else:
        mesh = generate_box_mesh(tuple(o.get("extent") or (1.0, 1.0, 1.0)),
                                 tuple(o.get("subdivisions") or (2, 2, 2)),
                                 tuple(o.get("origin") or (0.0, 0.0, 0.0)))
    if cfg.out:
        write_mesh(cfg.out, mesh)
    report = check_internal_edge_assumption(mesh)
    _emit(cfg, {"vertices": mesh.n_vertices, "cells": mesh.n_cells, "edges": mesh.n_edges,
                "h": mesh.h, "internal_edge_assumption": report.passed},
          [f"vertices={mesh.n_vertices}", f"cells={mesh.n_cells}", f"edges={mesh.n_edges}",
           f"h={mesh.h:.17g}", f"internal_edge_assumption={'ok' if report.passed else 'violated'}"])
    return EXIT_OK


COMMANDS = {
    "verify-element": cmd_verify_element,
    "convergence": cmd_convergence,
    "infsup": cmd_infsup,
    "poiseuille": cmd_poiseuille,
    "solve": cmd_solve,
    "mesh": cmd_mesh,
}


# --------------------------------------------------------------------------
# Parsing.

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="rq1", description="Rotated-Q1 tetrahedral Stokes solver")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, form_default="b"):
        p.add_argument("--form", choices=["b", "btilde"], default=form_default)
        p.add_argument("--operator", choices=["laplacian", "strain"], default="laplacian")
        p.add_argument("--out", help="output path (CSV, VTK prefix or mesh file)")
        p.add_argument("--json", action="store_true", help="machine-readable report")

    p = sub.add_parser("verify-element", help="element and reference-cell identity checks")
    p.add_argument("--json", action="store_true")
    p.add_argument("--inject-combined-constant", type=float, help=argparse.SUPPRESS)

    p = sub.add_parser("convergence", help="manufactured-solution convergence study")
    common(p)
    p.add_argument("--levels", type=_positive_int, default=4)
    p.add_argument("--domain", choices=["box", "ball"], default="box")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")

    p = sub.add_parser("infsup", help="discrete inf-sup constants")
    common(p)
    p.add_argument("--levels", type=_positive_int, default=3)
    p.add_argument("--mesh", action="append", dest="mesh_paths", help="use mesh file(s) instead")

    p = sub.add_parser("poiseuille", help="channel flow with natural outflow")
    common(p, form_default="btilde")
    p.add_argument("--subdivisions", type=_positive_int, nargs=3)

    p = sub.add_parser("solve", help="solve a manufactured case on a mesh file")
    common(p)
    p.add_argument("--mesh", required=True, dest="mesh_path")
    p.add_argument("--case", choices=sorted(analysis.CASES) + ["zero"], default="cubic")
    p.add_argument("--bc", choices=BC_PRESETS, default="dirichlet")

    p = sub.add_parser("mesh", help="generate a mesh and write it in rq1mesh format")
    p.add_argument("--domain", choices=["box", "ball"], default="box")
    p.add_argument("--subdivisions", type=_positive_int, nargs=3)
    p.add_argument("--extent", type=float, nargs=3)
    p.add_argument("--origin", type=float, nargs=3)
    p.add_argument("--radius", type=float)
    p.add_argument("--refinement", type=int)
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    return parser


def config_from_args(args):
    ns = vars(args).copy()
    kwargs = {"subcommand": ns.pop("subcommand")}
    for key in ("form", "operator", "bc", "levels", "domain", "out", "json"):
        if key in ns and ns[key] is not None:
            kwargs[key] = ns.pop(key)
        else:
            ns.pop(key, None)
    if ns.pop("inject_combined_constant", None) is not None:
        ns["combined_constant"] = args.inject_combined_constant
    return RunConfig(options=ns, **kwargs)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "convergence" and args.levels < 3:
        parser.error("convergence needs --levels >= 3")
    try:
        cfg = config_from_args(args)
    except ConfigurationError as exc:
        parser.error(str(exc))
    try:
        return COMMANDS[cfg.subcommand](cfg)
    except (MeshFormatError, ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SingularSystemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    except RQ1Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
