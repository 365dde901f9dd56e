"""mcw command line.

Exit codes: 0 success, 1 invalid input, 2 numerical failure. Errors go to stderr
as a single ``mcw: error: <Kind>: <message>`` line.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import clt, exact, landscape, sampler, variational
from .errors import McwError, ValidationError
from .model import finite_sizes, load_model, log2_counting_offset

LOG2 = math.log(2.0)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def fmt(x) -> str:
    """Float with 17 significant digits; non-finite values spelled out."""
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = f"{x:.17g}"
    return s if any(c in s for c in ".en") else s + ".0"


def to_json(obj, indent=2, _level=0) -> str:
    """Deterministic JSON with every float at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{to_json(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist(), indent, _level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = fmt(obj)
        return v if math.isfinite(obj) else f'"{v}"'
    s = str(obj)
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class Output:
    def __init__(self, out_dir):
        self.dir = Path(out_dir) if out_dir else None
        if self.dir is not None:
            try:
                self.dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ValidationError(f"cannot create output directory {self.dir}: {exc}") from None
            if not os.access(self.dir, os.W_OK):
                raise ValidationError(f"output directory {self.dir} is not writable")

    def emit(self, text, name=None, explicit=None):
        """Write to ``explicit`` path, else ``out_dir/name``, else stdout."""
        target = None
        if explicit:
            target = Path(explicit)
            if self.dir is not None and not target.is_absolute():
                target = self.dir / target
        elif self.dir is not None and name:
            target = self.dir / name
        if target is None:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
        else:
            target.write_text(text if text.endswith("\n") else text + "\n")
        return target


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("N values must be positive")
    return vals


def float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def parse_box(text, K):
    """``[-1:0),(0:1]``: one interval per species, comma separated."""
    parts = [p for p in text.split(",") if p.strip()]
    box = tuple(exact.parse_interval(p) for p in parts)
    if len(box) != K:
        raise ValidationError(f"box {text!r} has {len(box)} intervals, expected K={K}")
    return box


def build_parser():
    p = Parser(prog="mcw", description="Multi-species mean-field Ising: pressure, landscape, CLT.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model JSON file")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--threads", type=int, help="thread budget (default: $MCW_THREADS or all cores)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded reductions, fixed seeds")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    sub.add_parser("pressure", parents=[common], help="limiting pressure by inf-sup")

    s = sub.add_parser("landscape", parents=[common], help="stationary points of f")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--grid", type=int, default=7, help="seed grid points per axis")

    s = sub.add_parser("clt", parents=[common], help="predicted CLT parameters")
    s.add_argument("--box", action="append", help="conditioning box, e.g. '[-1:0)'; repeat per maximizer")

    s = sub.add_parser("exact", parents=[common], help="exact sector enumeration")
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--tilt", type=float_list)
    s.add_argument("--box")
    s.add_argument("--emit", help="write the sector law CSV here")
    s.add_argument("--budget", type=float, default=exact.DEFAULT_BUDGET)

    s = sub.add_parser("sample", parents=[common], help="Glauber Monte Carlo")
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--chains", type=int, default=4)
    s.add_argument("--sweeps", type=int, default=10_000)
    s.add_argument("--burn-in", type=int, default=1_000)
    s.add_argument("--thinning", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init", default="Random",
                   help="Random, AllUp or AllDown; a comma list is cycled over chains")
    s.add_argument("--box")
    s.add_argument("--emit", help="write samples CSV here")

    s = sub.add_parser("verify", parents=[common], help="CLT verification report")
    s.add_argument("--N", type=int_list, required=True)
    s.add_argument("--source", choices=("exact", "sampler"), default="exact")
    s.add_argument("--box")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sweeps", type=int, default=20_000)
    s.add_argument("--mean-tol", type=float, default=clt.Tolerances.mean)
    s.add_argument("--cov-tol", type=float, default=clt.Tolerances.cov)
    s.add_argument("--mgf-tol", type=float, default=clt.Tolerances.mgf)
    s.add_argument("--emit", help="write the CSV report here")

    s = sub.add_parser("report", parents=[common], help="full pipeline as one JSON summary")
    s.add_argument("--N", type=int_list, default=[100, 200, 400])
    return p


def threads_of(args):
    if args.deterministic:
        return 1
    if args.threads is not None:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        return args.threads
    env = os.environ.get("MCW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"MCW_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def pressure_doc(spec):
    res = variational.infsup_solve(spec)
    doc = {
        "value_prior": res.value,
        "value_counting": res.value + LOG2 if spec.is_ising else None,
        "saddle": res.to_dict(),
        "ising_cross_check": None,
    }
    if spec.is_ising:
        fmax = landscape.max_f(spec)
        doc["ising_cross_check"] = {"max_f": fmax, "difference": res.value + LOG2 - fmax}
    return doc


def landscape_doc(spec, grid=7):
    pts = landscape.find_all_stationary(spec, grid)
    mset = landscape.maximizers_from(pts)
    return {
        "stationary_points": [p.to_dict() for p in pts],
        "n_maxima": sum(p.kind is landscape.Kind.MAXIMUM for p in pts),
        "global_maximizers": [p.x.tolist() for p in mset.points],
        "f_max": mset.f_max,
        "degenerate": mset.degenerate,
    }


def clt_doc(spec, boxes=None):
    mset = landscape.global_maximizers(spec)
    if boxes:
        params = clt.conditional_clt_params(spec, mset, boxes)
    else:
        params = [clt.clt_params(spec, mset.unique())]
    return {"params": [q.to_dict() for q in params]}


def cmd_pressure(args, spec, out):
    out.emit(to_json(pressure_doc(spec)), "pressure.json")


def cmd_landscape(args, spec, out):
    doc = landscape_doc(spec, args.grid)
    if args.format == "json":
        out.emit(to_json(doc), "landscape.json")
        return
    K = spec.K
    header = [f"x_{l + 1}" for l in range(K)] + ["f", "kind", "grad_norm", "min_hess_eig", "basin_seed_count"]
    rows = []
    for p in landscape.find_all_stationary(spec, args.grid):
        rows.append([*map(float, p.x), p.f_value, p.kind.value, p.grad_norm, p.min_hess_eig, p.basin_seed_count])
    out.emit(csv_text(header, rows), "landscape.csv")


def cmd_clt(args, spec, out):
    boxes = [parse_box(b, spec.K) for b in args.box] if args.box else None
    out.emit(to_json(clt_doc(spec, boxes)), "clt.json")


def cmd_exact(args, spec, out, threads):
    N = args.N
    sizes = finite_sizes(spec, N)
    law = exact.sector_law(spec, N, args.tilt, sizes=sizes, budget=int(args.budget), threads=threads)
    doc = {
        "N": N,
        "sizes": list(sizes.sizes),
        "tilt": law.t.tolist(),
        "log_Z": law.log_Z,
        "pressure": law.log_Z / N,
        "pressure_prior": law.log_Z / N - log2_counting_offset(sizes),
    }
    try:
        lap = exact.laplace_log_Z(spec, N, args.tilt, sizes=sizes)
        doc["laplace"] = {"log_Z_estimate": lap.log_Z_estimate, "error": lap.log_Z_estimate - law.log_Z,
                          "mu_Nt": lap.mu_Nt.tolist(), "note": lap.error_order_note}
    except McwError as exc:
        doc["laplace"] = {"unavailable": str(exc)}
    lo, hi = exact.pressure_bracket(spec, sizes)
    fmax = landscape.max_f(spec, alpha=sizes.alpha_N)
    doc["bracket"] = {"max_f_N": fmax, "gap": law.log_Z / N - fmax, "lower": lo, "upper": hi}
    if args.box:
        box = parse_box(args.box, spec.K)
        doc["box"] = [str(iv) for iv in box]
        doc["box_mass"] = exact.box_mass(law, box)
        law = exact.conditional_law(law, box)
    mom = exact.moments(law)
    doc["mean"] = mom.mean.tolist()
    doc["cov"] = mom.cov.tolist()
    out.emit(to_json(doc), "exact.json")
    if args.emit:
        header = [f"m_{l + 1}" for l in range(spec.K)] + ["log_weight", "probability"]
        p = law.probabilities()
        rows = []
        for idx in np.ndindex(law.grid.shape):
            if p[idx] > 0.0:
                rows.append([*(float(law.grid.values[l][i]) for l, i in enumerate(idx)),
                             float(law.log_weights[idx]), float(p[idx])])
        out.emit(csv_text(header, rows), explicit=args.emit)


def cmd_sample(args, spec, out, threads):
    sizes = finite_sizes(spec, args.N)
    kinds = [k.strip() for k in args.init.split(",") if k.strip()]
    if not kinds or any(k not in ("Random", "AllUp", "AllDown") for k in kinds):
        raise ValidationError(f"--init must list Random, AllUp or AllDown, got {args.init!r}")
    inits = [sampler.Init(kinds[c % len(kinds)]) for c in range(max(args.chains, 1))]
    cfg = sampler.ChainConfig(args.N, args.seed, args.burn_in, args.sweeps, args.thinning, inits[0])
    box = parse_box(args.box, spec.K) if args.box else None
    res = sampler.multichain(spec, sizes, cfg, args.chains, box=box, inits=inits[: args.chains], threads=threads)
    pooled = res.pooled
    doc = {
        "N": args.N,
        "sizes": list(sizes.sizes),
        "chains": args.chains,
        "samples": int(len(pooled)),
        "rhat": res.rhat_report(),
        "mean": pooled.mean(axis=0).tolist(),
        "cov": np.atleast_2d(np.cov(pooled, rowvar=False)).tolist(),
    }
    out.emit(to_json(doc), "sample.json")
    if args.emit:
        header = ["chain"] + [f"m_{l + 1}" for l in range(spec.K)]
        rows = [[c, *map(float, row)] for c, s in enumerate(res.chains) for row in s]
        out.emit(csv_text(header, rows), explicit=args.emit)


def verify_rows(spec, N_list, source="exact", box=None, tol=clt.Tolerances(), threads=1, sampler_opts=None):
    return clt.verify_clt(spec, N_list, source=source, box=box, tolerances=tol, threads=threads,
                          sampler_opts=sampler_opts)


def cmd_verify(args, spec, out, threads):
    box = parse_box(args.box, spec.K) if args.box else None
    tol = clt.Tolerances(args.mean_tol, args.cov_tol, args.mgf_tol)
    opts = {"seed": args.seed, "sample_sweeps": args.sweeps, "threads": threads}
    rows = verify_rows(spec, args.N, args.source, box, tol, threads, opts)
    header = ["N"] + [f"mean_err_{l + 1}" for l in range(spec.K)] + ["cov_rel_err", "mgf_err", "status"]
    body = [[r.N, *map(float, r.mean_err), r.cov_rel_err, r.mgf_err, "PASS" if r.passed else "FAIL"] for r in rows]
    out.emit(csv_text(header, body), "verify.csv", args.emit)


def _section(fn):
    try:
        return fn(), None
    except McwError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def report_doc(spec, N_list, threads=1):
    from . import __version__

    doc = {"version": __version__, "model": spec.to_dict(), "errors": {}}
    for name, fn in (
        ("pressure", lambda: pressure_doc(spec)),
        ("landscape", lambda: landscape_doc(spec)),
        ("clt", lambda: clt_doc(spec)),
    ):
        doc[name], err = _section(fn)
        if err:
            doc["errors"][name] = err

    def exact_section():
        rows = []
        for N in N_list:
            sizes = finite_sizes(spec, N)
            law = exact.sector_law(spec, N, sizes=sizes, threads=threads)
            fmax = landscape.max_f(spec, alpha=sizes.alpha_N)
            lo, hi = exact.pressure_bracket(spec, sizes)
            rows.append({"N": N, "log_Z": law.log_Z, "pressure": law.log_Z / N, "max_f_N": fmax,
                         "gap": law.log_Z / N - fmax, "lower": lo, "upper": hi})
        return rows

    doc["exact"], err = _section(exact_section)
    if err:
        doc["errors"]["exact"] = err
    if spec.is_ising and doc["clt"] is not None:
        vr, err = _section(lambda: [r.to_dict() for r in verify_rows(spec, N_list, threads=threads)])
    else:
        vr, err = None, (doc["errors"].get("clt") or "verification needs the Ising prior")
    doc["verify"] = vr
    if err:
        doc["errors"]["verify"] = err
    return doc


def cmd_report(args, spec, out, threads):
    out.emit(to_json(report_doc(spec, args.N, threads)), "report.json")


# --------------------------------------------------------------------------


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = threads_of(args)
        spec = load_model(args.model)
        out = Output(args.out)
        cmd = args.command
        if cmd == "pressure":
            cmd_pressure(args, spec, out)
        elif cmd == "landscape":
            cmd_landscape(args, spec, out)
        elif cmd == "clt":
            cmd_clt(args, spec, out)
        elif cmd == "exact":
            cmd_exact(args, spec, out, threads)
        elif cmd == "sample":
            cmd_sample(args, spec, out, threads)
        elif cmd == "verify":
            cmd_verify(args, spec, out, threads)
        else:
            cmd_report(args, spec, out, threads)
    except McwError as exc:
        print(f"mcw: error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"mcw: error: ValidationError: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
