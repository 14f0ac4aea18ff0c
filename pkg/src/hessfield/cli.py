"""Command-line front end.

Every job writes ``report.json`` into the output directory, even on failure,
with a ``status`` field. Exit codes: 0 all invariants hold, 2 invariant
violation, 3 precondition error, 4 malformed job, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import re
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import fixtures
from .domain import Domain, MatrixField, ToleranceField, build_grid, build_sphere
from .errors import CertificationError, FormatError, InvariantViolation, PreconditionError
from .linalg import classify_BH, dag, h_margins, opnorm, unitarity_defect
from .operators import OperatorField, operator_reduce
from .projections import (ProjectionField, default_projection_epsilon, gamma_of_dim,
                          projection_reduce, trivial_summand)
from .reduction import Q_MODES, check_reduction, hessenberg_summary, struc_decompose
from .serialization import (as_float, dump, dumps, field_document, load, read_field_document,
                            values_from_dict, domain_from_dict)
from .spectra import separate_dim2, separate_dim4, separation_report

COMMANDS = ("reduce", "separate", "struc", "project-reduce", "sections", "operator-reduce", "verify")
EXIT_OK, EXIT_INVARIANT, EXIT_PRECONDITION, EXIT_MALFORMED, EXIT_IO = 0, 2, 3, 4, 5
STATUS = {EXIT_OK: "pass", EXIT_INVARIANT: "invariant-violation",
          EXIT_PRECONDITION: "precondition-error", EXIT_MALFORMED: "malformed-job",
          EXIT_IO: "io-error"}
DOMAIN_BUILTINS = {"grid": ("d", "r"), "sphere": ("k", "r")}
FIELD_BUILTINS = {"bott": ("copies", "pad"), "zero": ("n",), "random-hermitian": ("n", "seed"),
                  "shift": ("n",)}


class MalformedJob(Exception):
    pass


@dataclass
class JobSpec:
    command: str
    domain: dict | None = None
    field: dict | None = None
    epsilon: float | list | None = None
    seed: int = 0
    output: str = "."
    tolerance_scale: float = 1.0
    threads: int | None = None
    options: dict = dc_field(default_factory=dict)

    def echo(self) -> dict:
        """Job description stored in the report (output location excluded)."""
        return {"command": self.command, "domain": self.domain, "field": self.field,
                "epsilon": self.epsilon, "seed": self.seed,
                "tolerance_scale": self.tolerance_scale, "options": self.options}


# ------------------------------------------------------------------ parsing


def _scalar(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_builtin(text: str, table: dict) -> dict:
    """Parse ``name(a, b)``, ``name(key=v)`` or ``name:key=v,...`` into a spec dict."""
    text = text.strip()
    m = re.fullmatch(r"([a-z\-]+)\s*(?:\((.*)\)|:(.*))?", text)
    if not m:
        raise MalformedJob(f"cannot parse builtin {text!r}")
    name, args = m.group(1), m.group(2) if m.group(2) is not None else m.group(3)
    if name not in table:
        raise MalformedJob(f"unknown builtin {name!r}; expected one of {sorted(table)}")
    spec = {"builtin": name}
    if args:
        pos = 0
        for part in (p.strip() for p in args.split(",") if p.strip()):
            if "=" in part:
                key, val = (s.strip() for s in part.split("=", 1))
            else:
                if pos >= len(table[name]):
                    raise MalformedJob(f"too many positional arguments for {name}")
                key, val = table[name][pos], part
                pos += 1
            if key not in table[name]:
                raise MalformedJob(f"unknown parameter {key!r} for {name}")
            spec[key] = _scalar(val)
    return spec


def build_domain(spec: dict) -> Domain:
    if "vertices" in spec:
        return domain_from_dict(spec)
    name = spec.get("builtin")
    try:
        if name == "grid":
            return build_grid(int(spec["d"]), int(spec.get("r", 1)))
        if name == "sphere":
            return build_sphere(int(spec["k"]), int(spec["r"]))
    except KeyError as exc:
        raise MalformedJob(f"domain spec missing {exc}") from exc
    raise MalformedJob(f"unknown domain spec {spec!r}")


def build_field(spec: dict, domain: Domain, seed: int) -> MatrixField:
    if "values" in spec:
        return MatrixField(domain, values_from_dict(spec))
    name = spec.get("builtin")
    try:
        if name == "bott":
            return fixtures.bott_sum(domain, int(spec.get("copies", 1)), int(spec.get("pad", 0)))
        if name == "zero":
            return fixtures.zero_field(domain, int(spec["n"]))
        if name == "random-hermitian":
            return fixtures.random_hermitian_field(domain, int(spec["n"]), int(spec.get("seed", seed)))
        if name == "shift":
            return fixtures.shift_field(domain, int(spec["n"]))
    except KeyError as exc:
        raise MalformedJob(f"field spec missing {exc}") from exc
    raise MalformedJob(f"unknown field spec {spec!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise MalformedJob(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hessfield", description="Continuous Hessenberg reduction of matrix fields.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--job", help="JSON job specification")
    p.add_argument("--input", help="JSON field document (domain + field); for verify, a fields.json output")
    p.add_argument("--claims", help="verify: report.json to re-check")
    p.add_argument("--output", default=None, help="output directory (default: current)")
    p.add_argument("--domain", help="builtin domain, e.g. 'sphere(2, 8)' or 'grid:d=2,r=4'")
    p.add_argument("--field", help="builtin field, e.g. 'bott', 'random-hermitian(n=5, seed=1)'")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--tolerance-scale", type=float, default=None)
    p.add_argument("--q-mode", choices=Q_MODES, default=None)
    p.add_argument("--K", type=int, default=None, help="operator-reduce: iteration count")
    p.add_argument("--N", type=int, default=None, help="operator-reduce: truncation size")
    return p


def job_from_args(argv) -> JobSpec:
    args = make_parser().parse_args(argv)
    job = JobSpec(args.command)
    if args.job:
        try:
            doc = load(args.job)
        except ValueError as exc:
            raise MalformedJob(f"job file does not parse: {exc}") from exc
        if not isinstance(doc, dict):
            raise MalformedJob("job file must hold a JSON object")
        if doc.get("command", args.command) != args.command:
            raise MalformedJob("job file command disagrees with the command line")
        known = {"command", "domain", "field", "epsilon", "seed", "output",
                 "tolerance_scale", "threads", "options"}
        extra = set(doc) - known
        if extra:
            raise MalformedJob(f"unknown job keys {sorted(extra)}")
        for key in known - {"command"}:
            if key in doc:
                setattr(job, key, doc[key])
        for key in ("domain", "field"):
            val = getattr(job, key)
            if isinstance(val, str):
                setattr(job, key, parse_builtin(val, DOMAIN_BUILTINS if key == "domain" else FIELD_BUILTINS))
    if args.input:
        job.options["input"] = args.input
    if args.claims:
        job.options["claims"] = args.claims
    if args.domain:
        job.domain = parse_builtin(args.domain, DOMAIN_BUILTINS)
    if args.field:
        job.field = parse_builtin(args.field, FIELD_BUILTINS)
    for key in ("seed", "epsilon", "threads", "tolerance_scale", "output"):
        val = getattr(args, key)
        if val is not None:
            setattr(job, key, val)
    for key, opt in (("q_mode", "q_mode"), ("K", "K"), ("N", "N")):
        val = getattr(args, key)
        if val is not None:
            job.options[opt] = val
    validate(job)
    return job


def validate(job: JobSpec) -> None:
    if job.command not in COMMANDS:
        raise MalformedJob(f"unknown command {job.command!r}")
    try:
        job.seed = int(job.seed)
        job.tolerance_scale = float(job.tolerance_scale)
    except (TypeError, ValueError) as exc:
        raise MalformedJob(str(exc)) from exc
    if not 0 <= job.seed < 2 ** 64:
        raise MalformedJob("seed must be an unsigned 64-bit integer")
    if not job.tolerance_scale > 0:
        raise MalformedJob("tolerance scale must be positive")
    if job.threads is not None and int(job.threads) < 1:
        raise MalformedJob("threads must be at least 1")
    if job.command == "verify":
        if "input" not in job.options or "claims" not in job.options:
            raise MalformedJob("verify needs --input and --claims")
        return
    if "input" not in job.options and (job.domain is None or job.field is None):
        raise MalformedJob("need --input, or both a domain and a field")
    if job.epsilon is not None:
        eps = np.asarray(job.epsilon, dtype=float)
        if eps.ndim > 1 or not np.all(np.isfinite(eps)):
            raise MalformedJob("epsilon must be a number or a per-vertex list")


def load_inputs(job: JobSpec) -> tuple[Domain, MatrixField]:
    if "input" in job.options:
        doc = load(job.options["input"])
        domain, f = read_field_document(doc)
        if "support" in doc and job.command == "operator-reduce":
            f = OperatorField(domain, f.values, support=int(doc["support"]))
        return domain, f
    domain = build_domain(job.domain)
    return domain, build_field(job.field, domain, job.seed)


def _eps(job: JobSpec, domain: Domain, default: float) -> np.ndarray:
    eps = default if job.epsilon is None else job.epsilon
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (domain.n_vertices,)).copy()
    if np.any(eps <= 0):
        raise PreconditionError("epsilon must be strictly positive")
    return eps


# ---------------------------------------------------------------- commands


def _reduce(job, domain, f):
    eps = _eps(job, domain, 0.1)
    res = hessenberg_summary(f, eps, job.seed)
    rep = res.report(job.tolerance_scale)
    fields = field_document(domain, res.g, kind="reduce", f=res.f, u=res.u, h=res.h,
                            k=res.k_achieved, epsilon=eps)
    return rep, rep["invariants"]["passed"], fields, {}


def _separate(job, domain, f):
    eps = _eps(job, domain, 0.1)
    d = domain.d
    if d <= 2:
        g, sep = separate_dim2(f, eps, job.seed, job.tolerance_scale)
        target, max_pairs = f.n, 0
    else:
        g, sep = separate_dim4(f, eps, job.seed, job.tolerance_scale)
        target, max_pairs = f.n - 1, 1
    summary = sep.to_dict()
    checks = {"distinct": sep.distinct_count_min >= target,
              "pairs": sep.clusters_gt1_max <= max_pairs,
              "budget": sep.budget_ok,
              "hermitian": sep.hermitian_gap <= 1e-12 * job.tolerance_scale
              * max(1.0, float(opnorm(f.values).max()))}
    if target == f.n:
        checks["gap_positive"] = summary["gap_min"] > 0 or f.n == 1
    rep = {"separation": summary, "target_distinct": target,
           "invariants": {"passed": all(checks.values()), "checks": checks}}
    fields = field_document(domain, g, kind="separate", f=f, epsilon=eps,
                            target_distinct=target, max_pairs=max_pairs)
    return rep, all(checks.values()), fields, {"separation.csv": sep.to_csv()}


def _struc(job, domain, f):
    eps = _eps(job, domain, 0.1)
    mode = job.options.get("q_mode", "rank2-traceless")
    if mode not in Q_MODES:
        raise MalformedJob(f"q mode must be one of {Q_MODES}")
    dec = struc_decompose(f, eps, mode, job.seed)
    inv = dec.invariants()
    red = dec.reduction
    red_inv = red.invariants(job.tolerance_scale)
    rep = {"q_mode": mode, "k": dec.k, "c": dec.c, "decomposition": inv, "reduction": red_inv,
           "invariants": {"passed": inv["passed"] and red_inv["passed"]}}
    fields = field_document(domain, red.g, kind="reduce", f=red.f, u=red.u, h=red.h,
                            k=red.k_achieved, epsilon=eps, q=dec.q, r=dec.r)
    return rep, rep["invariants"]["passed"], fields, {}


def _project_reduce(job, domain, f):
    p = ProjectionField.from_field(f)
    eps = default_projection_epsilon(p.n) if job.epsilon is None else float(np.min(job.epsilon))
    red = projection_reduce(p, job.seed, eps)
    inv = red.invariants(job.tolerance_scale)
    rep = {"c": red.c, "epsilon": eps, "invariants": inv,
           "descriptors": [d.to_dict() for d in red.descriptors]}
    fields = field_document(domain, red.q, kind="project-reduce", p=p, u=red.u,
                            k=p.n - red.c, ranks=p.ranks)
    rows = ["vertex,block_profile,spectral_gap,conjugation_error"]
    rows += [f"{v},{'-'.join(map(str, d.block_sizes))},{float(g)!r},{float(c)!r}"
             for v, (d, g, c) in enumerate(zip(red.descriptors, red.spectral_gap,
                                                red.conjugation_error))]
    return rep, inv["passed"], fields, {"descriptors.csv": "\n".join(rows) + "\n"}


def _sections(job, domain, f):
    p = ProjectionField.from_field(f)
    bundle = trivial_summand(p, job.seed)
    inv = bundle.invariants(job.tolerance_scale)
    rep = {"gamma": gamma_of_dim(domain.d), "b": p.b, "invariants": inv}
    fields = field_document(domain, p, kind="sections", sections=np.transpose(bundle.sections, (1, 0, 2)))
    return rep, inv["passed"], fields, {"margins.csv": bundle.margins_csv()}


def _operator_reduce(job, domain, f):
    eps = _eps(job, domain, 0.1)
    if isinstance(f, OperatorField):
        op = f
    else:
        N = int(job.options.get("N", max(f.n, 32)))
        op = OperatorField.embed(f, N)
    K = int(job.options.get("K", min(10, op.N - 2 - op.support)))
    trace = operator_reduce(op, eps, K, job.seed)
    rep = trace.to_dict(job.tolerance_scale)
    fields = field_document(domain, trace.final_g, kind="operator-reduce", f=op,
                            v=dag(trace.final_u), h=trace.final_h, N=op.N,
                            support=trace.support, support_in=op.support, K=K, epsilon=eps)
    return rep, rep["invariants"]["passed"], fields, {}


# ------------------------------------------------------------------ verify


def _locate(arr: np.ndarray) -> dict:
    idx = np.unravel_index(int(np.argmax(np.abs(arr))), arr.shape)
    out = {"vertex": int(idx[0]), "value": float(np.abs(arr[idx]))}
    if len(idx) == 3:
        out["entry"] = [int(idx[1]), int(idx[2])]
    return out


def verify_documents(fields: dict, claims: dict, tolerance_scale: float = 1.0) -> dict:
    """Recompute every invariant of a stored result from its raw arrays."""
    ts = float(tolerance_scale)
    kind = fields.get("kind")
    domain, main = read_field_document(fields)
    arr = {k: values_from_dict(v) for k, v in fields.items()
           if isinstance(v, dict) and "values" in v and k != "domain"}
    checks, viol = {}, []

    def check(name, ok, where=None):
        checks[name] = bool(ok)
        if not ok:
            viol.append({"check": name, **(where or {})})

    if kind == "reduce":
        f, g, u, h = arr["f"], main.values, arr["u"], arr["h"]
        k = int(fields["k"])
        eps = np.asarray([as_float(x) for x in fields["epsilon"]])
        rep = check_reduction(f, g, u, h, k, eps, ts)
        for name, ok in rep["checks"].items():
            where = None
            if name == "conjugation":
                where = _locate(h - u @ g @ dag(u))
            elif name == "hessenberg_form":
                lower = np.tril(np.ones(h.shape[-2:]), -2)
                lower[:, k:] = 0
                where = _locate(h * lower)
            elif name == "unitarity":
                where = _locate(dag(u) @ u - np.eye(u.shape[-1]))
            elif name in ("budget", "self_adjoint_perturbation"):
                where = _locate(g - f)
            check(name, ok, where)
    elif kind == "separate":
        f = MatrixField(domain, arr["f"])
        eps = np.asarray([as_float(x) for x in fields["epsilon"]])
        sep = separation_report(f, main.values, eps, ts)
        check("distinct", sep.distinct_count_min >= int(fields["target_distinct"]))
        check("pairs", sep.clusters_gt1_max <= int(fields["max_pairs"]))
        check("budget", sep.budget_ok, _locate(main.values - f.values))
        check("hermitian", sep.hermitian_gap <= 1e-12 * ts * max(1.0, float(opnorm(f.values).max())),
              _locate(main.values - dag(main.values)))
    elif kind == "project-reduce":
        q, p, u = main.values, arr["p"], arr["u"]
        k = int(fields["k"])
        conj = u @ p @ dag(u) - q
        check("conjugation", float(opnorm(conj).max()) <= 1e-8 * ts, _locate(conj))
        check("unitary", float(unitarity_defect(u).max()) <= 1e-9 * ts)
        idem = q @ q - q
        check("idempotent", float(opnorm(idem).max()) <= 1e-9 * ts, _locate(idem))
        bad = [v for v, qv in enumerate(q) if not classify_BH(qv, k, 1e-9 * ts).member]
        check("bh_form", not bad, {"vertex": bad[0]} if bad else None)
        ranks = np.trace(q, axis1=1, axis2=2).real
        check("rank_preserved", np.all(np.abs(ranks - np.asarray(fields["ranks"])) <= 1e-6 * ts))
    elif kind == "sections":
        p, s = main.values, arr["sections"]           # s: (V, m, n)
        S = np.transpose(s, (0, 2, 1))
        res = p @ S - S
        check("in_column_space", float(np.abs(res).max(initial=0.0)) <= 1e-9 * ts, _locate(res))
        norms = np.linalg.norm(s, axis=2)
        check("norms", bool(np.all(norms >= 1 / np.sqrt(2) - 1e-9 * ts)))
        sv = np.linalg.svd(S, compute_uv=False)[:, -1] if s.shape[1] else np.array([np.inf])
        check("independent", float(sv.min()) > 0)
    elif kind == "operator-reduce":
        f, g, v, h = arr["f"], main.values, arr["v"], arr["h"]
        K = int(fields["K"])
        eps = np.asarray([as_float(x) for x in fields["epsilon"]])
        u = dag(v)
        conj = h - u @ g @ dag(u)
        scale = max(1.0, float(opnorm(f).max()))
        check("conjugation", float(np.abs(conj).max()) <= 1e-10 * ts * scale, _locate(conj))
        check("unitary", float(unitarity_defect(u).max()) <= 1e-10 * ts)
        sub, zero = h_margins(h, K)
        lower = np.tril(np.ones(h.shape[-2:]), -2)
        lower[:, K:] = 0
        check("hessenberg_columns", bool(np.all(zero <= 1e-10 * ts * scale) and np.all(sub > 0)),
              _locate(h * lower))
        delta = g - f
        check("total_budget", bool(np.all(opnorm(delta) < eps)), _locate(delta))
        check("hermitian_perturbation", float(np.abs(delta - dag(delta)).max()) <= 1e-12 * ts * scale,
              _locate(delta - dag(delta)))
        s_out = int(fields["support"])
        tail = max(np.abs(h[:, s_out:, :]).max(initial=0.0), np.abs(h[:, :, s_out:]).max(initial=0.0))
        check("support", tail <= 1e-14 * ts)
    else:
        raise PreconditionError(f"cannot verify documents of kind {kind!r}")
    passed = all(checks.values())
    claimed = claims.get("status")
    return {"kind": kind, "passed": passed, "checks": checks, "violations": viol,
            "tolerance_scale": ts, "claimed_status": claimed,
            "claims_agree": (claimed == "pass") == passed}


def _verify(job):
    fields = load(job.options["input"])
    claims = load(job.options["claims"])
    if not isinstance(fields, dict) or not isinstance(claims, dict):
        raise MalformedJob("verify inputs must be JSON objects")
    rep = verify_documents(fields, claims, job.tolerance_scale)
    return rep, rep["passed"], None, {}


HANDLERS = {"reduce": _reduce, "separate": _separate, "struc": _struc,
            "project-reduce": _project_reduce, "sections": _sections,
            "operator-reduce": _operator_reduce}


# --------------------------------------------------------------------- run


def run(job: JobSpec) -> int:
    """Execute a job, write its report files and return the exit status."""
    out = Path(job.output)
    body, fields, tables, error = None, None, {}, None
    try:
        with threadpool_limits(limits=int(job.threads) if job.threads else None):
            if job.command == "verify":
                body, ok, fields, tables = _verify(job)
            else:
                domain, f = load_inputs(job)
                body, ok, fields, tables = HANDLERS[job.command](job, domain, f)
        code = EXIT_OK if ok else EXIT_INVARIANT
    except MalformedJob as exc:
        code, error = EXIT_MALFORMED, str(exc)
    except (InvariantViolation, CertificationError) as exc:
        code, error = EXIT_INVARIANT, f"{type(exc).__name__}: {exc}"
    except FormatError as exc:
        code, error = EXIT_MALFORMED, f"{type(exc).__name__}: {exc}"
    except PreconditionError as exc:
        code, error = EXIT_PRECONDITION, f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        code, error = EXIT_IO, f"{type(exc).__name__}: {exc}"
    except ValueError as exc:
        code, error = EXIT_MALFORMED, f"{type(exc).__name__}: {exc}"
    report = {"status": STATUS[code], "exit_code": code, "job": job.echo(),
              "report": body, "error": error}
    try:
        out.mkdir(parents=True, exist_ok=True)
        dump(out / "report.json", report)
        if fields is not None:
            dump(out / "fields.json", fields)
        for name, text in tables.items():
            (out / name).write_text(text, encoding="utf-8")
    except OSError as exc:
        print(f"hessfield: cannot write reports: {exc}", file=sys.stderr)
        return EXIT_IO
    if error:
        print(f"hessfield: {STATUS[code]}: {error}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        job = job_from_args(argv)
    except MalformedJob as exc:
        # still leave a report behind when an output directory can be identified
        out = None
        if "--output" in argv:
            i = argv.index("--output")
            out = argv[i + 1] if i + 1 < len(argv) else None
        print(f"hessfield: malformed job: {exc}", file=sys.stderr)
        if out:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                dump(Path(out) / "report.json", {"status": STATUS[EXIT_MALFORMED],
                                                 "exit_code": EXIT_MALFORMED, "error": str(exc),
                                                 "job": None, "report": None})
            except OSError:
                return EXIT_IO
        return EXIT_MALFORMED
    except OSError as exc:
        print(f"hessfield: {exc}", file=sys.stderr)
        return EXIT_IO
    return run(job)


if __name__ == "__main__":
    sys.exit(main())
