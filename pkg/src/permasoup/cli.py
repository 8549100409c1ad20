"""Command-line interface.

Every command prints a JSON run report to stdout and, with ``--out-dir``,
writes it to ``report.json`` there alongside any data files. Exit status:
0 all checks pass, 2 a check failed, 3 bad input, 4 query too large.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import chain as chain_mod
from . import entropy as ent
from . import io as pio
from . import kernel as kern
from . import mcverify as mc
from . import moments as mom
from . import soup as soup_mod
from .checks import mean_check

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_CAPACITY = 0, 2, 3, 4


class Report:
    def __init__(self, command: str, config: dict):
        self.command = command
        self.config = config
        self.checks: list[dict] = []
        self.results: dict = {}
        self.files: list[str] = []

    def add(self, check) -> None:
        self.checks.append(check if isinstance(check, dict) else check.to_dict())

    @property
    def passed(self) -> bool:
        return all(bool(c.get("pass", c.get("passed", True))) for c in self.checks)

    def to_dict(self, elapsed: float | None) -> dict:
        doc = {"command": self.command, "config": self.config, "passed": self.passed,
               "checks": self.checks, "results": self.results, "files": self.files,
               "versions": {"permasoup": __version__, "numpy": np.__version__,
                            "scipy": scipy.__version__}}
        if elapsed is not None:
            doc["wall_clock_seconds"] = elapsed
        return doc


# ---------------------------------------------------------------------------
# argument helpers


def _points(text: str) -> list[str]:
    pts = [p.strip() for p in text.split(",") if p.strip()]
    if not pts:
        raise pio.InputError("--points: need at least one label")
    return pts


def _floats(text: str, name: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise pio.InputError(f"{name}: expected comma-separated numbers") from exc


def _seed(args) -> int:
    if args.seed is None:
        raise pio.InputError("--seed is required for stochastic commands")
    if not 0 <= args.seed <= 2**64 - 1:
        raise pio.InputError("--seed must be a 64-bit unsigned integer")
    return int(args.seed)


def _positive_n(value: int, name: str) -> int:
    if value < 1:
        raise pio.InputError(f"{name} must be at least 1")
    return value


def _beta(value: float) -> float:
    if not value > 0:
        raise pio.InputError("--beta must be positive")
    return value


def _out(args, name: str) -> Path | None:
    if getattr(args, "out", None):
        return Path(args.out)
    if args.out_dir:
        return Path(args.out_dir) / name
    return None


def _record_file(rep: Report, path: Path | None) -> None:
    if path is not None:
        rep.files.append(str(path))


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args, rep: Report) -> None:
    k = pio.load_kernel(args.kernel)
    vr = kern.validate_kernel(k)
    for c in vr.checks:
        rep.add(c)
    if vr.valid:
        adm = kern.check_sufficient_admissibility(k)
        rep.results["sufficient_admissibility"] = adm.to_dict()


def cmd_metric(args, rep: Report) -> None:
    k = pio.load_kernel(args.kernel)
    table = kern.metric(k, args.kind)
    path = _out(args, f"metric_{args.kind}.csv")
    if path is not None:
        pio.write_table(path, k.labels, table.values, args.kind)
        _record_file(rep, path)
    rep.results["diameter"] = table.diameter
    rep.results["values"] = table.values
    if args.relations:
        rr = kern.verify_metric_relations(k)
        for c in rr.checks:
            rep.add(c)
        rep.results["triple_determinants"] = rr.triple_determinants


def _moment_query(args):
    if args.query:
        doc = pio._load_json(args.query)
        if "kernel" in doc and isinstance(doc["kernel"], dict):
            k = pio.kernel_from_dict(doc["kernel"], f"{args.query}: kernel")
        elif "kernel_path" in doc:
            k = pio.load_kernel(Path(args.query).parent / doc["kernel_path"])
        else:
            raise pio.InputError(f"{args.query}: missing field 'kernel'")
        points = [str(p) for p in doc.get("points", [])]
        weights = doc.get("weights")
        beta = doc.get("beta", k.beta)
        base = doc.get("base")
    else:
        if not args.kernel:
            raise pio.InputError("--kernel or --query is required")
        k = pio.load_kernel(args.kernel)
        points = _points(args.points) if args.points else []
        weights = _floats(args.weights, "--weights") if args.weights else None
        beta = args.beta if args.beta is not None else k.beta
        base = args.base
    return k, points, weights, _beta(float(beta)), base


def cmd_moments(args, rep: Report) -> None:
    k, points, weights, beta, base = _moment_query(args)
    kind = args.kind
    query = {"kind": kind, "labels": list(k.labels), "points": points, "beta": beta}
    if kind == "laplace":
        if weights is None:
            raise pio.InputError("--weights is required for the Laplace transform")
        query["weights"] = [float(w) for w in weights]
        value = mom.laplace_transform(k, weights, beta)
        record = {"value": value, "method": "determinant", "enumeration_count": 0}
    else:
        if not points and kind != "isomorphism":
            raise pio.InputError("--points is required")
        if kind == "permanent":
            res = mom.alpha_permanent_moment(k, points, beta)
        elif kind == "loop":
            res = mom.loop_measure_moment(k, points)
        elif kind == "isomorphism":
            if base is None:
                raise pio.InputError("--base is required for isomorphism moments")
            query["base"] = base
            res = mom.isomorphism_moment(k, base, points)
        else:
            res = mom.partition_moment(k, points, beta)
        record = {"value": res.value, "method": res.method,
                  "enumeration_count": res.enumeration_count}
    rep.results.update({"query": query, **record})


def cmd_chain_potentials(args, rep: Report) -> None:
    c = pio.load_chain(args.chain)
    u1 = chain_mod.compute_u1(c)
    rep.results["u1"] = u1.entries
    path = _out(args, "u1.csv")
    if path is None:
        path = Path("u1.csv")
    pio.write_table(path, c.labels, u1.entries, "u1")
    _record_file(rep, path)
    if args.kernel_out:
        pio.write_text(args.kernel_out, pio.json_text(pio.kernel_to_dict(u1)))
        _record_file(rep, Path(args.kernel_out))
    if args.root is not None:
        full = chain_mod.uT0_full(c.without_killing(), args.root)
        rep.results["uT0"] = full
        p2 = path.with_name("uT0.csv")
        pio.write_table(p2, c.labels, full, "uT0")
        _record_file(rep, p2)
    resid = float(np.abs((np.eye(c.n) - c.generator()) @ u1.entries - np.eye(c.n)).max())
    rep.add({"name": "resolvent_residual", "margin": 1e-12 - resid, "pass": resid < 1e-12})


def cmd_chain_simulate(args, rep: Report) -> None:
    c = pio.load_chain(args.chain)
    seed = _seed(args)
    n = _positive_n(args.paths, "--paths")
    start = args.start if args.start is not None else c.labels[0]
    fields = chain_mod.simulate_local_times(c, start, seed, n)
    path = _out(args, "local_times.csv")
    if path is not None:
        pio.write_samples(path, c.labels, fields)
        _record_file(rep, path)
    if c.has_unit_killing:
        u1 = chain_mod.compute_u1(c)
        x = c.states.position(start)
        for j, lab in enumerate(c.labels):
            rep.add(mean_check(f"E_{start}[L({lab})]", fields[:, j], u1.entries[x, j]))


def cmd_chain_verify_identity(args, rep: Report) -> None:
    c = pio.load_chain(args.chain)
    seed = _seed(args)
    n = _positive_n(args.paths, "--paths")
    root = args.root if args.root is not None else c.labels[0]
    starts = _points(args.starts) if args.starts else None
    ir = chain_mod.verify_inverse_local_time_identity(c, root, seed, n, starts)
    for ch in ir.checks():
        rep.add(ch)


def cmd_soup_sample(args, rep: Report) -> None:
    c = pio.load_chain(args.chain)
    seed = _seed(args)
    n = _positive_n(args.n, "--n")
    beta = _beta(args.beta)
    fields = soup_mod.sample_soup(c, beta, seed, n)
    path = _out(args, "fields.csv")
    if path is None:
        path = Path("fields.csv")
    pio.write_samples(path, c.labels, fields)
    _record_file(rep, path)
    rep.results["mean_field"] = fields.mean(axis=0)


def cmd_soup_verify(args, rep: Report) -> None:
    c = pio.load_chain(args.chain)
    seed = _seed(args)
    n = _positive_n(args.n, "--n")
    weights = None
    if args.weights:
        weights = [_floats(w, "--weights") for w in args.weights.split(";")]
    vr = soup_mod.verify_soup(c, _beta(args.beta), seed, n, args.order, weights)
    for ch in vr.checks:
        rep.add(ch)
    rep.results.update(vr.meta)


def _entropy_inputs(args):
    if args.table:
        table = pio.read_table(args.table)
        k = None
    else:
        if not args.kernel:
            raise pio.InputError("--kernel or --table is required")
        k = pio.load_kernel(args.kernel)
        table = kern.metric(k, args.metric)
    if args.weights:
        mu = ent.ProbabilityWeights.normalized(table.index, _floats(args.weights, "--weights"))
    else:
        mu = ent.ProbabilityWeights.uniform(table.index)
    return k, table, mu


def cmd_entropy_integral(args, rep: Report) -> None:
    _, table, mu = _entropy_inputs(args)
    a = args.a if args.a is not None else table.diameter
    value, t = ent.entropy_integral_with_center(table, mu, a)
    rep.results.update({"a": a, "J": value, "sup_center": table.index.labels[t]})


def cmd_entropy_profile(args, rep: Report) -> None:
    _, table, mu = _entropy_inputs(args)
    grid = ent.parse_grid(args.grid)
    formula = None
    if args.refine == "brownian":
        formula = lambda s, t: np.minimum(s, t) + 1.0  # noqa: E731
    prof = ent.entropy_profile(table, mu, grid, formula=formula)
    path = _out(args, "profile.csv")
    if path is not None:
        pio.write_text(path, pio.csv_text(["delta", "J", "J_over_delta", "sup_center"],
                                          prof.rows()))
        _record_file(rep, path)
    rep.results.update({"diameter": prof.diameter, "deltas": prof.deltas, "J": prof.values,
                        "sup_centers": prof.sup_centers, "refinement": prof.refinement})


def cmd_entropy_local(args, rep: Report) -> None:
    _, table, mu = _entropy_inputs(args)
    if args.t0 is None or args.delta is None:
        raise pio.InputError("--t0 and --delta are required")
    lf = ent.local_functional_terms(table, mu, args.t0, args.delta)
    rep.results.update({"value": lf.value, "loglog_term": lf.loglog_term,
                        "entropy_term": lf.entropy_term, "members": list(lf.members),
                        "loglog_clamped": lf.clamped})


def _named_kernel(args) -> kern.Kernel:
    if args.kernel == "brownian":
        return mc.brownian_kernel(args.grid)
    return pio.load_kernel(args.kernel)


def cmd_verify_psi2(args, rep: Report) -> None:
    seed = _seed(args)
    n = _positive_n(args.n, "--n")
    if not args.kernel:
        est = mc.orlicz_psi2_norm(lambda rng, size: rng.standard_normal(size), seed, n)
        target = math.sqrt(8.0 / 3.0)
        rel = abs(est.norm_estimate - target) / target
        rep.add({"name": "psi2(standard normal)", "target": target,
                 "estimate": est.norm_estimate, "band": list(est.confidence_band),
                 "margin": 0.02 - rel, "pass": rel < 0.02})
        return
    k = _named_kernel(args)
    x, y = _points(args.pair) if args.pair else (k.labels[0], k.labels[-1])
    pr = mc.verify_psi2_bound(k, x, y, args.lam, seed, n)
    d = pr.to_dict()
    d["name"] = f"psi2 bound ({x},{y})"
    rep.add(d)


def cmd_verify_modulus(args, rep: Report) -> None:
    seed = _seed(args)
    k = _named_kernel(args)
    report = mc.modulus_experiment(k, None, seed, _positive_n(args.seeds, "--seeds"))
    path = _out(args, "modulus_ratios.csv")
    if path is not None:
        header = ["seed_index"] + [f"ratio_delta_{i}" for i in range(report.deltas.size)] + \
            ["bound", "pass_finest"]
        rows = ([i] + list(r) + [b, int(p)] for i, (r, b, p) in
                enumerate(zip(report.ratios, report.bounds, report.finest_pass)))
        pio.write_text(path, pio.csv_text(header, rows))
        _record_file(rep, path)
    summary = report.summary()
    rep.results.update(summary)
    frac_below = 1.0 - report.fraction_exceeding
    rep.add({"name": "fraction of seeds below bound at finest delta (soft)",
             "estimate": frac_below, "target": 0.99, "margin": frac_below - 0.99,
             "pass": frac_below >= 0.99})


def cmd_verify_gaussian(args, rep: Report) -> None:
    seed = _seed(args)
    k = _named_kernel(args)
    vr = mc.verify_gaussian_square(k, seed, _positive_n(args.n, "--n"))
    for ch in vr.checks:
        rep.add(ch)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help="directory for report.json and data files")
    common.add_argument("--threads", type=int, help="worker threads (overrides PERMASOUP_THREADS)")
    common.add_argument("--timing", action="store_true",
                        help="include wall-clock time in the report")

    p = argparse.ArgumentParser(prog="permasoup", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="kernel constraint checks")
    v.add_argument("--kernel", required=True)
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("metric", parents=[common], help="metric tables and relations")
    m.add_argument("--kernel", required=True)
    m.add_argument("--kind", default="d", choices=kern.METRIC_KINDS)
    m.add_argument("--out")
    m.add_argument("--relations", action="store_true", help="run the metric-relation suite")
    m.set_defaults(func=cmd_metric)

    mo = sub.add_parser("moments", help="exact moments and Laplace transforms")
    msub = mo.add_subparsers(dest="kind", required=True)
    for kind in ("laplace", "permanent", "loop", "isomorphism", "partition"):
        q = msub.add_parser(kind, parents=[common])
        q.add_argument("--kernel")
        q.add_argument("--query", help="MomentQuery JSON")
        q.add_argument("--points")
        q.add_argument("--weights")
        q.add_argument("--beta", type=float)
        q.add_argument("--base")
        q.set_defaults(func=cmd_moments)

    ch = sub.add_parser("chain", help="finite Markov chains")
    csub = ch.add_subparsers(dest="sub", required=True)
    cp = csub.add_parser("potentials", parents=[common])
    cp.add_argument("--chain", required=True)
    cp.add_argument("--out")
    cp.add_argument("--kernel-out", help="also write u1 as kernel JSON")
    cp.add_argument("--root", help="also write the hitting-time potential for this root")
    cp.set_defaults(func=cmd_chain_potentials)
    cs = csub.add_parser("simulate", parents=[common])
    cs.add_argument("--chain", required=True)
    cs.add_argument("--start")
    cs.add_argument("--paths", type=int, default=100_000)
    cs.add_argument("--seed", type=int)
    cs.add_argument("--out")
    cs.set_defaults(func=cmd_chain_simulate)
    cv = csub.add_parser("verify-6.3", aliases=["verify-identity"], parents=[common],
                          help="inverse local time potential identity")
    cv.add_argument("--chain", required=True)
    cv.add_argument("--root")
    cv.add_argument("--starts")
    cv.add_argument("--paths", type=int, default=100_000)
    cv.add_argument("--seed", type=int)
    cv.set_defaults(func=cmd_chain_verify_identity)

    so = sub.add_parser("soup", help="loop soups")
    ssub = so.add_subparsers(dest="sub", required=True)
    for name, func in (("sample", cmd_soup_sample), ("verify", cmd_soup_verify)):
        q = ssub.add_parser(name, parents=[common])
        q.add_argument("--chain", required=True)
        q.add_argument("--beta", type=float, default=0.5)
        q.add_argument("--n", type=int, default=100_000)
        q.add_argument("--seed", type=int)
        if name == "sample":
            q.add_argument("--out")
        else:
            q.add_argument("--order", type=int, default=3)
            q.add_argument("--weights", help="weight vectors separated by ';'")
        q.set_defaults(func=func)

    en = sub.add_parser("entropy", help="entropy integrals")
    esub = en.add_subparsers(dest="sub", required=True)
    for name, func in (("integral", cmd_entropy_integral), ("profile", cmd_entropy_profile),
                       ("local", cmd_entropy_local)):
        q = esub.add_parser(name, parents=[common])
        q.add_argument("--kernel")
        q.add_argument("--table", help="distance table CSV")
        q.add_argument("--metric", default="d", choices=kern.METRIC_KINDS)
        q.add_argument("--weights")
        if name == "integral":
            q.add_argument("--a", type=float)
        elif name == "profile":
            q.add_argument("--grid", default="0.01:1:log")
            q.add_argument("--refine", choices=["brownian"],
                           help="attach a refinement study for this kernel formula")
            q.add_argument("--out")
        else:
            q.add_argument("--t0")
            q.add_argument("--delta", type=float)
        q.set_defaults(func=func)

    ve = sub.add_parser("verify", help="Monte-Carlo verification")
    vsub = ve.add_subparsers(dest="sub", required=True)
    vp = vsub.add_parser("psi2", parents=[common])
    vp.add_argument("--kernel", help="kernel JSON or 'brownian'; omit for the standard normal")
    vp.add_argument("--grid", type=int, default=256)
    vp.add_argument("--pair")
    vp.add_argument("--lam", type=float, default=4.0)
    vp.add_argument("--n", type=int, default=1_000_000)
    vp.add_argument("--seed", type=int)
    vp.set_defaults(func=cmd_verify_psi2)
    vm = vsub.add_parser("modulus", parents=[common])
    vm.add_argument("--kernel", default="brownian")
    vm.add_argument("--grid", type=int, default=256)
    vm.add_argument("--seeds", type=int, default=200)
    vm.add_argument("--seed", type=int)
    vm.add_argument("--out")
    vm.set_defaults(func=cmd_verify_modulus)
    vg = vsub.add_parser("gaussian", parents=[common])
    vg.add_argument("--kernel", required=True)
    vg.add_argument("--grid", type=int, default=256)
    vg.add_argument("--n", type=int, default=1_000_000)
    vg.add_argument("--seed", type=int)
    vg.set_defaults(func=cmd_verify_gaussian)
    return p


def _config(args) -> dict:
    skip = {"func", "timing", "threads", "out_dir"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


INPUT_ERRORS = (pio.InputError, kern.KernelError, kern.InvariantViolation, chain_mod.ChainError,
                ent.EntropyError, mom.LaplaceError, mc.HeavyTailError, ValueError, KeyError,
                IndexError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else 0
    if args.threads is not None:
        os.environ["PERMASOUP_THREADS"] = str(max(1, args.threads))
    name = " ".join(x for x in (args.command, getattr(args, "kind", None),
                                getattr(args, "sub", None)) if x)
    rep = Report(name, _config(args))
    t0 = time.perf_counter()
    try:
        args.func(args, rep)
    except mom.CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    elapsed = time.perf_counter() - t0 if args.timing else None
    text = pio.json_text(rep.to_dict(elapsed))
    if args.out_dir:
        pio.write_text(Path(args.out_dir) / "report.json", text)
    sys.stdout.write(text)
    return EXIT_PASS if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
