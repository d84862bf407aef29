"""Command-line front end.

Subcommands: ``test`` (run the independence test on a CSV file),
``sweep`` (Monte Carlo bandwidth/sample-size grid), ``nulllaw`` (null
distribution diagnostics), ``simulate`` (write synthetic data), and
``oracle-check`` (differential check of the three Q computations).

Exit status of ``test``: 0 = completed and independence not rejected,
3 = completed and rejected, 1 = error.  Randomized commands are
reproducible from ``--seed``; reports embed the seed, a hash of the
resolved configuration, and the package version.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from ._io import atomic_write_text
from .asymptotics import (
    GammaChiSquare,
    Permutation,
    run_test,
)
from .errors import DegenerateNullError, QdepError, ZeroVarianceError
from .estimator import (
    SAMPLE_STD,
    Sample,
    estimate_q,
    estimate_q_cf,
    scale_factors,
    user_scale_factors,
)
from .kernels import FAMILIES, KernelSpec
from .oracle import DiscreteJoint, naive_q
from .simlab import (
    BivariateGaussian,
    CopyPlusNoise,
    DiscreteJointSampler,
    ProductOfMarginals,
    RotatedUniform,
    Scenario,
    SweepPlan,
    estimate_null_law,
    generate,
    run_sweep,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REJECTED = 3


class CliError(QdepError):
    """User-facing failure with a clean message (exit status 1)."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdep",
        description="Kernel-based quadratic dependence measure and independence test",
    )
    parser.add_argument("--version", action="version", version=f"qdep {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--print-config", action="store_true",
                       help="echo the fully resolved config as JSON and exit")
        p.add_argument("--kernel", choices=FAMILIES, default=None,
                       help="kernel family (default gaussian)")
        p.add_argument("--h", type=float, default=None, dest="h",
                       help="kernel bandwidth (default 1.0)")
        p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")

    p_test = sub.add_parser("test", help="test a CSV dataset for mutual independence")
    add_common(p_test)
    p_test.add_argument("--input", required=True, help="CSV file, header row required")
    p_test.add_argument("--alpha", type=float, default=None,
                        help="significance level (default 0.05)")
    p_test.add_argument("--sigma-mode", choices=["sample", "user"], default=None,
                        help="scale factors: per-column sample std or user-supplied")
    p_test.add_argument("--sigma", default=None,
                        help="comma-separated scale factors (with --sigma-mode user)")
    p_test.add_argument("--calibration", choices=["gamma", "permutation"],
                        default=None, help="null calibration (default gamma)")
    p_test.add_argument("--permutations", type=int, default=None,
                        help="permutation count B (default 999)")
    p_test.add_argument("--alternative-q", type=float, default=None,
                        help="alternative Q value; attaches a power lower bound")
    p_test.add_argument("--bound-mode", choices=["linear", "chebyshev"], default=None,
                        help="power bound variant (default linear)")
    p_test.add_argument("--output", default=None, help="write the JSON report here")

    p_sim = sub.add_parser("simulate", help="write a synthetic CSV dataset")
    add_common(p_sim)
    _add_scenario_args(p_sim)
    p_sim.add_argument("--n", type=int, default=None, help="sample size (default 500)")
    p_sim.add_argument("--replicate", type=int, default=None,
                       help="replicate index of the stream (default 0)")
    p_sim.add_argument("--output", required=True, help="CSV output path")

    p_sweep = sub.add_parser("sweep", help="Monte Carlo (h, N) grid on a scenario")
    add_common(p_sweep)
    _add_scenario_args(p_sweep)
    p_sweep.add_argument("--h-grid", default=None,
                         help="comma-separated bandwidths (default 0.5,1,2)")
    p_sweep.add_argument("--n-grid", default=None,
                         help="comma-separated sample sizes (default 100,200,400)")
    p_sweep.add_argument("--replicates", type=int, default=None,
                         help="replicates per cell (default 200)")
    p_sweep.add_argument("--alpha", type=float, default=None)
    p_sweep.add_argument("--workers", type=int, default=None,
                         help="parallel workers (default $QDEP_WORKERS or 1)")
    p_sweep.add_argument("--output-prefix", required=True,
                         help="writes <prefix>.csv and <prefix>.json")

    p_null = sub.add_parser("nulllaw", help="null-law diagnostics under independence")
    add_common(p_null)
    _add_scenario_args(p_null)
    p_null.add_argument("--n", type=int, default=None)
    p_null.add_argument("--replicates", type=int, default=None,
                        help="replicates (default 2000)")
    p_null.add_argument("--alpha", type=float, default=None)
    p_null.add_argument("--workers", type=int, default=None)
    p_null.add_argument("--output-prefix", required=True,
                        help="writes <prefix>_summary.json and <prefix>_qq.csv")

    p_oc = sub.add_parser("oracle-check",
                          help="differential check: fast vs naive vs quadrature")
    add_common(p_oc)
    p_oc.add_argument("--instances", type=int, default=None,
                      help="random instances (default 50)")
    p_oc.add_argument("--max-n", type=int, default=None,
                      help="largest instance size (default 64)")
    p_oc.add_argument("--output", default=None, help="write the JSON table here")
    return parser


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario",
                   choices=["gaussian", "copynoise", "product", "rotated",
                            "discrete"],
                   default=None, help="data generator (default gaussian)")
    p.add_argument("--rho", type=float, default=None,
                   help="correlation for --scenario gaussian (default 0)")
    p.add_argument("--noise-sd", type=float, default=None,
                   help="noise level for --scenario copynoise (default 1)")
    p.add_argument("--angle", type=float, default=None,
                   help="rotation (radians) for --scenario rotated (default pi/4)")
    p.add_argument("--joint", default=None,
                   help="JSON file with atoms/probs for --scenario discrete")
    p.add_argument("--marginals", default=None,
                   help="spec like 'normal:0:1,uniform:-1:1' for --scenario product")


_DEFAULTS = {
    "kernel": "gaussian",
    "h": 1.0,
    "seed": 0,
    "alpha": 0.05,
    "sigma_mode": "sample",
    "sigma": None,
    "calibration": "gamma",
    "permutations": 999,
    "alternative_q": None,
    "bound_mode": "linear",
    "scenario": "gaussian",
    "rho": 0.0,
    "noise_sd": 1.0,
    "angle": math.pi / 4.0,
    "joint": None,
    "marginals": "normal:0:1,normal:0:1",
    "n": 500,
    "replicate": 0,
    "h_grid": "0.5,1,2",
    "n_grid": "100,200,400",
    "replicates": None,  # per-command default filled in below
    "workers": None,
    "output": None,
    "instances": 50,
    "max_n": 64,
}


def resolve_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Merge defaults, config-file values and explicit flags (flags win)."""
    ns = vars(args).copy()
    command = ns.pop("command")
    config_path = ns.pop("config", None)
    ns.pop("print_config", None)
    file_vals: dict = {}
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_vals = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(file_vals, dict):
            raise CliError("config file must contain a JSON object")
        unknown = [k for k in file_vals if k.replace("-", "_") not in ns
                   and k.replace("-", "_") not in _DEFAULTS]
        if unknown:
            raise CliError(f"unknown config key {unknown[0]!r}")
        file_vals = {k.replace("-", "_"): v for k, v in file_vals.items()}

    resolved = {}
    for key, value in ns.items():
        if value is not None:
            resolved[key] = value
        elif key in file_vals and file_vals[key] is not None:
            resolved[key] = file_vals[key]
        elif key in _DEFAULTS:
            resolved[key] = _DEFAULTS[key]
        else:
            resolved[key] = None
    if resolved.get("replicates") is None:
        resolved["replicates"] = 2000 if command == "nulllaw" else 200
    if resolved.get("workers") is None:
        resolved["workers"] = int(os.environ.get("QDEP_WORKERS", "1"))
    resolved["command"] = command

    if resolved.get("h") is not None and resolved["h"] <= 0:
        parser.error("argument --h: h must be positive")
    alpha = resolved.get("alpha")
    if alpha is not None and not 0.0 < alpha < 1.0:
        parser.error("argument --alpha: alpha must be in (0, 1)")
    if command in ("test",) and not os.path.exists(resolved["input"]):
        parser.error(f"argument --input: file not found: {resolved['input']}")
    if resolved.get("joint") and not os.path.exists(resolved["joint"]):
        parser.error(f"argument --joint: file not found: {resolved['joint']}")
    return resolved


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# data ingestion
# ---------------------------------------------------------------------------


def read_csv_sample(path: str) -> tuple[list[str], np.ndarray]:
    """Read a header + numeric CSV file; errors carry 1-based line numbers."""
    rows: list[list[float]] = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(f"{path}: empty file") from None
        header = [c.strip() for c in header]
        if len(header) < 2:
            raise CliError(f"{path}: need at least two columns")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CliError(
                    f"{path}: line {line_no}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise CliError(
                        f"{path}: line {line_no}: non-numeric value {cell.strip()!r} "
                        f"in column {name!r}"
                    ) from None
                if not math.isfinite(v):
                    raise CliError(
                        f"{path}: line {line_no}: non-finite value in column {name!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if len(rows) < 2:
        raise CliError(f"{path}: need at least two data rows")
    return header, np.asarray(rows, dtype=float)


def _build_generator(cfg: dict):
    name = cfg["scenario"]
    if name == "gaussian":
        return BivariateGaussian(float(cfg["rho"]))
    if name == "copynoise":
        return CopyPlusNoise(float(cfg["noise_sd"]))
    if name == "rotated":
        return RotatedUniform(float(cfg["angle"]))
    if name == "discrete":
        if not cfg.get("joint"):
            raise CliError("--scenario discrete requires --joint FILE")
        with open(cfg["joint"], encoding="utf-8") as fh:
            joint = DiscreteJoint.from_json(fh.read())
        return DiscreteJointSampler(joint)
    if name == "product":
        specs = []
        for part in str(cfg["marginals"]).split(","):
            bits = part.strip().split(":")
            if len(bits) != 3:
                raise CliError(
                    f"bad marginal spec {part!r}; expected name:param1:param2"
                )
            specs.append((bits[0], float(bits[1]), float(bits[2])))
        return ProductOfMarginals(tuple(specs))
    raise CliError(f"unknown scenario {name!r}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_test(cfg: dict) -> int:
    header, data = read_csv_sample(cfg["input"])
    sample = Sample(data)
    kernel = KernelSpec(cfg["kernel"], float(cfg["h"]))
    try:
        if cfg["sigma_mode"] == "user":
            if not cfg["sigma"]:
                raise CliError("--sigma-mode user requires --sigma values")
            vals = [float(v) for v in str(cfg["sigma"]).split(",")]
            sig = scale_factors(sample, "user", vals)
        else:
            sig = scale_factors(sample, SAMPLE_STD)
    except ZeroVarianceError as exc:
        raise CliError(
            f"column {header[exc.column]!r} is constant; "
            "the dependence measure is undefined for degenerate marginals"
        ) from exc

    if cfg["calibration"] == "permutation":
        calibration = Permutation(b=int(cfg["permutations"]), seed=int(cfg["seed"]))
    else:
        calibration = GammaChiSquare()
    t0 = time.perf_counter()
    try:
        result = run_test(sample, kernel, sig, float(cfg["alpha"]), calibration,
                          alternative_q=cfg["alternative_q"],
                          bound_mode=cfg["bound_mode"])
    except DegenerateNullError as exc:
        raise CliError(
            f"{exc}; re-run with --calibration permutation"
        ) from exc
    elapsed = time.perf_counter() - t0

    qe = estimate_q(sample, kernel, sig)
    report = {
        "command": "test",
        "version": __version__,
        "config_hash": _config_hash(cfg),
        "seed": cfg["seed"],
        "input": cfg["input"],
        "columns": header,
        "n": sample.n,
        "k": sample.k,
        "kernel": cfg["kernel"],
        "h": cfg["h"],
        "sigma_mode": cfg["sigma_mode"],
        "sigma": [float(s) for s in sig.sigma],
        "q_hat": result.q_hat,
        "term1": qe.term1,
        "term2": qe.term2,
        "term3": qe.term3,
        "e1": result.null_approx.e1 if result.null_approx else None,
        "v1": result.null_approx.v1 if result.null_approx else None,
        "gamma": result.null_approx.gamma if result.null_approx else None,
        "beta": result.null_approx.beta if result.null_approx else None,
        "alpha": cfg["alpha"],
        "calibration": result.calibration,
        "q_alpha": result.q_alpha,
        "p_value": result.p_value,
        "reject": result.reject,
        "power_lower_bound": result.power_lower_bound,
        "elapsed_s": elapsed,
    }
    text = io.StringIO()
    text.write(f"qdep test: {cfg['input']}  (N={sample.n}, K={sample.k})\n")
    text.write(f"  kernel={cfg['kernel']} h={cfg['h']} sigma={cfg['sigma_mode']}\n")
    text.write(f"  Q_hat = {result.q_hat:.6e}  "
               f"(terms: {qe.term1:.6e}, {qe.term2:.6e}, {qe.term3:.6e})\n")
    if result.null_approx:
        na = result.null_approx
        text.write(f"  E1={na.e1:.6e} V1={na.v1:.6e} "
                   f"gamma={na.gamma:.6e} beta={na.beta:.4f}\n")
    text.write(f"  q_alpha({cfg['alpha']}) = {result.q_alpha:.6e}   "
               f"p = {result.p_value:.4g}\n")
    if result.power_lower_bound is not None:
        text.write(f"  power lower bound ({cfg['bound_mode']}): "
                   f"{result.power_lower_bound:.4f}\n")
    verdict = "REJECT independence" if result.reject else "do not reject independence"
    text.write(f"  decision: {verdict}\n")
    sys.stdout.write(text.getvalue())
    if cfg.get("output"):
        atomic_write_text(cfg["output"], json.dumps(report, indent=2))
    return EXIT_REJECTED if result.reject else EXIT_OK


def _cmd_simulate(cfg: dict) -> int:
    gen = _build_generator(cfg)
    scenario = Scenario(gen, n=int(cfg["n"]), k=gen.dim)
    sample = generate(scenario, int(cfg["seed"]), int(cfg["replicate"]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"y{j + 1}" for j in range(sample.k)])
    for row in sample.data:
        writer.writerow([repr(float(v)) for v in row])
    atomic_write_text(cfg["output"], buf.getvalue())
    sys.stdout.write(f"wrote {sample.n} rows x {sample.k} cols to "
                     f"{cfg['output']}\n")
    return EXIT_OK


def _parse_grid(text: str, cast) -> tuple:
    try:
        return tuple(cast(v) for v in str(text).split(","))
    except ValueError as exc:
        raise CliError(f"bad grid {text!r}: {exc}") from exc


def _cmd_sweep(cfg: dict) -> int:
    gen = _build_generator(cfg)
    plan = SweepPlan(
        generator=gen,
        kernel_family=cfg["kernel"],
        h_grid=_parse_grid(cfg["h_grid"], float),
        n_grid=_parse_grid(cfg["n_grid"], int),
        replicates=int(cfg["replicates"]),
        alpha=float(cfg["alpha"]),
        seed=int(cfg["seed"]),
    )
    result = run_sweep(plan, workers=int(cfg["workers"]))
    prefix = cfg["output_prefix"]
    result.to_csv(prefix + ".csv")
    result.to_json(prefix + ".json")
    degenerate = sum(c.degenerate_count for c in result.cells)
    sys.stdout.write(
        f"sweep complete: {len(result.cells)} cells x {plan.replicates} "
        f"replicates -> {prefix}.csv / {prefix}.json"
        + (f"  ({degenerate} degenerate-null replicates flagged)\n"
           if degenerate else "\n")
    )
    return EXIT_OK


def _cmd_nulllaw(cfg: dict) -> int:
    gen = _build_generator(cfg)
    if not gen.is_product:
        raise CliError("nulllaw requires a product (independent) scenario")
    scenario = Scenario(gen, n=int(cfg["n"]), k=gen.dim)
    res = estimate_null_law(scenario, cfg["kernel"], float(cfg["h"]),
                            int(cfg["replicates"]), int(cfg["seed"]),
                            float(cfg["alpha"]), workers=int(cfg["workers"]))
    prefix = cfg["output_prefix"]
    summary = {
        "command": "nulllaw",
        "version": __version__,
        "config_hash": _config_hash(cfg),
        "seed": cfg["seed"],
        "n": res.n,
        "replicates": res.replicates,
        "ks_distance": res.ks_distance,
        "mean_gamma": res.mean_gamma,
        "mean_beta": res.mean_beta,
        "rejection_rate": res.rejection_rate,
        "alpha": cfg["alpha"],
    }
    atomic_write_text(prefix + "_summary.json", json.dumps(summary, indent=2))
    atomic_write_text(prefix + "_qq.csv", res.qq_csv_text())
    sys.stdout.write(
        f"null law at N={res.n}: KS={res.ks_distance:.4f} "
        f"size={res.rejection_rate:.4f} -> {prefix}_summary.json, {prefix}_qq.csv\n"
    )
    return EXIT_OK


def _cmd_oracle_check(cfg: dict) -> int:
    rng = np.random.Generator(np.random.Philox(key=[np.uint64(cfg["seed"]),
                                                    np.uint64(0xA5)]))
    instances = int(cfg["instances"])
    max_n = min(int(cfg["max_n"]), 64)
    rows = []
    worst_naive = worst_cf = 0.0
    for i in range(instances):
        n = int(rng.integers(4, max_n + 1))
        fam = FAMILIES[int(rng.integers(len(FAMILIES)))]
        h = float(rng.choice([0.5, 1.0, 2.0]))
        data = rng.standard_normal((n, 2))
        if rng.random() < 0.5:
            data[:, 1] = 0.7 * data[:, 0] + 0.5 * data[:, 1]
        sample = Sample(data)
        sig = user_scale_factors(data.std(axis=0))
        kernel = KernelSpec(fam, h)
        q_fast = estimate_q(sample, kernel, sig).q_hat
        q_naive = naive_q(sample, kernel, sig)
        q_cf = estimate_q_cf(sample, kernel, sig)
        d_naive = abs(q_fast - q_naive)
        d_cf = abs(q_fast - q_cf)
        worst_naive = max(worst_naive, d_naive)
        worst_cf = max(worst_cf, d_cf)
        rows.append({"instance": i, "family": fam, "h": h, "n": n,
                     "q_fast": q_fast, "abs_diff_naive": d_naive,
                     "abs_diff_cf": d_cf})
    ok = worst_naive < 1e-12 and worst_cf < 1e-5
    sys.stdout.write("instance family     h    n   q_fast        "
                     "|fast-naive|  |fast-cf|\n")
    for r in rows:
        sys.stdout.write(
            f"{r['instance']:8d} {r['family']:9s} {r['h']:4.1f} {r['n']:4d} "
            f"{r['q_fast']:+.6e} {r['abs_diff_naive']:.3e}    "
            f"{r['abs_diff_cf']:.3e}\n"
        )
    sys.stdout.write(
        f"max |fast - naive| = {worst_naive:.3e} (tolerance 1e-12); "
        f"max |fast - cf| = {worst_cf:.3e} (tolerance 1e-5): "
        + ("OK\n" if ok else "VIOLATION\n")
    )
    if cfg.get("output"):
        atomic_write_text(cfg["output"], json.dumps({
            "version": __version__,
            "config_hash": _config_hash(cfg),
            "seed": cfg["seed"],
            "rows": rows,
            "max_abs_diff_naive": worst_naive,
            "max_abs_diff_cf": worst_cf,
            "ok": ok,
        }, indent=2))
    return EXIT_OK if ok else EXIT_ERROR


_RUNNERS = {
    "test": _cmd_test,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "nulllaw": _cmd_nulllaw,
    "oracle-check": _cmd_oracle_check,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args, parser)
        if getattr(args, "print_config", False):
            sys.stdout.write(json.dumps(cfg, indent=2, sort_keys=True,
                                        default=str) + "\n")
            return EXIT_OK
        return _RUNNERS[args.command](cfg)
    except QdepError as exc:
        sys.stderr.write(f"qdep: error: {exc}\n")
        return EXIT_ERROR
    except OSError as exc:
        sys.stderr.write(f"qdep: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
