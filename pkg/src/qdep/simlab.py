"""Seeded Monte Carlo engine: generators, replicate runners, sweeps.

Reproducibility contract: every sample is a pure function of
``(seed, replicate_index)`` through a counter-based Philox stream with
key ``[seed, replicate_index]``; distinct indices give independent
streams.  Replicate outputs are stored by index and reduced in index
order, so any result is bit-identical for every worker count.

Scale factors in replicate runs are user-supplied with the scenario's
true standard deviations (the asymptotic theory assumes scale factors
known independently of the sample).
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from ._io import atomic_write_text
from .asymptotics import (
    DegenerateNullError,
    gamma_chi2_cdf,
    gamma_chi2_quantile,
    null_moments,
)
from .errors import QdepError
from .estimator import Sample, estimate_q, user_scale_factors
from .kernels import KernelSpec
from .oracle import DiscreteJoint


# ---------------------------------------------------------------------------
# scenario generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteJointSampler:
    """Draw rows from a finite joint law."""

    joint: DiscreteJoint

    @property
    def dim(self) -> int:
        return self.joint.k

    @property
    def is_product(self) -> bool:
        return self.joint.tv_from_product() == 0.0

    def true_sigma(self) -> np.ndarray:
        out = np.empty(self.joint.k)
        for j in range(self.joint.k):
            vals, p = self.joint.marginal(j)
            mean = float(vals @ p)
            out[j] = math.sqrt(float(((vals - mean) ** 2) @ p))
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(self.joint.m, size=n, p=self.joint.probs)
        return self.joint.support[idx]


@dataclass(frozen=True)
class BivariateGaussian:
    """Standard normal margins with correlation rho."""

    rho: float

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise QdepError("need |rho| < 1")

    dim = 2

    @property
    def is_product(self) -> bool:
        return self.rho == 0.0

    def true_sigma(self) -> np.ndarray:
        return np.ones(2)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, 2))
        y2 = self.rho * z[:, 0] + math.sqrt(1.0 - self.rho**2) * z[:, 1]
        return np.column_stack([z[:, 0], y2])


@dataclass(frozen=True)
class CopyPlusNoise:
    """Y1 standard normal, Y2 = Y1 + noise_sd * independent normal noise."""

    noise_sd: float = 1.0

    def __post_init__(self):
        if self.noise_sd < 0.0:
            raise QdepError("noise_sd must be >= 0")

    dim = 2

    is_product = False

    @property
    def rho(self) -> float:
        """Correlation of the standardized pair."""
        return 1.0 / math.sqrt(1.0 + self.noise_sd**2)

    def true_sigma(self) -> np.ndarray:
        return np.array([1.0, math.sqrt(1.0 + self.noise_sd**2)])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x = rng.standard_normal(n)
        return np.column_stack([x, x + self.noise_sd * rng.standard_normal(n)])


_MARGINALS = {
    "normal": (lambda rng, n, a, b: rng.normal(a, b, size=n),
               lambda a, b: b),
    "uniform": (lambda rng, n, a, b: rng.uniform(a, b, size=n),
                lambda a, b: (b - a) / math.sqrt(12.0)),
    "exponential": (lambda rng, n, rate, _u: rng.exponential(1.0 / rate, size=n),
                    lambda rate, _u: 1.0 / rate),
}


@dataclass(frozen=True)
class ProductOfMarginals:
    """Independent columns with named marginal families.

    ``marginals`` is a tuple of ``(name, p1, p2)`` entries; supported
    names: ``normal(mean, sd)``, ``uniform(lo, hi)``, ``exponential(rate, _)``.
    """

    marginals: tuple

    def __post_init__(self):
        if len(self.marginals) < 2:
            raise QdepError("need at least two marginals")
        for spec in self.marginals:
            if spec[0] not in _MARGINALS:
                raise QdepError(f"unknown marginal family {spec[0]!r}")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    is_product = True

    def true_sigma(self) -> np.ndarray:
        return np.array([_MARGINALS[name][1](p1, p2)
                         for name, p1, p2 in self.marginals])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cols = [_MARGINALS[name][0](rng, n, p1, p2)
                for name, p1, p2 in self.marginals]
        return np.column_stack(cols)


@dataclass(frozen=True)
class RotatedUniform:
    """Two iid unit-variance uniforms rotated by ``angle`` radians.

    Independent only when the angle is a multiple of pi/2 (the rotated
    square then aligns with the axes again).
    """

    angle: float

    dim = 2

    @property
    def is_product(self) -> bool:
        return math.isclose(self.angle % (math.pi / 2.0), 0.0, abs_tol=1e-15) or \
            math.isclose(self.angle % (math.pi / 2.0), math.pi / 2.0, abs_tol=1e-15)

    def true_sigma(self) -> np.ndarray:
        return np.ones(2)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        half = math.sqrt(3.0)
        base = rng.uniform(-half, half, size=(n, 2))
        c, s = math.cos(self.angle), math.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        return base @ rot.T


GENERATORS = (DiscreteJointSampler, BivariateGaussian, CopyPlusNoise,
              ProductOfMarginals, RotatedUniform)


@dataclass(frozen=True)
class Scenario:
    """A generator plus the sample size to draw from it."""

    generator: object
    n: int
    k: int = 2

    def __post_init__(self):
        if not isinstance(self.generator, GENERATORS):
            raise QdepError(f"unknown generator {type(self.generator).__name__}")
        if self.n < 2:
            raise QdepError("scenario sample size must be >= 2")
        if self.generator.dim != self.k:
            raise QdepError(
                f"generator dimension {self.generator.dim} != k={self.k}"
            )


def generate(scenario: Scenario, seed: int, replicate_index: int) -> Sample:
    """Deterministic sample: a pure function of (seed, replicate_index)."""
    rng = np.random.Generator(np.random.Philox(
        key=[np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
             np.uint64(replicate_index & 0xFFFFFFFFFFFFFFFF)]))
    return Sample(scenario.generator.sample(rng, scenario.n))


# ---------------------------------------------------------------------------
# replicate runner
# ---------------------------------------------------------------------------


_REP_FIELDS = ("q_hat", "reject", "e1", "v1", "gamma", "beta", "q_alpha",
               "degenerate")


def _run_replicates(generator, n: int, kernel: KernelSpec, alpha: float,
                    seed: int, rep_indices, with_test: bool) -> np.ndarray:
    """Worker: one row of ``_REP_FIELDS`` per replicate index."""
    sig = user_scale_factors(generator.true_sigma())
    scenario = Scenario(generator, n=n, k=generator.dim)
    out = np.zeros((len(rep_indices), len(_REP_FIELDS)))
    for row, idx in enumerate(rep_indices):
        sample = generate(scenario, seed, idx)
        qe = estimate_q(sample, kernel, sig)
        out[row, 0] = qe.q_hat
        if not with_test:
            continue
        try:
            nm = null_moments(sample, kernel, sig)
        except DegenerateNullError:
            out[row, 7] = 1.0
            continue
        q_alpha = gamma_chi2_quantile(1.0 - alpha, nm.gamma, nm.beta) / sample.n
        out[row, 1] = 1.0 if qe.q_hat > q_alpha else 0.0
        out[row, 2:6] = (nm.e1, nm.v1, nm.gamma, nm.beta)
        out[row, 6] = q_alpha
    return out


def replicate_q_values(generator, n: int, kernel_family: str, h: float,
                       replicates: int, seed: int, workers: int = 1,
                       base_index: int = 0) -> np.ndarray:
    """Q_hat over seeded replicates (no test machinery), in index order."""
    kernel = KernelSpec(kernel_family, h)
    rows = _collect_replicates(generator, n, kernel, 0.05, seed, replicates,
                               base_index, False, workers)
    return rows[:, 0].copy()


def _collect_replicates(generator, n, kernel, alpha, seed, replicates,
                        base_index, with_test, workers) -> np.ndarray:
    indices = [base_index + r for r in range(replicates)]
    if workers <= 1:
        return _run_replicates(generator, n, kernel, alpha, seed, indices,
                               with_test)
    chunk = max(1, math.ceil(replicates / (workers * 4)))
    chunks = [indices[i:i + chunk] for i in range(0, replicates, chunk)]
    rows = np.empty((replicates, len(_REP_FIELDS)))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_replicates, generator, n, kernel, alpha,
                               seed, ch, with_test) for ch in chunks]
        pos = 0
        for ch, fut in zip(chunks, futures):
            rows[pos:pos + len(ch)] = fut.result()
            pos += len(ch)
    return rows


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPlan:
    """A (bandwidth x sample size) grid of Monte Carlo cells."""

    generator: object
    kernel_family: str
    h_grid: tuple
    n_grid: tuple
    replicates: int
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if len(self.h_grid) == 0 or len(self.n_grid) == 0:
            raise QdepError("grids must be nonempty")
        if list(self.h_grid) != sorted(set(self.h_grid)):
            raise QdepError("h_grid must be strictly increasing")
        if list(self.n_grid) != sorted(set(self.n_grid)):
            raise QdepError("n_grid must be strictly increasing")
        if any(h <= 0 for h in self.h_grid):
            raise QdepError("bandwidths must be positive")
        if self.replicates < 100:
            raise QdepError("need >= 100 replicates for rate estimates")
        if not 0.0 < self.alpha < 1.0:
            raise QdepError("alpha must be in (0, 1)")
        KernelSpec(self.kernel_family, 1.0)  # validates family name


@dataclass(frozen=True)
class SweepCell:
    h: float
    n: int
    replicates: int
    mean_qhat: float
    var_qhat: float
    se_mean_qhat: float
    se_var_qhat: float
    rejection_rate: float
    se_rate: float
    mean_e1: float
    mean_v1: float
    mean_gamma: float
    mean_beta: float
    mean_q_alpha: float
    degenerate_count: int
    elapsed_s: float


_SWEEP_COLUMNS = tuple(SweepCell.__dataclass_fields__)


@dataclass(frozen=True)
class SweepResult:
    cells: tuple
    plan: SweepPlan
    seed: int
    version: str
    q_values: dict = field(default_factory=dict, repr=False, compare=False)

    def cell(self, h: float, n: int) -> SweepCell:
        for c in self.cells:
            if c.h == h and c.n == n:
                return c
        raise KeyError((h, n))

    def statistical_payload(self) -> list:
        """Cell contents without wall-clock fields.

        This is the part of the result covered by the bit-identity
        contract across worker counts (timings are inherently not).
        """
        out = []
        for c in self.cells:
            d = asdict(c)
            d.pop("elapsed_s")
            out.append(d)
        return out

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_SWEEP_COLUMNS)
        for c in self.cells:
            writer.writerow([getattr(c, name) for name in _SWEEP_COLUMNS])
        return buf.getvalue()

    def to_json_text(self) -> str:
        plan = asdict(self.plan)
        plan["generator"] = {"type": type(self.plan.generator).__name__,
                             **_generator_params(self.plan.generator)}
        return json.dumps({
            "version": self.version,
            "seed": self.seed,
            "plan": plan,
            "cells": [asdict(c) for c in self.cells],
        }, indent=2)

    def to_csv(self, path: str) -> None:
        atomic_write_text(path, self.to_csv_text())

    def to_json(self, path: str) -> None:
        atomic_write_text(path, self.to_json_text())


def _generator_params(gen) -> dict:
    if isinstance(gen, DiscreteJointSampler):
        return {"atoms": gen.joint.support.tolist(),
                "probs": gen.joint.probs.tolist()}
    out = asdict(gen)
    return out


def _variance_se(x: np.ndarray) -> float:
    """Standard error of the sample variance (moment-based)."""
    n = x.size
    if n < 4:
        return float("nan")
    m = x.mean()
    m2 = float(((x - m) ** 2).mean())
    m4 = float(((x - m) ** 4).mean())
    var_of_var = (m4 - (n - 3) / (n - 1) * m2 * m2) / n
    return math.sqrt(max(var_of_var, 0.0))


def run_sweep(plan: SweepPlan, workers: int = 1,
              keep_q_values: bool = False) -> SweepResult:
    """Run every (h, n) cell of the plan.

    The statistical content is bit-identical for every ``workers`` value
    (replicate-indexed streams and index-ordered reduction); only the
    per-cell wall-clock field varies.  Degenerate-null replicates are
    counted per cell, not raised.
    """
    cells = []
    q_store: dict = {}
    cell_index = 0
    for h in plan.h_grid:
        kernel = KernelSpec(plan.kernel_family, float(h))
        for n in plan.n_grid:
            t0 = time.perf_counter()
            base = cell_index << 32
            rows = _collect_replicates(plan.generator, int(n), kernel,
                                       plan.alpha, plan.seed, plan.replicates,
                                       base, True, workers)
            elapsed = time.perf_counter() - t0
            q = rows[:, 0]
            ok = rows[:, 7] == 0.0
            n_ok = int(ok.sum())
            rate = float(rows[ok, 1].mean()) if n_ok else float("nan")
            cells.append(SweepCell(
                h=float(h), n=int(n), replicates=plan.replicates,
                mean_qhat=float(q.mean()),
                var_qhat=float(q.var(ddof=1)),
                se_mean_qhat=float(q.std(ddof=1) / math.sqrt(q.size)),
                se_var_qhat=_variance_se(q),
                rejection_rate=rate,
                se_rate=(math.sqrt(max(rate * (1.0 - rate), 0.0) / n_ok)
                         if n_ok else float("nan")),
                mean_e1=float(rows[ok, 2].mean()) if n_ok else float("nan"),
                mean_v1=float(rows[ok, 3].mean()) if n_ok else float("nan"),
                mean_gamma=float(rows[ok, 4].mean()) if n_ok else float("nan"),
                mean_beta=float(rows[ok, 5].mean()) if n_ok else float("nan"),
                mean_q_alpha=float(rows[ok, 6].mean()) if n_ok else float("nan"),
                degenerate_count=int(plan.replicates - n_ok),
                elapsed_s=elapsed,
            ))
            if keep_q_values:
                q_store[(float(h), int(n))] = q.copy()
            cell_index += 1
    return SweepResult(cells=tuple(cells), plan=plan, seed=plan.seed,
                       version=__version__, q_values=q_store)


# ---------------------------------------------------------------------------
# null-law estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NullLawResult:
    """Empirical N Q_hat under a product law vs the fitted approximation."""

    n: int
    replicates: int
    ks_distance: float
    mean_gamma: float
    mean_beta: float
    rejection_rate: float
    qq_empirical: np.ndarray
    qq_fitted: np.ndarray
    nq_values: np.ndarray

    def qq_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["empirical_quantile", "fitted_quantile"])
        for a, b in zip(self.qq_empirical, self.qq_fitted):
            writer.writerow([a, b])
        return buf.getvalue()


def estimate_null_law(scenario: Scenario, kernel_family: str, h: float,
                      replicates: int, seed: int, alpha: float = 0.05,
                      workers: int = 1) -> NullLawResult:
    """Compare N Q_hat under independence with the fitted gamma chi-square.

    Uses cell-averaged plug-in gamma and beta for the fit; returns the
    Kolmogorov-Smirnov distance, QQ pairs (99 percentiles) and the
    rejection rate of the plug-in test at ``alpha``.
    """
    if not scenario.generator.is_product:
        raise QdepError("estimate_null_law requires a product-measure scenario")
    kernel = KernelSpec(kernel_family, h)
    rows = _collect_replicates(scenario.generator, scenario.n, kernel, alpha,
                               seed, replicates, 0, True, workers)
    ok = rows[:, 7] == 0.0
    if not np.all(ok):
        rows = rows[ok]
    nq = scenario.n * rows[:, 0]
    g = float(rows[:, 4].mean())
    b = float(rows[:, 5].mean())
    xs = np.sort(nq)
    cdf = np.asarray(gamma_chi2_cdf(xs, g, b))
    i = np.arange(1, xs.size + 1)
    ks = float(np.max(np.maximum(i / xs.size - cdf, cdf - (i - 1) / xs.size)))
    probs = np.arange(1, 100) / 100.0
    qq_emp = np.quantile(nq, probs)
    qq_fit = np.array([gamma_chi2_quantile(p, g, b) for p in probs])
    return NullLawResult(
        n=scenario.n, replicates=int(rows.shape[0]), ks_distance=ks,
        mean_gamma=g, mean_beta=b,
        rejection_rate=float(rows[:, 1].mean()),
        qq_empirical=qq_emp, qq_fitted=qq_fit, nq_values=nq,
    )


def compare_calibrations(scenario: Scenario, kernel_family: str, h: float,
                         replicates: int, seed: int, alpha: float = 0.05,
                         permutations: int = 199) -> tuple[float, float]:
    """Rejection rates of the two calibrations on common replicates.

    Returns ``(rate_gamma_chi2, rate_permutation)``; the shared data make
    the difference estimate much tighter than two independent runs.  The
    permutation decisions use the early-stopping scan (identical outcome
    to evaluating every permutation).
    """
    from .asymptotics import permutation_reject

    kernel = KernelSpec(kernel_family, h)
    sig = user_scale_factors(scenario.generator.true_sigma())
    rej_g = np.zeros(replicates, dtype=bool)
    rej_p = np.zeros(replicates, dtype=bool)
    for i in range(replicates):
        sample = generate(scenario, seed, i)
        qe = estimate_q(sample, kernel, sig)
        nm = null_moments(sample, kernel, sig)
        q_alpha = gamma_chi2_quantile(1.0 - alpha, nm.gamma, nm.beta) / sample.n
        rej_g[i] = qe.q_hat > q_alpha
        rej_p[i] = permutation_reject(sample, kernel, sig, alpha, permutations,
                                      seed * 1_000_003 + i, q_hat=qe.q_hat)
    return float(rej_g.mean()), float(rej_p.mean())


# ---------------------------------------------------------------------------
# analysis helpers used by the named acceptance suites
# ---------------------------------------------------------------------------


def fit_loglog_slope(ns, values) -> float:
    """Least-squares slope of log(values) against log(ns)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    x = x - x.mean()
    return float((x @ (y - y.mean())) / (x @ x))


def monotone_within_bands(values, ses, direction: str, band: float = 2.0) -> bool:
    """Check a monotone trend allowing inversions within ``band`` joint SEs.

    ``direction`` is ``"nonincreasing"`` or ``"nondecreasing"``; adjacent
    violations are tolerated when smaller than ``band`` combined standard
    errors (Monte Carlo noise allowance).
    """
    v = np.asarray(values, dtype=float)
    s = np.asarray(ses, dtype=float)
    sign = -1.0 if direction == "nonincreasing" else 1.0
    for i in range(v.size - 1):
        step = sign * (v[i + 1] - v[i])
        allow = band * math.hypot(s[i], s[i + 1])
        if step < -allow:
            return False
    return True
