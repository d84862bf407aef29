"""O(K N^2) estimation of the quadratic dependence measure.

The estimator replaces every population expectation in the kernel-trick
formula with a sample average (diagonal terms included, i.e. the
V-statistic form):

    term1 = (1/N^2) sum_{n,m} prod_k K2_h((Y_k(n) - Y_k(m)) / sigma_k)
    term2 = prod_k (1/N^2) sum_{n,m} K2_h((Y_k(n) - Y_k(m)) / sigma_k)
    term3 = (1/N)  sum_n prod_k (1/N) sum_m K2_h((Y_k(n) - Y_k(m)) / sigma_k)

    Q_hat = (term1 + term2 - 2 term3) / 2

Only differences of observations enter, so Q_hat is translation invariant;
with sample-standard-deviation scale factors it is also scale invariant.

Implementation notes
--------------------
Rows are processed in fixed-size blocks (BLOCK_ROWS) with numpy pairwise
summation inside a block and exact ``math.fsum`` across block partials.
The summation order is a pure function of N, so results are bit-for-bit
reproducible and independent of any external parallelism.  Memory beyond
the input is O(N) (a few block-row buffers) plus O(K) accumulators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import QdepError, TruncationTooTightError, ZeroVarianceError
from .kernels import (
    KernelSpec,
    eval_fourier,
    k2_derivative_profile,
    k2_profile,
)

BLOCK_ROWS = 256

USER_SUPPLIED = "user"
SAMPLE_STD = "sample_std"


@dataclass(frozen=True)
class Sample:
    """An N x K matrix of observations (rows = observations)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim != 2:
            raise QdepError(f"sample must be 2-D (N x K), got shape {arr.shape}")
        n, k = arr.shape
        if n < 2 or k < 2:
            raise QdepError(f"need N >= 2 and K >= 2, got N={n}, K={k}")
        if not np.all(np.isfinite(arr)):
            raise QdepError("sample contains non-finite entries")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ScaleFactors:
    """Per-variable positive scale factors sigma_k and their provenance."""

    sigma: np.ndarray
    source: str

    def __post_init__(self):
        arr = np.asarray(self.sigma, dtype=float)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise QdepError("scale factors must be a 1-D vector of positive reals")
        if self.source not in (USER_SUPPLIED, SAMPLE_STD):
            raise QdepError(f"unknown scale-factor source {self.source!r}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "sigma", arr)


def user_scale_factors(values) -> ScaleFactors:
    """Wrap user-supplied scale factors (treated as known constants)."""
    return ScaleFactors(np.asarray(values, dtype=float), USER_SUPPLIED)


def scale_factors(sample: Sample, mode: str = SAMPLE_STD, values=None) -> ScaleFactors:
    """Build scale factors for a sample.

    ``mode="sample_std"`` uses the population standard deviation of each
    column (divisor N); a constant column raises :class:`ZeroVarianceError`
    because the measure is undefined for degenerate marginals.
    ``mode="user"`` passes ``values`` through unchanged.
    """
    if mode == USER_SUPPLIED:
        if values is None:
            raise QdepError("mode='user' requires explicit values")
        vals = np.asarray(values, dtype=float)
        if vals.shape != (sample.k,):
            raise QdepError(
                f"expected {sample.k} scale factors, got shape {vals.shape}"
            )
        return ScaleFactors(vals, USER_SUPPLIED)
    if mode != SAMPLE_STD:
        raise QdepError(f"unknown scale-factor mode {mode!r}")
    sig = sample.data.std(axis=0, ddof=0)
    for j, s in enumerate(sig):
        if s == 0.0:
            raise ZeroVarianceError(j)
    return ScaleFactors(sig, SAMPLE_STD)


@dataclass(frozen=True)
class QEstimate:
    """Estimated quadratic dependence plus its three constituent terms."""

    q_hat: float
    term1: float
    term2: float
    term3: float
    n: int
    kernel: KernelSpec
    sigma: ScaleFactors


@dataclass(frozen=True)
class QuadratureSettings:
    """Controls for the characteristic-function quadrature oracle.

    ``nodes`` forces a Gauss-Legendre node count per dimension (None picks
    one from the weight decay and the data's oscillation frequencies).
    ``cut`` sets the truncation: the box edge is where the 1-D weight has
    fallen to ``cut`` times its maximum.  ``tail_budget`` caps the weight
    mass that may remain outside the box.
    """

    nodes: int | None = None
    cut: float = 1e-12
    tail_budget: float = 1e-8
    max_nodes: int = 4096


def _check_sigma(sample: Sample, sigma: ScaleFactors) -> np.ndarray:
    sig = np.asarray(sigma.sigma, dtype=float)
    if sig.shape != (sample.k,):
        raise QdepError(
            f"scale factor length {sig.shape} does not match K={sample.k}"
        )
    return sig


def pi_hat_marginal(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors,
                    var: int, y: float) -> float:
    """Sample Parzen-window value of marginal ``var`` at point ``y``."""
    sig = _check_sigma(sample, sigma)
    f = k2_profile(kernel.family)
    h = kernel.bandwidth
    u = (y - sample.data[:, var]) / (sig[var] * h)
    return float(np.mean(f(u)) / h)


def pi_hat_joint(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors, y) -> float:
    """Sample Parzen-window value of the joint law at the K-vector ``y``.

    Returns ``(1/N) sum_n prod_k K2_h((y_k - Y_k(n)) / sigma_k)``.
    """
    sig = _check_sigma(sample, sigma)
    y = np.asarray(y, dtype=float)
    if y.shape != (sample.k,):
        raise QdepError(f"point must have length K={sample.k}")
    f = k2_profile(kernel.family)
    h = kernel.bandwidth
    u = (y[None, :] - sample.data) / (sig[None, :] * h)
    vals = f(u).prod(axis=1) / h ** sample.k
    return float(np.mean(vals))


def estimate_q(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors) -> QEstimate:
    """Compute Q_hat and its three terms in O(K N^2) time, O(N) extra memory.

    Deterministic: the block partition and reduction order depend only on
    N, so identical inputs give identical output bits.
    """
    sig = _check_sigma(sample, sigma)
    y = sample.data
    n, k = y.shape
    h = kernel.bandwidth
    inv_arg = 1.0 / (sig * h)
    inv_h = 1.0 / h
    profile = k2_profile(kernel.family)

    t1_parts: list[float] = []
    t3_parts: list[float] = []
    s_parts: list[list[float]] = [[] for _ in range(k)]

    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        rows = y[start:stop]
        prod = None
        rs_rows = []
        for j in range(k):
            d = (rows[:, j, None] - y[None, :, j]) * inv_arg[j]
            m = profile(d)
            m *= inv_h
            rs_rows.append(m.sum(axis=1))
            prod = m if prod is None else prod * m
        t1_parts.append(float(prod.sum()))
        block_prod = rs_rows[0].copy()
        for j in range(1, k):
            block_prod *= rs_rows[j]
        t3_parts.append(float(block_prod.sum()))
        for j in range(k):
            s_parts[j].append(float(rs_rows[j].sum()))

    nf = float(n)
    term1 = math.fsum(t1_parts) / nf**2
    col_sums = [math.fsum(p) for p in s_parts]
    term2 = 1.0
    for s in col_sums:
        term2 *= s / nf**2
    term3 = math.fsum(t3_parts) / nf ** (k + 1)
    q_hat = 0.5 * (term1 + term2 - 2.0 * term3)
    return QEstimate(q_hat=q_hat, term1=term1, term2=term2, term3=term3,
                     n=n, kernel=kernel, sigma=sigma)


# ---------------------------------------------------------------------------
# characteristic-function quadrature oracle (K = 2)
# ---------------------------------------------------------------------------


def _weight_cutoff(family: str, cut: float) -> float:
    """Smallest u0 with psi(u) <= cut * max(psi) for all u >= u0."""
    spec = KernelSpec(family, 1.0)
    grid = np.linspace(0.0, 200.0, 20001)
    vals = eval_fourier(spec, grid)
    peak = float(vals.max())
    below = np.nonzero(vals > cut * peak)[0]
    return float(grid[below[-1]] + grid[1]) if below.size else 0.0


def _weight_tail_mass(family: str, t0: float) -> float:
    """``int_{|u| > t0} psi(u) du`` for the unscaled transform."""
    if family == "gaussian":
        from scipy.special import erfc

        # 2 * sqrt(pi) * int_{t0}^inf e^{-u^2/4} du = 2 pi erfc(t0 / 2)
        return float(2.0 * np.pi * erfc(t0 / 2.0))
    if family == "cauchy2":
        return float(np.pi * (2.0 + t0) * np.exp(-t0))
    if family == "cauchy2dd":
        return float(np.pi * (t0**3 + 4.0 * t0**2 + 8.0 * t0 + 8.0) * np.exp(-t0))
    raise QdepError(f"unknown family {family!r}")


def estimate_q_cf(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors,
                  quad: QuadratureSettings | None = None) -> float:
    """Independent quadrature evaluation of Q_hat via characteristic functions.

    Integrates the weighted squared modulus of the difference between the
    empirical joint characteristic function and the product of empirical
    marginal ones:

        Q_hat = (sigma_1 sigma_2 / (2 (2 pi)^2))
                * int w_1(y_1) w_2(y_2) |psi_joint(y) - psi_1 psi_2|^2 dy

    with ``w_k(y) = psi_K2(h sigma_k y)``.  This identity is exact for any
    sample; the only error is quadrature truncation/resolution, so the
    result must match :func:`estimate_q` to quadrature tolerance.  It is
    the oracle for the kernel-trick identity.

    Restricted to K = 2 and N <= 64 (cost guard).
    """
    if quad is None:
        quad = QuadratureSettings()
    sig = _check_sigma(sample, sigma)
    if sample.k != 2:
        raise QdepError("estimate_q_cf supports K = 2 only")
    if sample.n > 64:
        raise QdepError("estimate_q_cf is limited to N <= 64")

    h = kernel.bandwidth
    # centering is exact (translation invariance) and keeps oscillation low
    yc = sample.data - sample.data.mean(axis=0, keepdims=True)
    u0 = _weight_cutoff(kernel.family, quad.cut)
    half_width = u0 / (h * sig)  # per-dimension box edge in y units

    # truncation error bound: |D|^2 <= 4, leftover mass estimated per axis
    full = [_weight_tail_mass(kernel.family, 0.0) / (h * s) for s in sig]
    tails = [_weight_tail_mass(kernel.family, u0) / (h * s) for s in sig]
    prefac = float(np.prod(sig)) / (2.0 * (2.0 * np.pi) ** 2)
    err_bound = prefac * 4.0 * (tails[0] * full[1] + full[0] * tails[1])
    if err_bound > quad.tail_budget:
        raise TruncationTooTightError(
            f"estimated mass outside truncation box {err_bound:.3e} exceeds "
            f"budget {quad.tail_budget:.3e}"
        )

    def node_count(dim: int) -> int:
        if quad.nodes is not None:
            return quad.nodes
        max_freq = float(np.abs(yc[:, dim]).max())
        cycles = half_width[dim] * max_freq / np.pi
        return int(min(quad.max_nodes, max(96, math.ceil(3.2 * cycles) + 48)))

    nodes_w = []
    for dim in range(2):
        # the weight has a |t| kink at zero: integrate the two half-axes
        # as separate Gauss-Legendre panels to keep geometric convergence
        g, w = np.polynomial.legendre.leggauss(node_count(dim))
        half = half_width[dim]
        pos = 0.5 * half * (g + 1.0)
        t = np.concatenate([-pos[::-1], pos])
        wt = np.concatenate([(0.5 * half * w)[::-1], 0.5 * half * w])
        nodes_w.append((t, wt))

    (t1, w1), (t2, w2) = nodes_w
    e1 = np.exp(1j * np.outer(t1, yc[:, 0]))
    e2 = np.exp(1j * np.outer(t2, yc[:, 1]))
    psi1 = e1.mean(axis=1)
    psi2 = e2.mean(axis=1)
    psi_joint = (e1 @ e2.T) / sample.n
    diff = psi_joint - np.outer(psi1, psi2)

    spec1 = eval_fourier(kernel, h * sig[0] * t1)
    spec2 = eval_fourier(kernel, h * sig[1] * t2)
    integrand = (np.abs(diff) ** 2) * np.outer(spec1 * w1, spec2 * w2)
    return float(prefac * integrand.sum())


# ---------------------------------------------------------------------------
# gradient with respect to the data
# ---------------------------------------------------------------------------


def q_gradient(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors) -> np.ndarray:
    """Analytic gradient ``dQ_hat / dY_k(n)`` as an N x K matrix.

    Requires user-supplied scale factors (they are held constant under
    differentiation).  Cost O(K N^2); memory O(K N) for row-sum tables.
    """
    sig = _check_sigma(sample, sigma)
    if sigma.source != USER_SUPPLIED:
        raise QdepError(
            "q_gradient requires user-supplied scale factors; "
            "differentiating through sample standard deviations is unsupported"
        )
    y = sample.data
    n, k = y.shape
    h = kernel.bandwidth
    inv_arg = 1.0 / (sig * h)
    inv_h = 1.0 / h
    d_scale = inv_arg * inv_h  # K2'(u) * 1/(sigma h^2) gives d/dY of K2_h(diff/sigma)
    profile = k2_profile(kernel.family)
    dprofile = k2_derivative_profile(kernel.family)

    # pass 1: per-variable row sums r[k, n] = sum_m g_k(n, m)
    r = np.empty((k, n))
    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        rows = y[start:stop]
        for j in range(k):
            d = (rows[:, j, None] - y[None, :, j]) * inv_arg[j]
            m = profile(d)
            m *= inv_h
            r[j, start:stop] = m.sum(axis=1)
    s = r.sum(axis=1)  # S_k = sum_{n,m} g_k(n,m)

    # leave-one-out products over variables, for rows of r
    loo_r = _leave_one_out(r)  # (k, n): prod_{l != j} r[l, n]

    grad = np.empty((n, k))
    nf = float(n)
    c_t2 = np.empty(k)
    for j in range(k):
        others = 1.0
        for l in range(k):
            if l != j:
                others *= s[l] / nf**2
        c_t2[j] = others

    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        rows = y[start:stop]
        g_rows = []
        for j in range(k):
            d = (rows[:, j, None] - y[None, :, j]) * inv_arg[j]
            m = profile(d)
            m *= inv_h
            g_rows.append(m)
        loo_g = _leave_one_out_blocks(g_rows)  # per j: (b, n) prod_{l != j} g_l
        for j in range(k):
            d = (rows[:, j, None] - y[None, :, j]) * inv_arg[j]
            dm = dprofile(d)
            dm *= d_scale[j]
            rho = dm.sum(axis=1)  # (b,)
            dt1 = (2.0 / nf**2) * (loo_g[j] * dm).sum(axis=1)
            dt2 = c_t2[j] * (2.0 / nf**2) * rho
            dt3 = (loo_r[j, start:stop] * rho + dm @ loo_r[j]) / nf ** (k + 1)
            grad[start:stop, j] = 0.5 * (dt1 + dt2 - 2.0 * dt3)
    return grad


def _leave_one_out(rows: np.ndarray) -> np.ndarray:
    """Row-wise leave-one-out products along axis 0 (no divisions)."""
    k = rows.shape[0]
    prefix = np.ones_like(rows)
    suffix = np.ones_like(rows)
    for j in range(1, k):
        prefix[j] = prefix[j - 1] * rows[j - 1]
    for j in range(k - 2, -1, -1):
        suffix[j] = suffix[j + 1] * rows[j + 1]
    return prefix * suffix


def _leave_one_out_blocks(mats: list[np.ndarray]) -> list[np.ndarray]:
    """Leave-one-out products of a list of equal-shape matrices."""
    k = len(mats)
    prefix = [None] * k
    suffix = [None] * k
    acc = np.ones_like(mats[0])
    for j in range(k):
        prefix[j] = acc
        acc = acc * mats[j]
    acc = np.ones_like(mats[0])
    for j in range(k - 1, -1, -1):
        suffix[j] = acc
        acc = acc * mats[j]
    return [prefix[j] * suffix[j] for j in range(k)]
