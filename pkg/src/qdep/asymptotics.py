"""Asymptotic machinery for the dependence estimator.

Contents:

* U-statistic decomposition of the three estimator terms, with the exact
  remainder ("b") terms and the reconstruction identity back to Q_hat;
* plug-in variance expansion under dependence (the six covariance blocks
  of the first-order Hoeffding projections and their combination
  sigma_tilde, the asymptotic variance of sqrt(N) (Q_hat - Q));
* plug-in null moments E1 = lim N E[Q_hat], V1 = lim N^2 var(Q_hat) under
  independence, and the gamma chi-square approximation they parameterize;
* the hypothesis test (gamma chi-square or permutation calibration), the
  Chebyshev power bound, and the asymptotic normal power formula.

Derivation notes (these fix several constants that are easy to get wrong):

* Q_hat = (U'_1 + U'_2 - 2 U'_3) / 2 where U'_i are the V-statistic
  terms; the factor 1/2 belongs to Q_hat itself.
* Under independence the first-order projections cancel: the combination
  sigma_tilde computed here is exactly zero for product laws (checked in
  the tests), which is what makes N Q_hat converge at all.
* The diagonal (n = m) terms of the V-statistic contribute the kernel
  peak K2_h(0) per coordinate, so the null mean E1 is built from
  c = K2_h(0) (not from the L2 norm of K2_h):

      E1 = (1/2) [ c^K - sum_k c prod_{l != k} a_l + (K-1) prod_k a_k ]

  with a_k = E[pi_k(Y_k)].  The null variance follows from the limiting
  complex Gaussian field Z of sqrt(N) (psi_joint - prod psi_k):

      V1 = (1/2) int int |C(y, y')|^2 nu(dy) nu(dy')

  whose kernel contractions reduce to a_k, b_k = E[pi_k(Y_k)^2] and
  e_k = E[K2_h((Y_k - Y'_k)/sigma_k)^2].  Both limits are validated by
  Monte Carlo in the acceptance suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations as _permutations

import numpy as np
from scipy.special import gammainc, gammaincc, gammaincinv, ndtr

from .errors import (
    DegenerateNullError,
    GapZeroError,
    QdepError,
    SampleTooSmallError,
)
from .estimator import (
    BLOCK_ROWS,
    Sample,
    ScaleFactors,
    _check_sigma,
    estimate_q,
)
from .kernels import KernelSpec, eval_k2, k2_profile


# ---------------------------------------------------------------------------
# shared pairwise accumulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _PairTables:
    """O(K N) summaries of the pairwise kernel evaluations.

    row_sums[k, n]   = sum_m g_k(n, m)
    joint_rows[n]    = sum_m prod_k g_k(n, m)
    sq_sums[k]       = sum_{n,m} g_k(n, m)^2
    peak             = K2_h(0)   (diagonal value, sigma-independent)
    """

    row_sums: np.ndarray
    joint_rows: np.ndarray
    sq_sums: np.ndarray
    peak: float


def _pair_tables(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors,
                 with_squares: bool = False) -> _PairTables:
    sig = _check_sigma(sample, sigma)
    y = sample.data
    n, k = y.shape
    h = kernel.bandwidth
    inv_arg = 1.0 / (sig * h)
    inv_h = 1.0 / h
    profile = k2_profile(kernel.family)

    row_sums = np.empty((k, n))
    joint_rows = np.empty(n)
    sq_sums = np.zeros(k)
    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        rows = y[start:stop]
        prod = None
        for j in range(k):
            d = (rows[:, j, None] - y[None, :, j]) * inv_arg[j]
            m = profile(d)
            m *= inv_h
            row_sums[j, start:stop] = m.sum(axis=1)
            if with_squares:
                sq_sums[j] += float(np.square(m).sum())
            prod = m if prod is None else prod * m
        joint_rows[start:stop] = prod.sum(axis=1)
    peak = float(eval_k2(kernel, 0.0))
    return _PairTables(row_sums, joint_rows, sq_sums, peak)


def _leave_one_out_rows(rows: np.ndarray) -> np.ndarray:
    k = rows.shape[0]
    pre = np.ones_like(rows)
    suf = np.ones_like(rows)
    for j in range(1, k):
        pre[j] = pre[j - 1] * rows[j - 1]
    for j in range(k - 2, -1, -1):
        suf[j] = suf[j + 1] * rows[j + 1]
    return pre * suf


# ---------------------------------------------------------------------------
# U-statistic decomposition
# ---------------------------------------------------------------------------


def _falling(n: int, r: int) -> float:
    out = 1.0
    for i in range(r):
        out *= n - i
    return out


@dataclass(frozen=True)
class UStatDecomposition:
    """U-statistics behind the three estimator terms plus exact remainders.

    ``u1``, ``u2``, ``u3`` average the respective products over index
    tuples with *all distinct* entries; ``b1``, ``b2``, ``b3`` are the
    exact diagonal remainders, scaled by sqrt(N) so that

        U'_i = prefactor_i * u_i + b_i / sqrt(N)

    with prefactors (N-1)/N, (N)_{2K}/N^{2K} and (N)_{K+1}/N^{K+1}.
    ``q_hat_reconstructed`` recombines everything through the estimator's
    own 1/2 and must match ``estimate_q`` to float precision.
    """

    u1: float
    u2: float
    u3: float
    b1: float
    b2: float
    b3: float
    q_hat_reconstructed: float
    n: int
    k: int

    @property
    def uprime1(self) -> float:
        return (self.n - 1) / self.n * self.u1 + self.b1 / math.sqrt(self.n)

    @property
    def uprime2(self) -> float:
        pre = _falling(self.n, 2 * self.k) / float(self.n) ** (2 * self.k)
        return pre * self.u2 + self.b2 / math.sqrt(self.n)

    @property
    def uprime3(self) -> float:
        pre = _falling(self.n, self.k + 1) / float(self.n) ** (self.k + 1)
        return pre * self.u3 + self.b3 / math.sqrt(self.n)

    @property
    def unbiased_q(self) -> float:
        """(u1 + u2 - 2 u3) / 2: exactly unbiased for Q at every N."""
        return 0.5 * (self.u1 + self.u2 - 2.0 * self.u3)


def _pair_product_matrix(sample: Sample, kernel: KernelSpec,
                         sigma: ScaleFactors, j: int) -> np.ndarray:
    sig = _check_sigma(sample, sigma)
    col = sample.data[:, j]
    h = kernel.bandwidth
    d = (col[:, None] - col[None, :]) / (sig[j] * h)
    return k2_profile(kernel.family)(d) / h


def _u2_u3_enumerated(sample: Sample, kernel: KernelSpec,
                      sigma: ScaleFactors) -> tuple[float, float]:
    """Direct enumeration over distinct index tuples (any K, O(N^{2K}))."""
    n, k = sample.n, sample.k
    if _falling(n, 2 * k) > 5e6:
        raise QdepError(
            "enumerated U-statistics limited to (N)_{2K} <= 5e6; "
            f"got N={n}, K={k}"
        )
    mats = [_pair_product_matrix(sample, kernel, sigma, j) for j in range(k)]
    acc2 = 0.0
    for idx in _permutations(range(n), 2 * k):
        prod = 1.0
        for j in range(k):
            prod *= mats[j][idx[j], idx[k + j]]
        acc2 += prod
    u2 = acc2 / _falling(n, 2 * k)
    acc3 = 0.0
    for idx in _permutations(range(n), k + 1):
        j_last = idx[k]
        prod = 1.0
        for j in range(k):
            prod *= mats[j][idx[j], j_last]
        acc3 += prod
    u3 = acc3 / _falling(n, k + 1)
    return u2, u3


def _u2_u3_pairwise_k2(tables: _PairTables, n: int,
                       term1: float) -> tuple[float, float]:
    """O(N^2) closed forms for K = 2 (inclusion-exclusion over overlaps)."""
    c = tables.peak
    r_off = tables.row_sums - c  # off-diagonal row sums per variable
    a1 = float(tables.row_sums[0].sum()) - n * c
    a2 = float(tables.row_sums[1].sum()) - n * c
    pair_sum_off = n * n * term1 - n * c * c  # sum_{i != j} g1 g2
    cross = float((r_off[0] * r_off[1]).sum())
    u2_num = a1 * a2 - 4.0 * cross + 2.0 * pair_sum_off
    u2 = u2_num / _falling(n, 4)
    # sum_j [ R1(j) R2(j) - sum_{i != j} g1(i,j) g2(i,j) ]
    joint_off = tables.joint_rows - c * c
    u3 = (cross - float(joint_off.sum())) / _falling(n, 3)
    return u2, u3


def ustat_decompose(sample: Sample, kernel: KernelSpec,
                    sigma: ScaleFactors) -> UStatDecomposition:
    """Split the three estimator terms into U-statistics plus remainders.

    Requires N >= 2K so the fully-distinct index sets are nonempty.
    K = 2 uses O(N^2) identities; larger K falls back to enumeration
    (O(N^{2K}), guarded).
    """
    n, k = sample.n, sample.k
    if n < 2 * k:
        raise SampleTooSmallError(f"need N >= 2K, got N={n}, K={k}")
    qe = estimate_q(sample, kernel, sigma)
    tables = _pair_tables(sample, kernel, sigma)
    c_joint = tables.peak ** k

    u1 = (n * n * qe.term1 - n * c_joint) / (n * (n - 1))
    b1 = c_joint / math.sqrt(n)

    if k == 2:
        u2, u3 = _u2_u3_pairwise_k2(tables, n, qe.term1)
    else:
        u2, u3 = _u2_u3_enumerated(sample, kernel, sigma)

    pre2 = _falling(n, 2 * k) / float(n) ** (2 * k)
    pre3 = _falling(n, k + 1) / float(n) ** (k + 1)
    b2 = math.sqrt(n) * (qe.term2 - pre2 * u2)
    b3 = math.sqrt(n) * (qe.term3 - pre3 * u3)

    up1 = (n - 1) / n * u1 + b1 / math.sqrt(n)
    up2 = pre2 * u2 + b2 / math.sqrt(n)
    up3 = pre3 * u3 + b3 / math.sqrt(n)
    q_rec = 0.5 * (up1 + up2 - 2.0 * up3)
    return UStatDecomposition(u1=u1, u2=u2, u3=u3, b1=b1, b2=b2, b3=b3,
                              q_hat_reconstructed=q_rec, n=n, k=k)


def unbiased_q(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors) -> float:
    """Exactly unbiased estimate of Q: the distinct-index combination."""
    return ustat_decompose(sample, kernel, sigma).unbiased_q


# ---------------------------------------------------------------------------
# variance expansion under dependence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarianceExpansion:
    """Plug-in covariance blocks of the projected U-statistics.

    ``sigma_tilde`` is the plug-in asymptotic variance of
    sqrt(N) (Q_hat - Q); ``var_leading = sigma_tilde / N`` approximates
    var(Q_hat) to first order.  The blocks satisfy, identically,

        sigma_tilde = 4 s11 + 4 K^2 s22 + 4 (K+1)^2 s33
                      - 8 (K+1) s13 - 8 K (K+1) s23 + 8 K s12.
    """

    sigma11: float
    sigma12: float
    sigma13: float
    sigma22: float
    sigma23: float
    sigma33: float
    theta1: float
    theta2: float
    theta3: float
    sigma_tilde: float
    var_leading: float
    n: int
    k: int


def variance_expansion(sample: Sample, kernel: KernelSpec,
                       sigma: ScaleFactors) -> VarianceExpansion:
    """Plug-in estimates of the projection covariance blocks, O(K N^2).

    Every population moment is replaced by its V-statistic average
    (diagonals included).  The smoothed-cross function

        pi_tilde_l(y) = E[ prod_{k != l} pi_k(Y_k) * K2_h((Y_l - y)/sigma_l) ]

    is estimated by the nested plug-in with pi_hat inside.
    """
    sig = _check_sigma(sample, sigma)
    y = sample.data
    n, k = y.shape
    h = kernel.bandwidth
    inv_arg = 1.0 / (sig * h)
    inv_h = 1.0 / h
    profile = k2_profile(kernel.family)

    tables = _pair_tables(sample, kernel, sigma)
    pi_k = tables.row_sums / n          # (k, n): pi_hat_k(Y_k(n))
    pi_joint = tables.joint_rows / n    # (n,):   pi_hat_Y(Y(n))
    a = pi_k.mean(axis=1)               # a_k = E-hat[pi_k]
    loo_pi = _leave_one_out_rows(pi_k)  # (k, n): prod_{l != k} pi_l(Y(n))
    prod_pi = pi_k[0] * loo_pi[0]       # prod over all k

    # pi_tilde_l at the sample points: (1/N) sum_n loo_pi[l, n] g_l(n, m)
    pi_tilde = np.zeros((k, n))
    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        rows = y[start:stop]
        for j in range(k):
            d = (rows[:, j, None] - y[None, :, j]) * inv_arg[j]
            m = profile(d)
            m *= inv_h
            pi_tilde[j] += loo_pi[j, start:stop] @ m
    pi_tilde /= n

    theta1 = float(pi_joint.mean())
    theta2 = float(np.prod(a))
    theta3 = float(prod_pi.mean())

    loo_a = np.empty(k)
    for j in range(k):
        loo_a[j] = float(np.prod(np.delete(a, j)))

    e_pj2 = float(np.mean(pi_joint ** 2))
    e_pl_pj = np.array([float(np.mean(pi_k[l] * pi_joint)) for l in range(k)])
    e_pj_prod = float(np.mean(pi_joint * prod_pi))
    e_pj_pt = np.array([float(np.mean(pi_joint * pi_tilde[l])) for l in range(k)])
    e_pl_pm = pi_k @ pi_k.T / n
    e_prod2 = float(np.mean(prod_pi ** 2))
    e_pt_pt = pi_tilde @ pi_tilde.T / n
    e_prod_pt = np.array([float(np.mean(prod_pi * pi_tilde[l])) for l in range(k)])
    e_pk_pt = pi_k @ pi_tilde.T / n  # [k, m] = E[pi_k * pi_tilde_m]

    z11 = e_pj2 - theta1 ** 2
    z12 = float(np.mean(loo_a * e_pl_pj)) - theta1 * theta2
    z13 = (e_pj_prod + float(e_pj_pt.sum())) / (k + 1) - theta1 * theta3
    z22 = float(loo_a @ e_pl_pm @ loo_a) / k**2 - theta2 ** 2
    e_pk_prod = np.array([float(np.mean(pi_k[j] * prod_pi)) for j in range(k)])
    z23 = (float(loo_a @ e_pk_prod) + float(loo_a @ e_pk_pt.sum(axis=1))) \
        / (k * (k + 1)) - theta2 * theta3
    z33 = (e_prod2 + float(e_pt_pt.sum()) + 2.0 * float(e_prod_pt.sum())) \
        / (k + 1) ** 2 - theta3 ** 2

    s11, s12, s13 = z11 / 4.0, z12 / 4.0, z13 / 4.0
    s22, s23, s33 = z22 / 4.0, z23 / 4.0, z33 / 4.0
    sigma_tilde = (4.0 * s11 + 4.0 * k**2 * s22 + 4.0 * (k + 1) ** 2 * s33
                   - 8.0 * (k + 1) * s13 - 8.0 * k * (k + 1) * s23
                   + 8.0 * k * s12)
    return VarianceExpansion(
        sigma11=s11, sigma12=s12, sigma13=s13, sigma22=s22, sigma23=s23,
        sigma33=s33, theta1=theta1, theta2=theta2, theta3=theta3,
        sigma_tilde=sigma_tilde, var_leading=sigma_tilde / n, n=n, k=k,
    )


# ---------------------------------------------------------------------------
# null moments and the gamma chi-square approximation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NullApprox:
    """Plug-in E1, V1 and the matched gamma chi-square parameters."""

    e1: float
    v1: float
    gamma: float
    beta: float


def null_moments(sample: Sample, kernel: KernelSpec,
                 sigma: ScaleFactors) -> NullApprox:
    """Plug-in limiting mean and variance of N Q_hat under independence.

    Ingredients (V-statistic plug-ins, diagonals included):

        a_k = (1/N^2) sum_{n,m} g_k(n,m)
        b_k = (1/N)   sum_n   pi_hat_k(Y_k(n))^2
        e_k = (1/N^2) sum_{n,m} g_k(n,m)^2
        c   = K2_h(0)

    Raises :class:`DegenerateNullError` when the plug-in E1 or V1 is not
    positive (the approximation is unusable; use permutation calibration).
    """
    tables = _pair_tables(sample, kernel, sigma, with_squares=True)
    n, k = sample.n, sample.k
    pi_k = tables.row_sums / n
    a = pi_k.mean(axis=1)
    b = np.mean(pi_k ** 2, axis=1)
    e = tables.sq_sums / n**2
    c = tables.peak

    loo_a = np.array([float(np.prod(np.delete(a, j))) for j in range(k)])
    e1 = 0.5 * (c**k - c * float(loo_a.sum()) + (k - 1) * float(np.prod(a)))

    a2 = a * a
    loo_b = np.array([float(np.prod(np.delete(b, j))) for j in range(k)])
    loo_a2 = np.array([float(np.prod(np.delete(a2, j))) for j in range(k)])
    pair_bb_a2 = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                rest = np.prod(np.delete(a2, [i, j])) if k > 2 else 1.0
                pair_bb_a2 += b[i] * b[j] * float(rest)
    v1 = 0.5 * (
        float(np.prod(e))
        - 2.0 * float((e * loo_b).sum())
        + float((e * loo_a2).sum())
        + pair_bb_a2
        + 2.0 * (k - 1) * float(np.prod(b))
        - 2.0 * (k - 1) * float((b * loo_a2).sum())
        + (k - 1) ** 2 * float(np.prod(a2))
    )
    if e1 <= 0.0 or v1 <= 0.0:
        raise DegenerateNullError(e1, v1)
    return NullApprox(e1=e1, v1=v1, gamma=v1 / (2.0 * e1), beta=2.0 * e1**2 / v1)


def gamma_chi2_cdf(x, gamma: float, beta: float):
    """CDF of gamma * ChiSquare(beta) via the regularized incomplete gamma."""
    return gammainc(beta / 2.0, np.maximum(np.asarray(x, dtype=float), 0.0)
                    / (2.0 * gamma))


def gamma_chi2_sf(x, gamma: float, beta: float):
    """Upper tail of gamma * ChiSquare(beta)."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.0, 1.0, gammaincc(beta / 2.0, x / (2.0 * gamma)))


def gamma_chi2_quantile(p: float, gamma: float, beta: float) -> float:
    """Quantile of gamma * ChiSquare(beta) (monotone inverse to 1e-10+)."""
    if not 0.0 < p < 1.0:
        raise QdepError("quantile level must be in (0, 1)")
    return float(2.0 * gamma * gammaincinv(beta / 2.0, p))


# ---------------------------------------------------------------------------
# hypothesis test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaChiSquare:
    """Calibrate with the plug-in gamma chi-square null approximation."""


@dataclass(frozen=True)
class Permutation:
    """Calibrate by independently permuting every column except the first."""

    b: int = 999
    seed: int = 0


@dataclass(frozen=True)
class TestResult:
    q_hat: float
    alpha: float
    q_alpha: float
    reject: bool
    p_value: float
    calibration: str
    null_approx: NullApprox | None = None
    power_lower_bound: float | None = None


_PERM_FAST_PATH_LIMIT = 40_000_000  # K * N^2 elements


def _permutation_stream(sample: Sample, kernel: KernelSpec,
                        sigma: ScaleFactors, seed: int):
    """Iterator of Q_hat values over column-permuted copies of the sample.

    Columns 2..K are independently row-permuted per draw.  Precomputed
    kernel matrices avoid kernel re-evaluation when they fit in memory;
    otherwise the estimator is re-run on permuted data.  Both paths are
    exact and the stream is a pure function of ``seed``.
    """
    n, k = sample.n, sample.k
    rng = np.random.Generator(np.random.Philox(key=[np.uint64(seed),
                                                    np.uint64(0x9E3779B97F4A7C15)]))
    if k * n * n <= _PERM_FAST_PATH_LIMIT:
        mats = [_pair_product_matrix(sample, kernel, sigma, j) for j in range(k)]
        rowsums = [m.sum(axis=1) for m in mats]
        col_means = [float(rs.sum()) / n**2 for rs in rowsums]
        term2 = float(np.prod(col_means))
        nf = float(n)
        while True:
            perms = [rng.permutation(n) for _ in range(k - 1)]
            prod = mats[0]
            for j in range(1, k):
                prod = prod * mats[j][np.ix_(perms[j - 1], perms[j - 1])]
            term1 = float(prod.sum()) / nf**2
            rs_prod = rowsums[0].copy()
            for j in range(1, k):
                rs_prod = rs_prod * rowsums[j][perms[j - 1]]
            term3 = float(rs_prod.sum()) / nf ** (k + 1)
            yield 0.5 * (term1 + term2 - 2.0 * term3)
    else:
        while True:
            data = sample.data.copy()
            for j in range(1, k):
                data[:, j] = data[rng.permutation(n), j]
            yield estimate_q(Sample(data), kernel, sigma).q_hat


def _permutation_q_values(sample: Sample, kernel: KernelSpec,
                          sigma: ScaleFactors, b: int, seed: int) -> np.ndarray:
    """Q_hat over b datasets with columns 2..K independently row-permuted."""
    stream = _permutation_stream(sample, kernel, sigma, seed)
    return np.array([next(stream) for _ in range(b)])


def permutation_reject(sample: Sample, kernel: KernelSpec,
                       sigma: ScaleFactors, alpha: float, b: int,
                       seed: int, q_hat: float | None = None) -> bool:
    """Permutation-test decision with early stopping.

    Rejection requires at most ``floor(alpha (b+1)) - 1`` of the ``b``
    permuted values to reach the observed statistic; the scan stops as
    soon as that count is exceeded, which cannot change the decision.
    The outcome is identical to evaluating all ``b`` permutations.
    """
    if q_hat is None:
        q_hat = estimate_q(sample, kernel, sigma).q_hat
    m = int(math.floor(alpha * (b + 1)))
    if m < 1:
        return False
    stream = _permutation_stream(sample, kernel, sigma, seed)
    count = 0
    for _ in range(b):
        if next(stream) >= q_hat:
            count += 1
            if count > m - 1:
                return False
    return True


def run_test(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors,
             alpha: float, calibration: GammaChiSquare | Permutation = GammaChiSquare(),
             alternative_q: float | None = None,
             bound_mode: str = "linear") -> TestResult:
    """Test mutual independence at level ``alpha``.

    Gamma chi-square calibration: q_alpha is the (1 - alpha) quantile of
    gamma ChiSquare(beta) / N and the p-value is the fitted upper tail of
    N Q_hat.  Permutation calibration: q_alpha is the appropriate order
    statistic of the permuted Q_hat values and

        p = (1 + #{permuted Q_hat >= observed}) / (B + 1).

    When ``alternative_q`` is given, a lower bound on power against that
    alternative is attached (see :func:`power_lower_bound`), using the
    plug-in ``var_leading`` for var(Q_hat).
    """
    if not 0.0 < alpha < 1.0:
        raise QdepError("alpha must be in (0, 1)")
    qe = estimate_q(sample, kernel, sigma)
    n = sample.n
    null = None
    if isinstance(calibration, GammaChiSquare):
        null = null_moments(sample, kernel, sigma)
        q_alpha = gamma_chi2_quantile(1.0 - alpha, null.gamma, null.beta) / n
        p_value = float(gamma_chi2_sf(n * qe.q_hat, null.gamma, null.beta))
        label = "gamma-chi2"
    elif isinstance(calibration, Permutation):
        perm = _permutation_q_values(sample, kernel, sigma,
                                     calibration.b, calibration.seed)
        m = int(math.floor(alpha * (calibration.b + 1)))
        if m < 1:
            q_alpha = float("inf")
        else:
            q_alpha = float(np.sort(perm)[calibration.b - m])
        p_value = float((1 + np.count_nonzero(perm >= qe.q_hat))
                        / (calibration.b + 1))
        label = "permutation"
    else:
        raise QdepError(f"unknown calibration {calibration!r}")

    reject = bool(qe.q_hat > q_alpha)
    bound = None
    if alternative_q is not None:
        var_hat = variance_expansion(sample, kernel, sigma).var_leading
        bound = power_lower_bound(alternative_q, q_alpha, var_hat, mode=bound_mode)
    return TestResult(q_hat=qe.q_hat, alpha=alpha, q_alpha=q_alpha,
                      reject=reject, p_value=p_value, calibration=label,
                      null_approx=null, power_lower_bound=bound)


def power_lower_bound(q: float, q_alpha: float, var_qhat: float,
                      mode: str = "linear") -> float:
    """Lower bound on test power against an alternative with measure ``q``.

    ``mode="linear"`` evaluates the signed unsquared-gap form
    ``1 - var / (q_alpha - q)`` and clamps to [0, 1]; it is not a genuine
    Chebyshev bound (it saturates at 1 whenever q > q_alpha).
    ``mode="chebyshev"`` uses ``1 - var / (q_alpha - q)^2``, which the
    inequality actually yields and which is valid whenever q > q_alpha.
    """
    if q_alpha == q:
        raise GapZeroError("power bound undefined: q_alpha equals q")
    if var_qhat < 0.0:
        raise QdepError("var_qhat must be nonnegative")
    if mode == "linear":
        raw = 1.0 - var_qhat / (q_alpha - q)
    elif mode == "chebyshev":
        raw = 1.0 - var_qhat / (q_alpha - q) ** 2
    else:
        raise QdepError(f"unknown bound mode {mode!r}")
    return float(min(1.0, max(0.0, raw)))


def asymptotic_power(q: float, sigma_tilde: float, n: int, q_alpha: float) -> float:
    """Normal-approximation power ``1 - Phi((q_alpha - q) sqrt(N / sigma_tilde))``."""
    if sigma_tilde <= 0.0:
        raise QdepError("sigma_tilde must be positive")
    z = (q_alpha - q) * math.sqrt(n / sigma_tilde)
    return float(1.0 - ndtr(z))
