"""Exact and brute-force reference computations.

Everything here is deliberately independent of the fast paths in
:mod:`qdep.estimator`: literal transcriptions, exact finite sums over
discrete joints, grid quadrature, and closed forms for the bivariate
Gaussian case.  These are the oracles the rest of the package is tested
against.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import GridTooCoarseError, QdepError
from .estimator import Sample, ScaleFactors, _check_sigma
from .kernels import KernelSpec, eval_k2, k2_profile


@dataclass(frozen=True)
class DiscreteJoint:
    """A finite joint law: M atom locations (M x K) with probabilities."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        sup = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if sup.ndim != 2 or sup.shape[0] < 1:
            raise QdepError("support must be an M x K matrix with M >= 1")
        if p.shape != (sup.shape[0],):
            raise QdepError("probs length must match the number of atoms")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-12:
            raise QdepError("probs must be nonnegative and sum to 1 (tol 1e-12)")
        if len({tuple(row) for row in sup}) != sup.shape[0]:
            raise QdepError("atoms must be distinct rows")
        sup = sup.copy()
        p = p.copy()
        sup.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", p)

    @property
    def m(self) -> int:
        return self.support.shape[0]

    @property
    def k(self) -> int:
        return self.support.shape[1]

    def to_json(self) -> str:
        return json.dumps({"atoms": self.support.tolist(),
                           "probs": self.probs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "DiscreteJoint":
        obj = json.loads(text)
        return cls(np.asarray(obj["atoms"], dtype=float),
                   np.asarray(obj["probs"], dtype=float))

    def marginal(self, var: int) -> tuple[np.ndarray, np.ndarray]:
        """Distinct values and probabilities of one coordinate."""
        vals, inv = np.unique(self.support[:, var], return_inverse=True)
        p = np.zeros(vals.size)
        np.add.at(p, inv, self.probs)
        return vals, p

    def product_of_marginals(self) -> "DiscreteJoint":
        """The product measure with the same marginals."""
        grids = [self.marginal(j) for j in range(self.k)]
        mesh = np.meshgrid(*[g[0] for g in grids], indexing="ij")
        atoms = np.column_stack([m.ravel() for m in mesh])
        probs = np.ones(atoms.shape[0])
        shape = [g[0].size for g in grids]
        pm = np.ones(shape)
        for j, (_, p) in enumerate(grids):
            bshape = [1] * self.k
            bshape[j] = p.size
            pm = pm * p.reshape(bshape)
        return DiscreteJoint(atoms, pm.ravel())

    def tv_from_product(self) -> float:
        """Total-variation distance to the product of its own marginals."""
        prod = self.product_of_marginals()
        table: dict[tuple, float] = {tuple(a): 0.0 for a in prod.support}
        for a, p in zip(prod.support, prod.probs):
            table[tuple(a)] = -p
        for a, p in zip(self.support, self.probs):
            table[tuple(a)] = table.get(tuple(a), 0.0) + p
        return 0.5 * sum(abs(v) for v in table.values())


def _atom_kernel_matrices(joint: DiscreteJoint, kernel: KernelSpec,
                          sigma_vals: np.ndarray) -> list[np.ndarray]:
    f = k2_profile(kernel.family)
    h = kernel.bandwidth
    mats = []
    for j in range(joint.k):
        col = joint.support[:, j]
        d = (col[:, None] - col[None, :]) / (sigma_vals[j] * h)
        mats.append(f(d) / h)
    return mats


def exact_q_discrete(joint: DiscreteJoint, kernel: KernelSpec,
                     sigma: ScaleFactors) -> float:
    """Exact Q for a finite discrete joint (double sums over atoms).

    Evaluates the three population expectations of the kernel-trick
    formula exactly:

        term1 = sum_{a,b} p_a p_b prod_k G_k(a, b)
        term2 = prod_k sum_{a,b} p_a p_b G_k(a, b)
        term3 = sum_a p_a prod_k sum_b p_b G_k(a, b)

    with G_k(a, b) = K2_h((x_a[k] - x_b[k]) / sigma_k).  Cost O(K M^2).
    This value is the ground truth for the unbiasedness experiments.
    """
    sig = np.asarray(sigma.sigma, dtype=float)
    if sig.shape != (joint.k,):
        raise QdepError("scale factor length must match the joint dimension")
    if sigma.source != "user":
        raise QdepError("exact_q_discrete requires user-supplied scale factors")
    mats = _atom_kernel_matrices(joint, kernel, sig)
    p = joint.probs
    full = np.ones_like(mats[0])
    for g in mats:
        full = full * g
    term1 = float(p @ full @ p)
    term2 = 1.0
    for g in mats:
        term2 *= float(p @ g @ p)
    term3_rows = np.ones(joint.m)
    for g in mats:
        term3_rows = term3_rows * (g @ p)
    term3 = float(p @ term3_rows)
    return 0.5 * (term1 + term2 - 2.0 * term3)


def exact_q_discrete_recheck(joint: DiscreteJoint, kernel: KernelSpec,
                             sigma: ScaleFactors) -> float:
    """Independently coded evaluation of the same expectations (pure loops).

    Kept deliberately naive; used to cross-check :func:`exact_q_discrete`.
    """
    sig = np.asarray(sigma.sigma, dtype=float)
    spec = kernel
    m, k = joint.m, joint.k
    p = joint.probs
    x = joint.support
    t1 = 0.0
    for a in range(m):
        for b in range(m):
            prod = 1.0
            for j in range(k):
                prod *= float(eval_k2(spec, (x[a, j] - x[b, j]) / sig[j]))
            t1 += p[a] * p[b] * prod
    t2 = 1.0
    for j in range(k):
        acc = 0.0
        for a in range(m):
            for b in range(m):
                acc += p[a] * p[b] * float(eval_k2(spec, (x[a, j] - x[b, j]) / sig[j]))
        t2 *= acc
    t3 = 0.0
    for a in range(m):
        prod = 1.0
        for j in range(k):
            acc = 0.0
            for b in range(m):
                acc += p[b] * float(eval_k2(spec, (x[a, j] - x[b, j]) / sig[j]))
            prod *= acc
        t3 += p[a] * prod
    return 0.5 * (t1 + t2 - 2.0 * t3)


def naive_q(sample: Sample, kernel: KernelSpec, sigma: ScaleFactors) -> float:
    """Literal triple-nested transcription of the estimator (N <= 256).

    No algebraic reuse; agreement with :func:`qdep.estimator.estimate_q`
    to 1e-12 is a standing property test.
    """
    sig = _check_sigma(sample, sigma)
    n, k = sample.n, sample.k
    if n > 256:
        raise QdepError("naive_q is a reference path limited to N <= 256")
    y = sample.data
    term1 = 0.0
    for a in range(n):
        for b in range(n):
            prod = 1.0
            for j in range(k):
                prod *= float(eval_k2(kernel, (y[a, j] - y[b, j]) / sig[j]))
            term1 += prod
    term1 /= n * n
    term2 = 1.0
    for j in range(k):
        acc = 0.0
        for a in range(n):
            for b in range(n):
                acc += float(eval_k2(kernel, (y[a, j] - y[b, j]) / sig[j]))
        term2 *= acc / (n * n)
    term3 = 0.0
    for a in range(n):
        prod = 1.0
        for j in range(k):
            acc = 0.0
            for b in range(n):
                acc += float(eval_k2(kernel, (y[a, j] - y[b, j]) / sig[j]))
            prod *= acc / n
        term3 += prod
    term3 /= n
    return 0.5 * (term1 + term2 - 2.0 * term3)


# ---------------------------------------------------------------------------
# density limit (K = 2)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityPair:
    """A smooth bivariate density with its marginals on a box.

    ``box`` is ((x_lo, x_hi), (y_lo, y_hi)); ``grid`` is the number of
    points per axis at the coarse resolution (the Richardson check also
    evaluates at 2 * grid - 1).
    """

    joint_pdf: Callable[[np.ndarray, np.ndarray], np.ndarray]
    marginal_pdfs: Sequence[Callable[[np.ndarray], np.ndarray]]
    box: tuple[tuple[float, float], tuple[float, float]]
    grid: int = 201

    def __post_init__(self):
        if len(self.marginal_pdfs) != 2:
            raise QdepError("DensityPair is restricted to K = 2")
        if self.grid < 33 or self.grid % 2 == 0:
            raise QdepError("grid must be an odd integer >= 33 (Simpson rule)")
        mass = _simpson_2d(self.joint_pdf, self.box, self.grid)
        if abs(mass - 1.0) > 1e-3:
            raise QdepError(
                f"joint density mass on the box is {mass:.6f}, expected 1 (tol 1e-3)"
            )


def _simpson_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def _simpson_2d(f, box, grid: int) -> float:
    (x0, x1), (y0, y1) = box
    xs = np.linspace(x0, x1, grid)
    ys = np.linspace(y0, y1, grid)
    hx = (x1 - x0) / (grid - 1)
    hy = (y1 - y0) / (grid - 1)
    vals = f(xs[:, None], ys[None, :])
    wx = _simpson_weights(grid) * hx
    wy = _simpson_weights(grid) * hy
    return float(wx @ vals @ wy)


def density_limit_q(pair: DensityPair) -> float:
    """``(1/2) int (p_joint(y) - p_1(y_1) p_2(y_2))^2 dy`` by grid quadrature.

    Evaluated with a 2-D Simpson rule at the pair's resolution and at
    double resolution; raises :class:`GridTooCoarseError` if the two
    disagree by more than 1e-4 relative.

    This is the small-bandwidth limit of Q up to an explicit constant:
    because the K2 families are not density kernels and Q carries the
    scale standardization,

        lim_{h -> 0} Q = (prod_k sigma_k) * (int K2)^K * density_limit_q

    (the kernel mass ``int K2`` is :func:`qdep.kernels.kernel_mass`).
    The convergence sweep in the test suite exercises exactly this
    identity for the Gaussian case.
    """

    def sq_diff(x, y):
        d = pair.joint_pdf(x, y) - pair.marginal_pdfs[0](x) * pair.marginal_pdfs[1](y)
        return d * d

    coarse = 0.5 * _simpson_2d(sq_diff, pair.box, pair.grid)
    fine = 0.5 * _simpson_2d(sq_diff, pair.box, 2 * pair.grid - 1)
    scale = max(abs(fine), 1e-12)  # below 1e-12 the integral is zero in practice
    if abs(fine - coarse) / scale > 1e-4:
        raise GridTooCoarseError(
            f"Simpson values {coarse:.8e} and {fine:.8e} disagree beyond 1e-4 relative"
        )
    return fine


# ---------------------------------------------------------------------------
# bivariate Gaussian closed form (Gaussian kernel)
# ---------------------------------------------------------------------------


def bivariate_gaussian_q(rho: float, h: float, sigma: Sequence[float] = (1.0, 1.0),
                         marginal_sd: float = 1.0) -> float:
    """Exact Q for a standard bivariate Gaussian and the Gaussian kernel.

    For (Y1, Y2) jointly Gaussian with common marginal sd ``s`` and
    correlation ``rho``, kernel K2_h(u) = exp(-(u/h)^2)/h, and scale
    factors ``sigma``, each term reduces to a Gaussian expectation of the
    form E[exp(-z' A z)] = det(I + 2 C A)^{-1/2}:

        E pi_Y      : (Y - Y') ~ N(0, 2 C),  A = diag(1/(h sigma_k)^2)
        E pi_k      : 1-D case of the same
        E prod pi_k : pi_k(y) has an explicit Gaussian shape; the outer
                      expectation is again of the quadratic-form type.

    Used as the exact reference for the small-bandwidth convergence sweep
    and for power analyses on the copy-plus-noise scenario (which is a
    bivariate Gaussian after standardization).
    """
    if not -1.0 < rho < 1.0:
        raise QdepError("need |rho| < 1")
    s = float(marginal_sd)
    s1, s2 = float(sigma[0]), float(sigma[1])
    a1 = 1.0 / (h * s1) ** 2
    a2 = 1.0 / (h * s2) ** 2
    v = s * s

    # E pi_Y: (U, V) = Y - Y' ~ N(0, 2C), C = v [[1, rho], [rho, 1]]
    c11 = 2.0 * v
    c12 = 2.0 * v * rho
    det1 = (1.0 + 2.0 * c11 * a1) * (1.0 + 2.0 * c11 * a2) - 4.0 * a1 * a2 * c12 * c12
    e_pi_joint = det1 ** -0.5 / (h * h)

    # E pi_k: U ~ N(0, 2v)
    e_pi_1 = (1.0 + 4.0 * v * a1) ** -0.5 / h
    e_pi_2 = (1.0 + 4.0 * v * a2) ** -0.5 / h

    # pi_k(y) = (1/h) (1 + 2 v a_k)^{-1/2} exp(-y^2 a_k / (1 + 2 v a_k));
    # E[pi_1(Y1) pi_2(Y2)] is a quadratic-form expectation under C = v Sigma
    b1 = a1 / (1.0 + 2.0 * v * a1)
    b2 = a2 / (1.0 + 2.0 * v * a2)
    pref = (1.0 + 2.0 * v * a1) ** -0.5 * (1.0 + 2.0 * v * a2) ** -0.5 / (h * h)
    det3 = (1.0 + 2.0 * v * b1) * (1.0 + 2.0 * v * b2) - 4.0 * b1 * b2 * (v * rho) ** 2
    e_pi_prod = pref * det3 ** -0.5

    return 0.5 * (e_pi_joint + e_pi_1 * e_pi_2 - 2.0 * e_pi_prod)


def rotated_uniform_q(kernel: KernelSpec, nodes: int = 160) -> float:
    """Exact Q for two iid unit-variance uniforms rotated by pi/4.

    With X uniform on [-sqrt(3), sqrt(3)]^2 and Y the 45-degree rotation,
    the pair differences reduce to triangular laws:

      * Y - Y' = R (X - X') with (X - X') iid triangular on +-2 sqrt(3);
      * each margin Y_k is triangular on +-sqrt(6).

    All three expectations become low-dimensional integrals of smooth
    kernels against piecewise-linear densities, evaluated here with
    Gauss-Legendre panels split at the density kinks.  Scale factors are
    the true unit standard deviations.
    """
    h = kernel.bandwidth
    f = k2_profile(kernel.family)

    def k2h(x):
        return f(x / h) / h

    def split_gl(lim: float, n: int):
        g, w = np.polynomial.legendre.leggauss(n)
        pos = 0.5 * lim * (g + 1.0)
        pw = 0.5 * lim * w
        return np.concatenate([-pos[::-1], pos]), np.concatenate([pw[::-1], pw])

    two_r3 = 2.0 * math.sqrt(3.0)
    root6 = math.sqrt(6.0)
    rt2 = math.sqrt(2.0)

    # difference variables: iid triangular on [-2 sqrt(3), 2 sqrt(3)]
    t, wt = split_gl(two_r3, nodes)
    tri_t = (two_r3 - np.abs(t)) / 12.0
    t1 = t[:, None]
    t2 = t[None, :]
    w2 = (wt * tri_t)[:, None] * (wt * tri_t)[None, :]
    d1 = (t1 - t2) / rt2
    d2 = (t1 + t2) / rt2
    e_pi_joint = float((k2h(d1) * k2h(d2) * w2).sum())
    e_pi_marg = float((k2h(d1) * w2).sum())

    # marginal window: pi(y) = int K2_h(y - z) tri_{sqrt(6)}(z) dz
    z, wz = split_gl(root6, nodes)
    tri_z = (root6 - np.abs(z)) / 6.0
    wz_tri = wz * tri_z

    def window(y):
        return k2h(y[..., None] - z).dot(wz_tri)

    # outer average over the uniform square
    x, wx = split_gl(math.sqrt(3.0), nodes)
    u_w = wx / (2.0 * math.sqrt(3.0))
    x1 = x[:, None]
    x2 = x[None, :]
    wxx = u_w[:, None] * u_w[None, :]
    y1 = (x1 - x2) / rt2
    y2 = (x1 + x2) / rt2
    e_pi_prod = float((window(y1) * window(y2) * wxx).sum())

    return 0.5 * (e_pi_joint + e_pi_marg**2 - 2.0 * e_pi_prod)


def bivariate_gaussian_density_limit(rho: float, marginal_sd: float = 1.0) -> float:
    """Closed form of ``(1/2) int (p_joint - p_1 p_2)^2`` for the Gaussian pair."""
    if not -1.0 < rho < 1.0:
        raise QdepError("need |rho| < 1")
    v = marginal_sd ** 2
    det_joint = v * v * (1.0 - rho * rho)
    i_joint = 1.0 / (4.0 * np.pi * np.sqrt(det_joint))
    i_prod = 1.0 / (4.0 * np.pi * v)
    det_cross = v * v * (4.0 - rho * rho)
    i_cross = 1.0 / (2.0 * np.pi * np.sqrt(det_cross))
    return 0.5 * (i_joint + i_prod - 2.0 * i_cross)
