import itertools
import math

import numpy as np
import pytest

from qdep.errors import GridTooCoarseError, QdepError
from qdep.estimator import Sample, estimate_q, user_scale_factors
from qdep.kernels import FAMILIES, KernelSpec, kernel_mass
from qdep.oracle import (
    DensityPair,
    DiscreteJoint,
    bivariate_gaussian_density_limit,
    bivariate_gaussian_q,
    density_limit_q,
    exact_q_discrete,
    exact_q_discrete_recheck,
    naive_q,
)

SIG11 = user_scale_factors([1.0, 1.0])
GAUSS = KernelSpec("gaussian", 1.0)

COUPLED = DiscreteJoint(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.5, 0.5]))
PRODUCT_2X2 = DiscreteJoint(
    np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]),
    np.array([0.25, 0.25, 0.25, 0.25]))


# ---------------------------------------------------------------------------
# DiscreteJoint
# ---------------------------------------------------------------------------


def test_joint_validation():
    with pytest.raises(QdepError):
        DiscreteJoint(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.6, 0.6]))
    with pytest.raises(QdepError):
        DiscreteJoint(np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([0.5, 0.5]))
    with pytest.raises(QdepError):
        DiscreteJoint(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([1.5, -0.5]))


def test_joint_json_roundtrip():
    j = DiscreteJoint.from_json(COUPLED.to_json())
    assert np.array_equal(j.support, COUPLED.support)
    assert np.array_equal(j.probs, COUPLED.probs)


def test_marginals_and_product():
    vals, p = COUPLED.marginal(0)
    assert np.array_equal(vals, [0.0, 1.0])
    assert np.array_equal(p, [0.5, 0.5])
    prod = COUPLED.product_of_marginals()
    assert prod.m == 4
    assert COUPLED.tv_from_product() == pytest.approx(0.5)
    assert PRODUCT_2X2.tv_from_product() == 0.0


# ---------------------------------------------------------------------------
# exact Q on discrete joints
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("h", [0.5, 1.0, 2.0])
def test_product_joint_gives_zero(family, h):
    q = exact_q_discrete(PRODUCT_2X2, KernelSpec(family, h), SIG11)
    assert abs(q) < 1e-14


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("h", [0.5, 1.0, 2.0])
def test_coupled_pair_positive_and_double_checked(family, h):
    spec = KernelSpec(family, h)
    q = exact_q_discrete(COUPLED, spec, SIG11)
    q2 = exact_q_discrete_recheck(COUPLED, spec, SIG11)
    assert q == pytest.approx(q2, abs=1e-14)
    assert q > 0.0


def test_coupled_pair_gaussian_value():
    # hand value: ((1 + e^-2)/2 - ((1 + e^-1)/2)^2) / 2
    e1, e2 = math.exp(-1.0), math.exp(-2.0)
    expected = ((1 + e2) / 2 - ((1 + e1) / 2) ** 2) / 2
    assert exact_q_discrete(COUPLED, GAUSS, SIG11) == pytest.approx(expected,
                                                                    rel=1e-14)


def test_relabeling_and_translation_invariance():
    spec = KernelSpec("cauchy2", 1.0)
    base = DiscreteJoint(np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 1.0]]),
                         np.array([0.2, 0.5, 0.3]))
    q0 = exact_q_discrete(base, spec, SIG11)
    relabeled = DiscreteJoint(base.support[[2, 0, 1]], base.probs[[2, 0, 1]])
    shifted = DiscreteJoint(base.support + np.array([5.0, -3.0]), base.probs)
    assert exact_q_discrete(relabeled, spec, SIG11) == pytest.approx(q0, rel=1e-14)
    assert exact_q_discrete(shifted, spec, SIG11) == pytest.approx(q0, rel=1e-12)


def _simplex_grid(size, step):
    """All probability vectors of the given size with entries k*step."""
    ticks = int(round(1.0 / step))
    for combo in itertools.combinations_with_replacement(range(size), ticks):
        counts = np.bincount(combo, minlength=size)
        yield counts * step


def test_factorizing_tables_characterize_independence():
    """Independence characterization, both directions, 2x2 and 3x3 supports."""
    spec_list = [KernelSpec(f, h) for f in FAMILIES for h in (0.5, 1.0, 2.0)]
    # direction 1: product tables give Q = 0
    for size in (2, 3):
        atoms_1d = np.arange(size, dtype=float)
        mesh = np.array([[a, b] for a in atoms_1d for b in atoms_1d])
        for p in _simplex_grid(size, 0.25):
            for q in _simplex_grid(size, 0.25):
                if np.any(p == 0.0) or np.any(q == 0.0):
                    continue
                probs = np.outer(p, q).ravel()
                joint = DiscreteJoint(mesh, probs)
                assert joint.tv_from_product() < 1e-12
                for spec in spec_list[::4]:
                    assert abs(exact_q_discrete(joint, spec, SIG11)) < 1e-13
    # direction 2: tables far from their product have Q > 0
    rng = np.random.default_rng(17)
    found = 0
    for _ in range(60):
        size = int(rng.integers(2, 4))
        atoms_1d = np.arange(size, dtype=float)
        mesh = np.array([[a, b] for a in atoms_1d for b in atoms_1d])
        probs = rng.dirichlet(np.ones(size * size))
        joint = DiscreteJoint(mesh, probs)
        if joint.tv_from_product() < 0.05:
            continue
        found += 1
        for spec in spec_list:
            assert exact_q_discrete(joint, spec, SIG11) > 1e-10
    assert found >= 20


def test_coupled_beats_product_for_every_kernel():
    for family in FAMILIES:
        for h in (0.5, 1.0, 2.0):
            spec = KernelSpec(family, h)
            assert exact_q_discrete(COUPLED, spec, SIG11) > \
                exact_q_discrete(PRODUCT_2X2, spec, SIG11)


# ---------------------------------------------------------------------------
# naive_q
# ---------------------------------------------------------------------------


def test_naive_matches_worked_example():
    s = Sample(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert naive_q(s, GAUSS, SIG11) == pytest.approx(
        estimate_q(s, GAUSS, SIG11).q_hat, abs=1e-15)


def test_naive_identical_rows_zero():
    s = Sample(np.tile([0.2, -0.7], (6, 1)))
    assert abs(naive_q(s, GAUSS, SIG11)) < 1e-12


def test_naive_guard():
    rng = np.random.default_rng(0)
    with pytest.raises(QdepError):
        naive_q(Sample(rng.standard_normal((257, 2))), GAUSS, SIG11)


@pytest.mark.slow
def test_naive_vs_fast_differential_100_instances():
    rng = np.random.default_rng(18)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 65))
        k = int(rng.integers(2, 5))
        y = rng.standard_normal((n, k))
        s = Sample(y)
        sig = user_scale_factors(np.full(k, 1.0))
        spec = KernelSpec(FAMILIES[i % 3], float(rng.choice([0.5, 1.0, 2.0])))
        worst = max(worst, abs(naive_q(s, spec, sig)
                               - estimate_q(s, spec, sig).q_hat))
    assert worst < 1e-12


# ---------------------------------------------------------------------------
# density limit
# ---------------------------------------------------------------------------


def _gauss_pair(rho, box=8.0, grid=201):
    det = 1.0 - rho * rho

    def joint(x, y):
        return np.exp(-(x * x - 2 * rho * x * y + y * y) / (2 * det)) \
            / (2 * np.pi * math.sqrt(det))

    def marg(u):
        return np.exp(-u * u / 2.0) / math.sqrt(2 * np.pi)

    return DensityPair(joint, [marg, marg], ((-box, box), (-box, box)), grid)


def test_density_limit_independent_product_zero():
    pair = _gauss_pair(0.0)
    assert abs(density_limit_q(pair)) < 1e-12


def test_density_limit_matches_closed_form():
    val = density_limit_q(_gauss_pair(0.5))
    assert val == pytest.approx(bivariate_gaussian_density_limit(0.5), rel=1e-6)


def test_density_limit_grid_too_coarse():
    # a sharp ridge the coarse grid cannot resolve
    def joint(x, y):
        base = np.exp(-(x * x + y * y) / 2.0) / (2 * np.pi)
        bump = 40.0 * np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) * 4e4) / np.pi
        return base + bump * 1e-1

    def marg(u):
        return np.exp(-u * u / 2.0) / math.sqrt(2 * np.pi)

    with pytest.raises((GridTooCoarseError, QdepError)):
        density_limit_q(DensityPair(joint, [marg, marg],
                                    ((-8.0, 8.0), (-8.0, 8.0)), 33))


def test_density_pair_mass_validation():
    def marg(u):
        return np.exp(-u * u / 2.0) / math.sqrt(2 * np.pi)

    with pytest.raises(QdepError):
        DensityPair(lambda x, y: marg(x) * marg(y) * 2.0, [marg, marg],
                    ((-8.0, 8.0), (-8.0, 8.0)), 101)


# ---------------------------------------------------------------------------
# bivariate Gaussian closed form
# ---------------------------------------------------------------------------


def test_gaussian_closed_form_independence():
    assert bivariate_gaussian_q(0.0, 1.0) == pytest.approx(0.0, abs=1e-16)


def test_gaussian_closed_form_vs_quadrature():
    """Independent route: Gauss-Hermite over the analytic window shapes."""
    rho, h = 0.5, 0.7
    nodes, weights = np.polynomial.hermite_e.hermegauss(160)

    # E pi_joint: (U,V) = Y - Y' ~ N(0, 2 Sigma); E exp(-(U^2+V^2)/h^2)/h^2
    cov = 2.0 * np.array([[1.0, rho], [rho, 1.0]])
    chol = np.linalg.cholesky(cov)
    za, zb = np.meshgrid(nodes, nodes, indexing="ij")
    wa, wb = np.meshgrid(weights, weights, indexing="ij")
    u = chol[0, 0] * za
    v = chol[1, 0] * za + chol[1, 1] * zb
    w2 = wa * wb / (2.0 * np.pi)
    e_joint = float((np.exp(-(u**2 + v**2) / h**2) * w2).sum()) / h**2

    # E pi_k via 1-D quadrature
    e_marg = float((np.exp(-((math.sqrt(2.0) * nodes) ** 2) / h**2)
                    * weights).sum()) / math.sqrt(2.0 * np.pi) / h

    # E[pi_1(Y1) pi_2(Y2)] with the analytic 1-D window shape
    def window(y):
        return (1.0 / (h * math.sqrt(1.0 + 2.0 / h**2))
                * np.exp(-y**2 / (h**2 + 2.0)))

    cov_y = np.array([[1.0, rho], [rho, 1.0]])
    chol_y = np.linalg.cholesky(cov_y)
    y1 = chol_y[0, 0] * za
    y2 = chol_y[1, 0] * za + chol_y[1, 1] * zb
    e_prod = float((window(y1) * window(y2) * w2).sum())

    expected = 0.5 * (e_joint + e_marg**2 - 2.0 * e_prod)
    assert bivariate_gaussian_q(rho, h) == pytest.approx(expected, rel=1e-10)


@pytest.mark.slow
def test_gaussian_closed_form_vs_unbiased_estimator():
    """The exactly unbiased estimate at large N brackets the closed form."""
    from qdep.asymptotics import ustat_decompose

    rho, h = 0.5, 1.0
    q_exact = bivariate_gaussian_q(rho, h)
    rng = np.random.default_rng(19)
    vals = []
    for _ in range(40):
        z = rng.standard_normal((500, 2))
        y = np.column_stack([z[:, 0],
                             rho * z[:, 0] + math.sqrt(1 - rho**2) * z[:, 1]])
        vals.append(ustat_decompose(Sample(y), KernelSpec("gaussian", h),
                                    SIG11).unbiased_q)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals)))
    assert abs(mean - q_exact) < 4.0 * se


def test_small_bandwidth_limit_identity():
    """Q(h) / ((prod sigma) (int K2)^K) tends to the density-limit integral."""
    rho = 0.5
    mass = kernel_mass(GAUSS) ** 2
    limit = bivariate_gaussian_density_limit(rho)
    gaps = [abs(bivariate_gaussian_q(rho, h) / mass - limit)
            for h in (1.0, 0.5, 0.25, 0.125)]
    assert all(g1 > g2 for g1, g2 in zip(gaps, gaps[1:]))
    assert gaps[-1] < 5e-3
