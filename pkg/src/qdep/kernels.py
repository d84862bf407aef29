"""Smoothing kernels for the quadratic dependence measure.

Only the second-order kernel ``K2`` (the convolution of a base kernel with
its own mirror image) ever enters the computations, so the families below
are admissible ``K2`` choices: even, square summable, with a nonnegative
Fourier transform that vanishes at most on a null set.

Three families are provided:

``gaussian``
    K2(x) = exp(-x^2)
``cauchy2``
    K2(x) = 1 / (1 + x^2)^2            (the square Cauchy kernel)
``cauchy2dd``
    K2(x) = -(20 x^2 - 4) / (1 + x^2)^4
    (negative second derivative of the square Cauchy kernel; takes
    negative values, its Fourier transform vanishes only at t = 0)

Conventions
-----------
Bandwidth scaling: ``K2_h(u) = K2(u / h) / h``.  This is forced by the
base-kernel scaling ``K_h(x) = K(x / h) / h``: convolving two h-scaled
base kernels yields exactly ``K2(u / h) / h`` (checked numerically in the
test suite).

Fourier transform: ``psi(t) = int K2(x) exp(-i t x) dx`` (the plain
unitary-on-L1 convention).  Under the bandwidth scaling the transform of
``K2_h`` at ``t`` equals ``psi(h t)``; see :func:`eval_fourier_scaled`.

The closed forms returned by :func:`eval_fourier` are the transforms of
the K2 formulas above, verified against direct numerical integration and
against Parseval identities for the L2 norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import QdepError

FAMILIES = ("gaussian", "cauchy2", "cauchy2dd")

_SQRT_PI = float(np.sqrt(np.pi))
_HALF_PI = float(0.5 * np.pi)


@dataclass(frozen=True)
class KernelSpec:
    """A K2 kernel family together with its bandwidth.

    Parameters
    ----------
    family : str
        One of ``"gaussian"``, ``"cauchy2"``, ``"cauchy2dd"``.
    bandwidth : float
        Positive bandwidth ``h`` (in units of the standardized data).
    """

    family: str
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise QdepError(
                f"unknown kernel family {self.family!r}; expected one of {FAMILIES}"
            )
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0.0:
            raise QdepError(f"bandwidth must be positive, got {self.bandwidth!r}")


# ---------------------------------------------------------------------------
# unscaled profiles K2, K2', psi
# ---------------------------------------------------------------------------


def _k2_gaussian(u):
    return np.exp(-np.square(u))


def _k2_cauchy2(u):
    r = 1.0 / (1.0 + np.square(u))
    return r * r


def _k2_cauchy2dd(u):
    t = np.square(u)
    r = 1.0 / (1.0 + t)
    r2 = r * r
    return (4.0 - 20.0 * t) * (r2 * r2)


def _dk2_gaussian(u):
    return -2.0 * u * np.exp(-np.square(u))


def _dk2_cauchy2(u):
    r = 1.0 / (1.0 + np.square(u))
    return -4.0 * u * (r * r * r)


def _dk2_cauchy2dd(u):
    # d/dx of (4 - 20 x^2)(1 + x^2)^-4 = 24 x (5 x^2 - 3)(1 + x^2)^-5
    t = np.square(u)
    r = 1.0 / (1.0 + t)
    r2 = r * r
    return 24.0 * u * (5.0 * t - 3.0) * (r2 * r2 * r)


def _psi_gaussian(t):
    return _SQRT_PI * np.exp(-0.25 * np.square(t))


def _psi_cauchy2(t):
    a = np.abs(t)
    return _HALF_PI * (1.0 + a) * np.exp(-a)


def _psi_cauchy2dd(t):
    a = np.abs(t)
    return _HALF_PI * np.square(t) * (1.0 + a) * np.exp(-a)


_PROFILE = {
    "gaussian": _k2_gaussian,
    "cauchy2": _k2_cauchy2,
    "cauchy2dd": _k2_cauchy2dd,
}
_DPROFILE = {
    "gaussian": _dk2_gaussian,
    "cauchy2": _dk2_cauchy2,
    "cauchy2dd": _dk2_cauchy2dd,
}
_PSI = {
    "gaussian": _psi_gaussian,
    "cauchy2": _psi_cauchy2,
    "cauchy2dd": _psi_cauchy2dd,
}

# int K2(x)^2 dx for the unscaled profiles (verified by quadrature in tests):
#   gaussian:   int exp(-2x^2)        = sqrt(pi/2)
#   cauchy2:    int (1+x^2)^-4        = 5 pi / 16
#   cauchy2dd:  int (20x^2-4)^2 (1+x^2)^-8 = 81 pi / 32
_L2SQ = {
    "gaussian": float(np.sqrt(np.pi / 2.0)),
    "cauchy2": 5.0 * np.pi / 16.0,
    "cauchy2dd": 81.0 * np.pi / 32.0,
}


def k2_profile(family: str):
    """Vectorized unscaled kernel ``u -> K2(u)`` for internal hot loops."""
    return _PROFILE[family]


def k2_derivative_profile(family: str):
    """Vectorized unscaled derivative ``u -> K2'(u)``."""
    return _DPROFILE[family]


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def eval_k2(spec: KernelSpec, x):
    """Evaluate the bandwidth-scaled kernel ``K2_h(x) = K2(x / h) / h``.

    Accepts scalars or arrays; even and continuous in ``x``.
    """
    h = spec.bandwidth
    return _PROFILE[spec.family](np.asarray(x, dtype=float) / h) / h


def eval_k2_derivative(spec: KernelSpec, x):
    """Evaluate ``d/dx K2_h(x) = K2'(x / h) / h^2``; odd in ``x``."""
    h = spec.bandwidth
    return _DPROFILE[spec.family](np.asarray(x, dtype=float) / h) / (h * h)


def eval_fourier(spec: KernelSpec, t):
    """Fourier transform of the *unscaled* ``K2`` at ``t``.

    Closed forms (convention ``psi(t) = int K2(x) e^{-itx} dx``):

    ========== =====================================
    gaussian   ``sqrt(pi) exp(-t^2/4)``
    cauchy2    ``(pi/2) (|t| + 1) exp(-|t|)``
    cauchy2dd  ``(pi/2) t^2 (|t| + 1) exp(-|t|)``
    ========== =====================================

    All three are nonnegative; ``cauchy2dd`` vanishes only at ``t = 0``.
    """
    return _PSI[spec.family](np.asarray(t, dtype=float))


def eval_fourier_scaled(spec: KernelSpec, t):
    """Fourier transform of the scaled ``K2_h`` at ``t``: equals ``psi(h t)``.

    This documents the bandwidth convention:
    ``int K2_h(x) e^{-itx} dx = int K2(u) e^{-i(th)u} du``.
    """
    return _PSI[spec.family](spec.bandwidth * np.asarray(t, dtype=float))


def l2_norm_squared(spec: KernelSpec) -> float:
    """``int K2_h(x)^2 dx``, via closed form.

    Scaling rule: ``int K2_h^2 = (1/h) int K2^2``.  The closed forms are
    quadrature-verified in the test suite (quadrature is the source of
    truth; see :func:`l2_norm_squared_quadrature`).
    """
    return _L2SQ[spec.family] / spec.bandwidth


def l2_norm_squared_quadrature(spec: KernelSpec, rtol: float = 1e-10) -> float:
    """Adaptive-quadrature evaluation of ``int K2_h^2`` (reference path)."""
    from scipy.integrate import quad

    h = spec.bandwidth
    f = _PROFILE[spec.family]

    val, err = quad(lambda x: f(x / h) ** 2 / (h * h), -np.inf, np.inf,
                    epsabs=0.0, epsrel=rtol, limit=400)
    if not np.isfinite(val) or err > max(rtol * abs(val), 1e-300):
        raise QdepError(
            f"kernel L2 quadrature did not converge (value={val!r}, err={err!r})"
        )
    return val


def kernel_mass(spec: KernelSpec) -> float:
    """``int K2(x) dx`` of the unscaled kernel (= ``psi(0)``).

    Equals ``int K2_h`` for every bandwidth.  Needed to normalize
    small-bandwidth limits, since the families are not density kernels.
    """
    return float(eval_fourier(spec, 0.0))
