"""Spectrally negative phase-type Levy model.

The process is ``X_t - X_0 = c t + sigma B_t - sum_{n <= N_t} Z_n`` with a Poisson
clock of rate ``rho`` and phase-type jump sizes ``Z ~ PH(alpha, T)``. Its Laplace
exponent is rational, so ``psi(s) = p`` reduces to a polynomial equation and the
scale function is a finite sum of exponentials.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import (
    AssumptionViolated,
    CountMismatch,
    ImaginaryResidue,
    NoRoot,
    RootMultiplicity,
    SingularResolvent,
)

log = logging.getLogger(__name__)

RESOLVENT_COND_MAX = 1e12
ROOT_SEPARATION = 1e-6
REAL_SNAP = 1e-8
ROOT_RESIDUAL = 1e-10
IMAG_RESIDUE = 1e-9
NEWTON_STEPS = 20
EQUALITY_TOL = 1e-12
DOUBLING_CAP = 200


@dataclass(frozen=True)
class PhaseTypeDistribution:
    """Absorption-time law of a ``d``-phase Markov chain.

    ``alpha`` is the initial distribution over transient phases and ``T`` the
    sub-intensity matrix; the exit-rate vector ``t = -T 1`` is derived.
    """

    alpha: np.ndarray
    T: np.ndarray
    t: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        T = np.atleast_2d(np.asarray(self.T, dtype=float))
        d = alpha.shape[0]
        if T.shape != (d, d):
            raise ValueError(f"T must be {d}x{d}, got {T.shape}")
        if np.any(alpha < 0) or alpha.sum() > 1 + 1e-12:
            raise ValueError("alpha must be nonnegative with total mass <= 1")
        off = T - np.diag(np.diag(T))
        if np.any(np.diag(T) >= 0) or np.any(off < 0):
            raise ValueError("T needs a negative diagonal and nonnegative off-diagonal")
        t = -T.sum(axis=1)
        if np.any(t < -1e-12):
            raise ValueError("rows of T must sum to <= 0")
        if np.any(np.linalg.eigvals(T).real >= 0):
            raise ValueError("T is not a sub-intensity matrix (eigenvalue with Re >= 0)")
        alpha.flags.writeable = False
        T.flags.writeable = False
        t = np.clip(t, 0.0, None)
        t.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "t", t)

    @property
    def d(self):
        return self.alpha.shape[0]

    @classmethod
    def exponential(cls, rate=1.0):
        return cls(alpha=[1.0], T=[[-rate]])

    @classmethod
    def from_rounded(cls, alpha, T):
        """Build from printed (rounded) fitted values, renormalising ``alpha``."""
        alpha = np.clip(np.asarray(alpha, dtype=float), 0.0, None)
        return cls(alpha=alpha / alpha.sum(), T=T)

    def mean(self):
        return float(self.alpha @ np.linalg.solve(-self.T, np.ones(self.d)))

    def laplace_transform(self, s):
        """``E[exp(-s Z)] = alpha (sI - T)^{-1} t`` (plus any atom at zero)."""
        return _resolvent_form(self, s, power=1) + (1.0 - self.alpha.sum())


@dataclass(frozen=True)
class LevyModel:
    drift_tilde: float
    sigma: float
    rho: float
    jumps: PhaseTypeDistribution

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.sigma == 0 and self.drift_tilde <= 0:
            raise AssumptionViolated(
                "subordinator",
                "sigma = 0 with non-positive drift makes -X a subordinator",
            )
        if self.sigma == 0:
            warnings.warn(
                "sigma = 0: the transition density is not guaranteed", stacklevel=2
            )


@dataclass(frozen=True)
class SpectralData:
    """Roots and weights of ``psi(s) = p`` that build ``W^{(p)}`` and ``theta^{(p)}``.

    ``roots`` holds the ``xi`` values, i.e. negatives of the roots with negative
    real part, so every entry has positive real part.
    """

    p: float
    phi_p: float
    phi_prime_p: float
    roots: np.ndarray
    weights: np.ndarray
    max_residual: float = 0.0

    @property
    def n_roots(self):
        return self.roots.shape[0]


def _resolvent_form(jumps, s, power=1):
    # alpha (sI - T)^{-power} t
    d = jumps.d
    A = s * np.eye(d) - jumps.T
    if np.linalg.cond(A) > RESOLVENT_COND_MAX:
        raise SingularResolvent(f"sI - T is numerically singular at s = {s}")
    v = np.asarray(jumps.t, dtype=complex if np.iscomplexobj(s) else float)
    for _ in range(power):
        v = np.linalg.solve(A, v)
    return jumps.alpha @ v


def _real_if_real(value, s):
    if np.isrealobj(s) or np.imag(s) == 0:
        return float(np.real(value))
    return complex(value)


def laplace_exponent(model, s):
    """``psi(s) = c s + sigma^2 s^2 / 2 + rho (E[e^{-sZ}] - 1)``."""
    jump = 0.0
    if model.rho:
        jump = model.rho * (model.jumps.laplace_transform(s) - 1.0)
    val = model.drift_tilde * s + 0.5 * model.sigma**2 * s * s + jump
    return _real_if_real(val, s)


def laplace_exponent_derivative(model, s):
    jump = 0.0
    if model.rho:
        jump = -model.rho * _resolvent_form(model.jumps, s, power=2)
    val = model.drift_tilde + model.sigma**2 * s + jump
    return _real_if_real(val, s)


def calibrate_drift(sigma, rho, jumps, alpha_rate, gamma):
    """Drift making ``psi(1) = alpha_rate - gamma``; ``psi`` is linear in the drift."""
    jump = 0.0
    if rho:
        jump = rho * (jumps.laplace_transform(1.0) - 1.0)
    return float((alpha_rate - gamma) - 0.5 * sigma**2 - jump)


def calibrated_model(sigma, rho, jumps, alpha_rate, gamma):
    c = calibrate_drift(sigma, rho, jumps, alpha_rate, gamma)
    return LevyModel(drift_tilde=c, sigma=sigma, rho=rho, jumps=jumps)


@dataclass
class ValidationReport:
    psi_at_one: float
    dpsi_at_one: float
    clause: str
    p: float | None = None

    @property
    def passed(self):
        return self.clause in ("i", "ii")


def validate_assumptions(model, alpha_rate, M=None, delta=None, tol=EQUALITY_TOL):
    """Check that the discounted problem is finite and nontrivial.

    Passes when ``psi(1) < alpha_rate``, or ``psi(1) == alpha_rate < 0`` with
    ``psi'(1) < 0``. When ``M`` and ``delta`` are given, also requires the
    killing rate ``alpha_rate + M / delta`` to be positive. Raises
    :class:`AssumptionViolated` naming the failed clause.
    """
    if model.sigma == 0 and model.drift_tilde <= 0:
        raise AssumptionViolated("subordinator", "-X is a subordinator")
    psi1 = laplace_exponent(model, 1.0)
    dpsi1 = laplace_exponent_derivative(model, 1.0)
    if psi1 < alpha_rate - tol * max(1.0, abs(alpha_rate)):
        clause = "i"
    elif abs(psi1 - alpha_rate) <= tol * max(1.0, abs(alpha_rate)):
        if alpha_rate >= 0:
            raise AssumptionViolated("ii", f"psi(1) = alpha = {alpha_rate} is not negative")
        if dpsi1 >= 0:
            raise AssumptionViolated("ii", f"psi(1) = alpha but psi'(1) = {dpsi1} >= 0")
        clause = "ii"
    else:
        raise AssumptionViolated("i", f"psi(1) = {psi1} exceeds alpha = {alpha_rate}")
    p = None
    if M is not None and delta is not None:
        p = alpha_rate + M / delta
        if p <= 0:
            raise AssumptionViolated("killing-rate", f"p = alpha + M/delta = {p} <= 0")
    return ValidationReport(psi1, dpsi1, clause, p)


def phi(model, q):
    """Largest real root of ``psi(s) = q`` on ``[0, inf)``.

    ``psi`` is convex on the half line, so the root is bracketed between the
    minimiser of ``psi`` and the first doubling point where ``psi`` exceeds ``q``.
    """
    f = lambda s: laplace_exponent(model, s) - q
    df = lambda s: laplace_exponent_derivative(model, s)
    hi = 1.0
    for _ in range(DOUBLING_CAP):
        if f(hi) > 0 and df(hi) > 0:
            break
        hi *= 2.0
    else:
        raise NoRoot(f"could not bracket psi(s) = {q}")
    lo = 0.0
    if df(0.0) < 0:
        lo = optimize.brentq(df, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    flo = f(lo)
    if flo > 0:
        raise NoRoot(f"psi(s) = {q} has no real root (min psi = {flo + q})")
    if flo == 0:
        return lo
    root = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    # one Newton step tidies the last ulp or two
    step = f(root) / df(root)
    if abs(step) < 1e-8 * max(1.0, root):
        root -= step
    return float(root)


def _faddeev_leverrier(A):
    """Characteristic polynomial and adjugate coefficients of ``sI - A``.

    Returns ``c`` (``det(sI - A) = sum_k c[k] s^{d-k}``) and matrices ``B`` with
    ``adj(sI - A) = sum_{k=1}^{d} B[k-1] s^{d-k}``.
    """
    d = A.shape[0]
    c = np.zeros(d + 1)
    c[0] = 1.0
    Mk = np.zeros_like(A)
    B = []
    eye = np.eye(d)
    for k in range(1, d + 1):
        Mk = A @ Mk + c[k - 1] * eye
        B.append(Mk)
        c[k] = -np.trace(A @ Mk) / k
    return c, B


def characteristic_polynomial(model, p):
    """Coefficients (highest first) of ``(psi(s) - p) det(sI - T)``."""
    c, B = _faddeev_leverrier(model.jumps.T)
    quad = np.array([0.5 * model.sigma**2, model.drift_tilde, -(model.rho + p)])
    poly = np.polymul(np.trim_zeros(quad, "f"), c)
    if model.rho:
        num = np.array([model.jumps.alpha @ Bk @ model.jumps.t for Bk in B])
        # atom at zero of the jump law adds rho * (1 - |alpha|) * det(sI - T)
        poly = np.polyadd(poly, model.rho * num)
        poly = np.polyadd(poly, model.rho * (1.0 - model.jumps.alpha.sum()) * c)
    return poly


def _polish(model, p, s):
    for _ in range(NEWTON_STEPS):
        step = (laplace_exponent(model, s) - p) / laplace_exponent_derivative(model, s)
        s = s - step
        if abs(step) <= 1e-15 * max(1.0, abs(s)):
            break
    return s


def spectral_roots(model, p, separation=ROOT_SEPARATION):
    """Solve ``psi(s) = p`` for ``p > 0`` and assemble :class:`SpectralData`."""
    if p <= 0:
        raise ValueError("p must be positive")
    poly = characteristic_polynomial(model, p)
    raw = np.roots(poly)
    roots = []
    for r in raw:
        r = complex(_polish(model, p, complex(r)))
        if abs(r.imag) < REAL_SNAP * (1 + abs(r.real)):
            r = complex(_polish(model, p, r.real), 0.0)
        roots.append(r)
    roots = np.array(roots)
    gaps = np.abs(roots[:, None] - roots[None, :]) + np.diag(np.full(len(roots), np.inf))
    if gaps.min() < separation:
        raise RootMultiplicity(f"roots closer than {separation}: min gap {gaps.min():.3e}")

    real_pos = [r.real for r in roots if r.imag == 0 and r.real > 0]
    if not real_pos:
        raise NoRoot(f"psi(s) = {p} has no positive real root")
    phi_p = max(real_pos)
    others = [r for r in roots if r.real != phi_p or r.imag != 0]
    if any(r.real >= phi_p for r in others):
        raise NoRoot("positive real root does not dominate the remaining roots")

    negative = np.array([r for r in roots if r.real < 0])
    expected = model.jumps.d + (1 if model.sigma > 0 else 0)
    if model.rho == 0:
        expected = 1 if model.sigma > 0 else 0
    if negative.shape[0] != expected:
        raise CountMismatch(f"found {negative.shape[0]} roots with Re < 0, expected {expected}")

    xi = -negative
    order = np.lexsort((xi.imag, xi.real))
    xi = xi[order]
    # exact conjugate symmetry
    for k, z in enumerate(xi):
        if z.imag > 0:
            j = int(np.argmin(np.abs(xi - z.conjugate())))
            xi[j] = z.conjugate()
    kappa = np.array([-1.0 / laplace_exponent_derivative(model, -z) for z in xi])

    residual = max(
        [abs(laplace_exponent(model, -z) - p) for z in xi]
        + [abs(laplace_exponent(model, phi_p) - p)]
    )
    if residual > ROOT_RESIDUAL * max(1.0, abs(p)):
        raise NoRoot(f"root residual {residual:.3e} above tolerance")
    phi_prime = 1.0 / laplace_exponent_derivative(model, phi_p)
    xi.flags.writeable = False
    kappa.flags.writeable = False
    return SpectralData(
        p=float(p),
        phi_p=float(phi_p),
        phi_prime_p=float(phi_prime),
        roots=xi,
        weights=kappa,
        max_residual=float(residual),
    )


def _checked_real(total, scale, what):
    if abs(total.imag) > IMAG_RESIDUE * max(1.0, scale):
        raise ImaginaryResidue(f"{what}: imaginary residue {total.imag:.3e}")
    return float(total.real)


def scale_function(spec, x):
    """``W^{(p)}(x) = Phi'(p) e^{Phi(p) x} - sum_i kappa_i e^{-xi_i x}`` for ``x >= 0``."""
    if x < 0:
        return 0.0
    lead = spec.phi_prime_p * np.exp(spec.phi_p * x)
    terms = spec.weights * np.exp(-spec.roots * x)
    tail = complex(np.sum(terms))
    scale = lead + float(np.sum(np.abs(terms)))
    return _checked_real(lead - tail, scale, "scale function")


def resolvent_density(spec, z):
    """Density ``theta^{(p)}(z)`` of the ``p``-resolvent at displacement ``z``."""
    if z > 0:
        return float(spec.phi_prime_p * np.exp(-spec.phi_p * z))
    terms = spec.weights * np.exp(spec.roots * z)
    return _checked_real(complex(np.sum(terms)), float(np.sum(np.abs(terms))), "resolvent density")
