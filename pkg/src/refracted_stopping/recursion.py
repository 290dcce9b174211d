"""Closed-form backward recursion for the Erlang-randomised multiple stopping problem.

Every intermediate function ``u^{(n,m)}`` is piecewise on the regions cut out by
the thresholds ``a_1 > ... > a_n``; on region ``l`` (``a_l < x < a_{l-1}``) it is

    A + B e^x + sum_{i,h} C[i,h] x^h e^{-xi_i x} + sum_h D[h] x^h e^{Phi(p) x}
      + E e^{Phi(alpha) x}.

``resolvent_step`` applies ``f -> lambda * int theta^{(p)}(y - x) f(y) dy`` exactly
on this representation, ``advance_stage`` moves to the next exercise opportunity.
"""

from __future__ import annotations

import bisect
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import model as mc
from .errors import (
    DomainError,
    ImaginaryResidue,
    MonotonicityViolation,
    NoBracket,
    PrecisionBreakdown,
    PreconditionViolated,
)

log = logging.getLogger(__name__)

INF = math.inf
CONTINUITY_EPS = 1e-9
CONTINUITY_TOL = 1e-4
CONJUGACY_TOL = 1e-8
IMAG_TOL = 1e-9
BRACKET_OFFSET = 1e-8


def _fsum(values):
    """Compensated sum of a complex (or real) array."""
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return complex(math.fsum(values.real.ravel()), math.fsum(values.imag.ravel()))
    return math.fsum(values.ravel())


@dataclass(frozen=True)
class RegionCoefficients:
    """Coefficients of one region; ``C`` has shape ``(n_roots, I + 1)``, ``D`` ``(I + 1,)``."""

    A: float
    B: float
    C: np.ndarray
    D: np.ndarray
    E: float

    @classmethod
    def zeros(cls, n_roots, I):
        return cls(0.0, 0.0, np.zeros((n_roots, I + 1), complex), np.zeros(I + 1), 0.0)

    @property
    def has_upper_terms(self):
        # terms that blow up as x -> -inf
        return self.A != 0 or self.B != 0 or bool(np.any(self.C != 0))

    @property
    def has_lower_terms(self):
        # terms that blow up as x -> +inf
        return self.E != 0 or bool(np.any(self.D != 0))


@dataclass(frozen=True)
class CoefficientSet:
    """Parameter set of ``u^{(n,m)}``.

    ``thresholds`` is ``(a_1, ..., a_n)``, strictly decreasing; region ``l``
    (1-based) lies between ``a_l`` and ``a_{l-1}`` with ``a_0 = +inf`` and
    ``a_{n+1} = -inf``.
    """

    n: int
    m: int
    I: int
    thresholds: tuple
    regions: tuple
    spec: mc.SpectralData
    phi_alpha: float
    lam: float

    def bounds(self, l):
        upper = INF if l == 1 else self.thresholds[l - 2]
        lower = -INF if l == self.n + 1 else self.thresholds[l - 1]
        return lower, upper

    def region_index(self, x):
        """1-based region containing ``x``; a threshold belongs to the region above it."""
        # thresholds descending; count how many are > x
        asc = self._ascending
        return len(asc) - bisect.bisect_right(asc, x) + 1

    @property
    def _ascending(self):
        return self.thresholds[::-1]

    def __call__(self, x):
        return evaluate(self, x)


def first_threshold(phi_alpha, K):
    """Optimal single-exercise threshold ``log(Phi(alpha) K / (Phi(alpha) - 1))``."""
    if phi_alpha <= 1:
        raise DomainError(f"Phi(alpha) = {phi_alpha} must exceed 1")
    if K <= 0:
        raise DomainError("K must be positive")
    return math.log(K) - math.log1p(-1.0 / phi_alpha)


def base_case(spec, phi_alpha, K, lam):
    """``u^{(1,0)} = v^{(1)}``: payoff above ``a_1``, discounted up-crossing value below."""
    a1 = first_threshold(phi_alpha, K)
    r = spec.n_roots
    top = RegionCoefficients(-K, 1.0, np.zeros((r, 0), complex), np.zeros(0), 0.0)
    bottom = RegionCoefficients(
        0.0, 0.0, np.zeros((r, 0), complex), np.zeros(0), (math.exp(a1) - K) * math.exp(-phi_alpha * a1)
    )
    return CoefficientSet(1, 0, -1, (a1,), (top, bottom), spec, phi_alpha, lam)


# --------------------------------------------------------------------------
# exponential-polynomial integrals


def _antiderivative(c, beta):
    """Coefficients ``a`` with ``int_s^t e^{-beta y} sum_g c_g y^g dy = G(s) - G(t)``,
    ``G(y) = e^{-beta y} sum_h a_h y^h``.

    Equivalent to ``a_h = sum_{g >= h} c_g g! / (h! beta^{g+1-h})``. The last axis
    of ``c`` is the degree; ``beta`` broadcasts against the leading axes.
    """
    c = np.asarray(c)
    b = np.broadcast_to(np.asarray(beta, dtype=complex), c.shape[:-1])
    a = np.zeros(c.shape, dtype=complex)
    K = c.shape[-1]
    if K == 0:
        return a
    a[..., K - 1] = c[..., K - 1] / b
    for h in range(K - 2, -1, -1):
        a[..., h] = (c[..., h] + (h + 1) * a[..., h + 1]) / b
    return a


def _poly_integral(c):
    """Coefficients of ``int c(y) dy`` (no constant), one degree higher."""
    c = np.asarray(c)
    out = np.zeros(c.shape[:-1] + (c.shape[-1] + 1,), dtype=np.result_type(c, float))
    if c.shape[-1]:
        out[..., 1:] = c / np.arange(1, c.shape[-1] + 1)
    return out


def _powers(y, K):
    if K <= 0:
        return np.zeros(0)
    return y ** np.arange(K)


class _PhiTransform:
    """``G(y)`` such that ``int_s^t e^{-Phi(p) y} f(y) dy = G(s) - G(t)`` on one region."""

    def __init__(self, region, spec, phi_alpha):
        phi_p = spec.phi_p
        self.phi_p = phi_p
        self.xi = spec.roots
        self.phi_alpha = phi_alpha
        self.a_A = region.A / phi_p
        self.a_B = region.B / (phi_p - 1.0)
        self.a_C = _antiderivative(region.C, phi_p + spec.roots)
        self.int_D = _poly_integral(region.D)
        self.a_E = region.E / (phi_p - phi_alpha)
        self.region = region

    def at(self, y):
        if y == INF:
            if self.region.has_lower_terms:
                raise PreconditionViolated("integral to +inf diverges: region has D or E terms")
            if self.phi_p <= 1:
                raise PreconditionViolated("integral to +inf needs Phi(p) > 1")
            return 0.0
        if y == -INF:
            raise PreconditionViolated("Phi-mode integral never extends to -inf")
        p = self.phi_p
        terms = [self.a_A * math.exp(-p * y), self.a_B * math.exp(-(p - 1.0) * y)]
        if self.a_C.size:
            pw = _powers(y, self.a_C.shape[1])
            terms.extend((np.exp(-(p + self.xi) * y)[:, None] * self.a_C * pw).ravel())
        if self.int_D.size > 1:
            terms.extend(-self.int_D * _powers(y, self.int_D.shape[0]))
        terms.append(self.a_E * math.exp(-(p - self.phi_alpha) * y))
        return _fsum(np.array(terms, dtype=complex))


class _XiTransform:
    """``H(y)`` with ``int_s^t e^{xi_i y} f(y) dy = H(s) - H(t)`` on one region, all roots ``i`` at once."""

    def __init__(self, region, spec, phi_alpha):
        xi = spec.roots
        r = xi.shape[0]
        self.xi = xi
        self.phi_p = spec.phi_p
        self.phi_alpha = phi_alpha
        self.region = region
        self.a_A = region.A / (-xi)
        self.a_B = region.B / (-(xi + 1.0))
        # a_C[i, j, h]: antiderivative of C_j against e^{xi_i y}; j == i handled separately
        diff = xi[None, :] - xi[:, None]
        np.fill_diagonal(diff, 1.0)
        self.a_C = _antiderivative(np.broadcast_to(region.C, (r,) + region.C.shape), diff)
        idx = np.arange(r)
        self.a_C[idx, idx, :] = 0.0
        self.int_Ci = _poly_integral(region.C)  # (r, I+2)
        self.a_D = _antiderivative(np.broadcast_to(region.D, (r,) + region.D.shape), -(xi + spec.phi_p))
        self.a_E = region.E / (-(xi + phi_alpha))

    def at(self, y):
        """Vector over roots ``i`` of ``H_i(y)``."""
        r = self.xi.shape[0]
        if y == -INF:
            if self.region.has_upper_terms:
                raise PreconditionViolated("integral from -inf diverges: region has A, B or C terms")
            return np.zeros(r, complex)
        if y == INF:
            raise PreconditionViolated("Xi-mode integral never extends to +inf")
        xi = self.xi
        out = np.empty(r, complex)
        K = self.a_C.shape[2]
        pw = _powers(y, K)
        pw1 = _powers(y, self.int_Ci.shape[1])
        eD = np.exp((xi + self.phi_p) * y)
        for i in range(r):
            terms = [
                self.a_A[i] * np.exp(xi[i] * y),
                self.a_B[i] * np.exp((xi[i] + 1.0) * y),
                self.a_E[i] * np.exp((xi[i] + self.phi_alpha) * y),
            ]
            if K:
                terms.extend((np.exp((xi[i] - xi) * y)[:, None] * self.a_C[i] * pw).ravel())
                terms.extend(-self.int_Ci[i] * pw1)
                terms.extend(eD[i] * self.a_D[i] * pw)
            out[i] = _fsum(np.array(terms, dtype=complex))
        return out


def varpi(gamma, l, s, t, mode, root=None):
    """``int_s^t e^{-q y} f_l(y) dy`` for region ``l`` of ``gamma``.

    ``mode="phi"`` takes ``q = Phi(p)``; ``mode="xi"`` takes ``q = -xi_root``
    (all roots when ``root`` is None, returned as an array). ``t = +inf`` is
    allowed only in phi mode on a region without D/E terms, ``s = -inf`` only in
    xi mode on a region without A/B/C terms.
    """
    if not s <= t:
        raise PreconditionViolated("need s <= t")
    region = gamma.regions[l - 1]
    if s == t:
        return 0.0 if mode == "phi" or root is not None else np.zeros(gamma.spec.n_roots, complex)
    if mode == "phi":
        if s == -INF:
            raise PreconditionViolated("phi-mode integral from -inf")
        G = _PhiTransform(region, gamma.spec, gamma.phi_alpha)
        return G.at(s) - G.at(t)
    if mode == "xi":
        if t == INF:
            raise PreconditionViolated("xi-mode integral to +inf")
        H = _XiTransform(region, gamma.spec, gamma.phi_alpha)
        out = H.at(s) - H.at(t)
        return out if root is None else complex(out[root])
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# evaluation


def _region_value_terms(gamma, region, l, x):
    """Individual terms of ``f_l(x)``, skipping those that vanish by construction."""
    spec = gamma.spec
    terms = []
    if l <= gamma.n:
        terms.append(region.A)
        terms.append(region.B * math.exp(x))
        if region.C.size:
            pw = _powers(x, region.C.shape[1])
            terms.extend((region.C * np.exp(-spec.roots * x)[:, None] * pw).ravel())
    if l >= 2:
        if region.D.size:
            terms.extend(region.D * math.exp(spec.phi_p * x) * _powers(x, region.D.shape[0]))
        terms.append(region.E * math.exp(gamma.phi_alpha * x))
    return np.array(terms, dtype=complex)


def _region_slope_terms(gamma, region, l, x):
    spec = gamma.spec
    terms = []
    if l <= gamma.n:
        terms.append(region.B * math.exp(x))
        if region.C.size:
            K = region.C.shape[1]
            pw = _powers(x, K)
            dpw = np.zeros(K)
            dpw[1:] = np.arange(1, K) * pw[:-1]
            xi = spec.roots[:, None]
            terms.extend((region.C * np.exp(-xi * x) * (-xi * pw + dpw)).ravel())
    if l >= 2:
        if region.D.size:
            K = region.D.shape[0]
            pw = _powers(x, K)
            dpw = np.zeros(K)
            dpw[1:] = np.arange(1, K) * pw[:-1]
            terms.extend(region.D * math.exp(spec.phi_p * x) * (spec.phi_p * pw + dpw))
        terms.append(region.E * gamma.phi_alpha * math.exp(gamma.phi_alpha * x))
    return np.array(terms, dtype=complex)


def _real_part(total, terms, what):
    scale = float(np.sum(np.abs(terms))) if terms.size else 0.0
    if abs(total.imag) > IMAG_TOL * max(1.0, scale):
        raise ImaginaryResidue(f"{what}: imaginary residue {total.imag:.3e} (scale {scale:.3e})")
    return total.real


def evaluate_region(gamma, l, x):
    """``f_l(x)`` from region ``l``'s formula, whether or not ``x`` lies in region ``l``."""
    terms = _region_value_terms(gamma, gamma.regions[l - 1], l, x)
    return _real_part(_fsum(terms), terms, "evaluate")


def evaluate(gamma, x):
    """Value of the piecewise function at ``x`` (thresholds resolve to the region above)."""
    x = float(x)
    return evaluate_region(gamma, gamma.region_index(x), x)


def evaluate_slope(gamma, x, l=None):
    x = float(x)
    l = gamma.region_index(x) if l is None else l
    terms = _region_slope_terms(gamma, gamma.regions[l - 1], l, x)
    return _real_part(_fsum(terms), terms, "slope")


def evaluate_many(gamma, xs):
    """Vectorised evaluation (plain summation) for grids and Monte Carlo."""
    xs = np.asarray(xs, dtype=float)
    out = np.empty(xs.shape)
    flat = xs.ravel()
    res = np.empty(flat.shape)
    asc = np.asarray(gamma._ascending)
    idx = len(asc) - np.searchsorted(asc, flat, side="right") + 1
    spec = gamma.spec
    for l in range(1, gamma.n + 2):
        mask = idx == l
        if not mask.any():
            continue
        x = flat[mask]
        reg = gamma.regions[l - 1]
        val = np.zeros(x.shape, dtype=complex)
        if l <= gamma.n:
            val += reg.A + reg.B * np.exp(x)
            if reg.C.size:
                pw = x[:, None] ** np.arange(reg.C.shape[1])
                ex = np.exp(-np.outer(x, spec.roots))
                val += np.einsum("ni,ih,nh->n", ex, reg.C, pw)
        if l >= 2:
            if reg.D.size:
                pw = x[:, None] ** np.arange(reg.D.shape[0])
                val += np.exp(spec.phi_p * x) * (pw @ reg.D)
            val += reg.E * np.exp(gamma.phi_alpha * x)
        res[mask] = val.real
    out[...] = res.reshape(xs.shape)
    return out


def continuity_residuals(gamma, eps=CONTINUITY_EPS):
    """Relative jump ``|f(a - eps) - f(a + eps)| / (1 + |f|)`` at each internal threshold."""
    out = []
    for a in gamma.thresholds:
        hi = evaluate(gamma, a + eps)
        lo = evaluate(gamma, a - eps)
        out.append(abs(hi - lo) / (1.0 + abs(hi)))
    return out


# --------------------------------------------------------------------------
# resolvent step


def _conjugate_index(xi):
    return np.array([int(np.argmin(np.abs(xi - z.conjugate()))) for z in xi])


def _check_corners(gamma):
    top, bottom = gamma.regions[0], gamma.regions[-1]
    if top.has_lower_terms:
        raise PreconditionViolated("top region must have D = E = 0")
    if bottom.has_upper_terms:
        raise PreconditionViolated("bottom region must have A = B = C = 0")


def _realise(spec, A, B, C, D, E):
    """Cast the conjugation-invariant coefficients to real and symmetrise C over pairs.

    Returns the region and the largest relative imaginary / conjugacy residue seen.
    """
    def rel_imag(z):
        z = np.asarray(z)
        mag = np.abs(z)
        return float(np.max(np.abs(z.imag) / np.maximum(mag, np.finfo(float).tiny), initial=0.0))

    resid = max(rel_imag(A), rel_imag(B), rel_imag(E))
    if D.size:
        scale = np.max(np.abs(D))
        if scale > 0:
            resid = max(resid, float(np.max(np.abs(D.imag)) / scale))
    conj = _conjugate_index(spec.roots)
    mismatch = 0.0
    if C.size:
        Cs = 0.5 * (C + np.conj(C[conj]))
        scale = np.maximum(np.max(np.abs(C), axis=1), np.finfo(float).tiny)
        mismatch = float(np.max(np.max(np.abs(C - np.conj(C[conj])), axis=1) / scale))
        C = Cs
    region = RegionCoefficients(float(np.real(A)), float(np.real(B)), C, D.real.copy(), float(np.real(E)))
    return region, resid, mismatch


def resolvent_step(gamma):
    """``Gamma_{n,m} -> Gamma_{n,m+1}``, i.e. ``u -> lambda int theta^{(p)}(y - x) u(y) dy``.

    Returns the new set; ``gamma.m`` is not bounded here (the caller stops at M).
    :func:`resolvent_step_with_residues` also reports the imaginary and
    conjugacy residues removed while casting the result to real form.
    """
    return resolvent_step_with_residues(gamma)[0]


def resolvent_step_with_residues(gamma):
    spec = gamma.spec
    phi_p, dphi = spec.phi_p, spec.phi_prime_p
    kappa = spec.weights
    r = spec.n_roots
    n, I, lam = gamma.n, gamma.I, gamma.lam
    if phi_p <= 1:
        raise DomainError(f"Phi(p) = {phi_p} <= 1; the upper tail integral diverges")
    _check_corners(gamma)

    G = [_PhiTransform(reg, spec, gamma.phi_alpha) for reg in gamma.regions]
    H = [_XiTransform(reg, spec, gamma.phi_alpha) for reg in gamma.regions]
    # whole-region integrals; Phi-mode needed for l <= n, Xi-mode for l >= 2
    w_phi = {}
    w_xi = {}
    for l in range(1, n + 2):
        lo, hi = gamma.bounds(l)
        if l <= n:
            w_phi[l] = G[l - 1].at(lo) - G[l - 1].at(hi)
        if l >= 2:
            w_xi[l] = H[l - 1].at(lo) - H[l - 1].at(hi)

    regions = []
    imag_resid = 0.0
    conj_resid = 0.0
    for L in range(1, n + 2):
        lo, hi = gamma.bounds(L)
        g, h = G[L - 1], H[L - 1]
        C = np.zeros((r, I + 2), complex)
        D = np.zeros(I + 2, complex)

        # Phi'(p) e^{Phi(p) x} [varpi_L(x, a_{L-1}) + sum_{l < L} varpi_l]
        A = dphi * g.a_A
        B = dphi * g.a_B
        C[:, : I + 1] += dphi * g.a_C
        D -= dphi * g.int_D
        E = dphi * g.a_E
        D[0] += dphi * _fsum(np.array([-g.at(hi)] + [w_phi[l] for l in range(1, L)], dtype=complex))

        # sum_i kappa_i e^{-xi_i x} [varpi_L(a_L, x, -xi_i) + sum_{l > L} varpi_l]
        A -= _fsum(kappa * h.a_A)
        B -= _fsum(kappa * h.a_B)
        E -= _fsum(kappa * h.a_E)
        if I >= 0:
            C[:, : I + 1] -= np.einsum("i,ijh->jh", kappa, h.a_C)
            D[: I + 1] -= np.einsum("i,ih->h", kappa, h.a_D)
            C += kappa[:, None] * h.int_Ci
        tail = np.vstack([h.at(lo)] + [w_xi[l] for l in range(L + 1, n + 2)])
        C[:, 0] += kappa * np.array([_fsum(tail[:, i]) for i in range(r)])

        region, ri, rc = _realise(spec, lam * A, lam * B, lam * C, lam * D, lam * E)
        imag_resid = max(imag_resid, ri)
        conj_resid = max(conj_resid, rc)
        regions.append(region)

    out = replace(gamma, m=gamma.m + 1, I=I + 1, regions=tuple(regions))
    _check_corners(out)
    return out, imag_resid, conj_resid


# --------------------------------------------------------------------------
# stage advance


@dataclass
class StageDiagnostics:
    stage: int
    substep: int
    continuity: float
    imag_residue: float = 0.0
    conjugacy: float = 0.0
    threshold_residual: float | None = None
    sign_changes: int | None = None


def _first_order_condition(gamma, K):
    """``g(a) = phi~'(a) - Phi(alpha) phi~(a)`` on the bottom region of ``gamma`` shifted by the payoff."""
    n = gamma.n
    bottom = gamma.regions[n]
    shifted = replace(bottom, A=bottom.A - K, B=bottom.B + 1.0)
    probe = replace(gamma, n=n + 1, regions=gamma.regions[:n] + (shifted, RegionCoefficients.zeros(gamma.spec.n_roots, gamma.I)))
    l = n + 1

    def g(a):
        v = _region_value_terms(probe, shifted, l, a)
        s = _region_slope_terms(probe, shifted, l, a)
        terms = np.concatenate([s, -gamma.phi_alpha * v])
        return _real_part(_fsum(terms), terms, "first-order condition"), float(np.sum(np.abs(terms)))

    return g, probe, shifted


def advance_stage(gamma, K, scan_points=200):
    """``Gamma_{n,M} -> (a_{n+1}, Gamma_{n+1,0})``.

    The new threshold is the root of the first-order condition on
    ``(log K, a_n]``. Returns the threshold, the new set, and a
    :class:`StageDiagnostics` with the root residual and the number of sign
    changes of the condition on a coarse scan of the bracket.
    """
    n = gamma.n
    a_n = gamma.thresholds[-1]
    g, probe, shifted = _first_order_condition(gamma, K)
    lo = math.log(K) + BRACKET_OFFSET
    hi = a_n
    g_lo, _ = g(lo)
    g_hi, _ = g(hi)
    # payoff scale, not the (possibly huge) cancelling term magnitudes
    if abs(g_hi) <= 1e-10 * (math.exp(hi) + gamma.phi_alpha * K):
        root = hi
    elif g_lo > 0 > g_hi or g_lo < 0 < g_hi:
        root = optimize.brentq(lambda a: g(a)[0], lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    else:
        raise NoBracket(
            f"first-order condition does not change sign on (log K, a_{n}] "
            f"(g = {g_lo:.6g}, {g_hi:.6g})"
        )
    if root > a_n + 1e-12:
        raise MonotonicityViolation(f"a_{n + 1} = {root} exceeds a_{n} = {a_n}")
    grid = np.linspace(lo, hi, scan_points)
    signs = np.sign([g(a)[0] for a in grid])
    signs = signs[signs != 0]
    changes = int(np.count_nonzero(np.diff(signs)))

    regions = [replace(reg, A=reg.A - K, B=reg.B + 1.0) for reg in gamma.regions[:n]]
    regions.append(shifted)
    payoff_at_root = evaluate_region(probe, n + 1, root)
    new_bottom = RegionCoefficients(
        0.0,
        0.0,
        np.zeros((gamma.spec.n_roots, gamma.I + 1), complex),
        np.zeros(gamma.I + 1),
        payoff_at_root * math.exp(-gamma.phi_alpha * root),
    )
    regions.append(new_bottom)
    out = CoefficientSet(
        n + 1, 0, gamma.I, gamma.thresholds + (root,), tuple(regions), gamma.spec, gamma.phi_alpha, gamma.lam
    )
    _check_corners(out)
    diag = StageDiagnostics(
        stage=n + 1,
        substep=0,
        continuity=max(continuity_residuals(out)),
        threshold_residual=abs(g(root)[0]),
        sign_changes=changes,
    )
    if changes > 1:
        log.warning("first-order condition changes sign %d times at stage %d", changes, n + 1)
    return root, out, diag


# --------------------------------------------------------------------------
# driver


@dataclass
class SolveResult:
    thresholds: tuple
    value: CoefficientSet
    stages: list
    continuations: list
    diagnostics: list
    timings: dict
    spec: mc.SpectralData
    phi_alpha: float
    params: dict = field(default_factory=dict)

    def value_at(self, x, stage=None):
        gamma = self.value if stage is None else self.stages[stage - 1]
        return evaluate(gamma, x)


def _apply_steps(gamma, M, diagnostics, tol):
    for _ in range(M):
        gamma, ri, rc = resolvent_step_with_residues(gamma)
        cont = max(continuity_residuals(gamma))
        diagnostics.append(StageDiagnostics(gamma.n, gamma.m, cont, ri, rc))
        _guard(gamma.n, gamma.m, cont, tol)
    return gamma


def _guard(stage, substep, residual, tol):
    if not residual <= tol:
        raise PrecisionBreakdown(
            f"value function discontinuous at a threshold (relative jump {residual:.3e}) "
            f"at stage {stage}, sub-step {substep}",
            stage=stage,
            substep=substep,
            residual=residual,
        )


def _prepare(model, alpha_rate, delta, M):
    mc.validate_assumptions(model, alpha_rate, M=M, delta=delta)
    phi_alpha = mc.phi(model, alpha_rate)
    if phi_alpha <= 1:
        raise DomainError(f"Phi(alpha) = {phi_alpha} must exceed 1")
    lam = M / delta
    spec = mc.spectral_roots(model, alpha_rate + lam)
    if spec.phi_p <= 1:
        raise DomainError(f"Phi(p) = {spec.phi_p} <= 1")
    return phi_alpha, lam, spec


def solve(model, alpha_rate, K, delta, N, M, continuity_tol=CONTINUITY_TOL):
    """Thresholds and value functions for ``N`` exercise opportunities.

    Runs the base case, then ``M`` resolvent steps and one stage advance per
    additional opportunity. Raises :class:`PrecisionBreakdown` as soon as a
    produced coefficient set jumps at a threshold by more than
    ``continuity_tol * (1 + |value|)``.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    t0 = time.perf_counter()
    phi_alpha, lam, spec = _prepare(model, alpha_rate, delta, M)
    t1 = time.perf_counter()

    gamma = base_case(spec, phi_alpha, K, lam)
    stages = [gamma]
    continuations = []
    diagnostics = [StageDiagnostics(1, 0, max(continuity_residuals(gamma)))]
    for n in range(1, N):
        gamma = _apply_steps(gamma, M, diagnostics, continuity_tol)
        continuations.append(gamma)
        _, gamma, diag = advance_stage(gamma, K)
        diagnostics.append(diag)
        _guard(diag.stage, 0, diag.continuity, continuity_tol)
        stages.append(gamma)
    t2 = time.perf_counter()
    return SolveResult(
        thresholds=gamma.thresholds,
        value=gamma,
        stages=stages,
        continuations=continuations,
        diagnostics=diagnostics,
        timings={"roots": t1 - t0, "recursion": t2 - t1},
        spec=spec,
        phi_alpha=phi_alpha,
        params=dict(alpha_rate=alpha_rate, K=K, delta=delta, N=N, M=M),
    )


def erlang_expectation(model, alpha_rate, K, delta, M, continuity_tol=CONTINUITY_TOL):
    """``Gamma_{1,M}``: ``E_x[e^{-alpha eta} v^{(1)}(X_eta)]`` for ``eta ~ Erlang(M, M/delta)``.

    Returns the coefficient set, the per-step diagnostics and the timing split.
    """
    t0 = time.perf_counter()
    phi_alpha, lam, spec = _prepare(model, alpha_rate, delta, M)
    t1 = time.perf_counter()
    diagnostics = []
    gamma = _apply_steps(base_case(spec, phi_alpha, K, lam), M, diagnostics, continuity_tol)
    t2 = time.perf_counter()
    return gamma, diagnostics, {"roots": t1 - t0, "recursion": t2 - t1}
