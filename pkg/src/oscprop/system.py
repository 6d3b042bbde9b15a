"""Two-oscillator system definition and normal-mode decoupling.

The physical system is a pair of driven harmonic oscillators with
time-dependent masses m_j(t), angular frequencies omega_j(t), drive
accelerations f_j(t) and a bilinear position coupling lambda(t) x1 x2:

    H(t) = sum_j [ p_j^2 / (2 m_j) + m_j omega_j^2 x_j^2 / 2 - m_j f_j x_j ]
           + lambda(t) x1 x2

A mass-scaled rotation by a constant angle alpha,

    Q1 = sqrt(m1) x1 cos(alpha) - sqrt(m2) x2 sin(alpha)
    Q2 = sqrt(m1) x1 sin(alpha) + sqrt(m2) x2 cos(alpha)

combined with the momentum shift beta_j = -mdot_j / (2 sqrt(m_j)) turns H
into two unit-mass oscillators with effective frequencies

    wtilde_j^2 = omega_j^2 + (mdot_j^2 / m_j^2 - 2 mddot_j / m_j) / 4

coupled only through the residual cross term Gamma(t) Q1 Q2,

    Gamma(t) = (wtilde_1^2 - wtilde_2^2) sin(2 alpha) / 2
               + lambda / sqrt(m1 m2) * cos(2 alpha).

Decoupling requires a constant alpha with Gamma identically zero; this
module finds that angle when it exists and reports the residual when it
does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .timefn import DerivedTimeFunction, DomainError, TimeFunction


class NotDecouplableError(ValueError):
    """No constant rotation angle removes the cross coupling.

    ``residual`` is the smallest achievable sup-norm of Gamma over the
    interval; ``scale`` is the coefficient magnitude it was compared
    against.
    """

    def __init__(self, residual, scale, tol):
        super().__init__(
            f"cross term cannot be cancelled by a constant rotation: "
            f"residual {residual:.3e} exceeds {tol:.1e} * scale {scale:.3e}"
        )
        self.residual = residual
        self.scale = scale
        self.tol = tol


@dataclass(frozen=True)
class OscillatorSpec:
    """One oscillator: mass > 0, angular frequency, drive acceleration."""

    mass: TimeFunction
    omega: TimeFunction
    force: TimeFunction


@dataclass(frozen=True)
class SystemSpec:
    """The full two-oscillator problem on a working interval.

    ``hbar`` is kept as a runtime parameter so any unit system can be used.
    """

    oscillators: tuple
    coupling: TimeFunction
    hbar: float
    t_start: float
    t_end: float

    @property
    def interval(self):
        return (self.t_start, self.t_end)

    def validate(self, samples=1024):
        """Run all structural and domain checks; raises on the first failure."""
        if not self.t_end > self.t_start:
            raise ValueError("interval must satisfy t_end > t_start")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        if len(self.oscillators) != 2:
            raise ValueError("exactly two oscillators are required")
        grid = np.linspace(self.t_start, self.t_end, samples)
        for j, osc in enumerate(self.oscillators, start=1):
            for fn in (osc.mass, osc.omega, osc.force):
                fn.validate_on(self.t_start, self.t_end, samples)
            m = np.asarray(osc.mass.eval(grid))
            if np.any(m <= 0):
                raise DomainError(f"mass of oscillator {j} is not positive on the interval")
        self.coupling.validate_on(self.t_start, self.t_end, samples)
        return self


@dataclass(frozen=True)
class DecoupledSystem:
    """Result of the constant-angle decoupling.

    ``Omega_sq`` / ``F`` are the normal-mode squared frequencies and forces
    (unit-mass modes), ``gamma_residual`` the sup-norm of the surviving
    cross coefficient over the sampled interval, and ``scale`` the
    coefficient magnitude used for the relative acceptance test.
    """

    alpha: float
    omega_tilde_sq: tuple
    Omega_sq: tuple
    F: tuple
    gamma: DerivedTimeFunction
    gamma_residual: float
    scale: float
    tol: float
    accepted: bool


def effective_frequency_sq(spec, j):
    """Effective squared frequency of oscillator ``j`` (0-based) after the
    mass-scaled change of variables:

        wtilde^2(t) = omega^2 + (mdot^2/m^2 - 2 mddot/m) / 4
    """
    osc = spec.oscillators[j]

    def fn(t):
        m = osc.mass.eval(t)
        m1 = osc.mass.deriv1(t)
        m2 = osc.mass.deriv2(t)
        w = osc.omega.eval(t)
        return w * w + 0.25 * ((m1 * m1) / (m * m) - 2.0 * m2 / m)

    return DerivedTimeFunction(fn, label=f"omega_tilde_sq[{j}]")


def coupling_rate(spec):
    """The mass-normalized coupling lambda(t)/sqrt(m1 m2)."""

    def fn(t):
        m1 = spec.oscillators[0].mass.eval(t)
        m2 = spec.oscillators[1].mass.eval(t)
        return spec.coupling.eval(t) / np.sqrt(m1 * m2)

    return DerivedTimeFunction(fn, label="coupling_rate")


def beta_momentum_shift(spec, j):
    """The canonical momentum shift beta_j = -mdot_j / (2 sqrt(m_j))."""
    osc = spec.oscillators[j]

    def fn(t):
        return -osc.mass.deriv1(t) / (2.0 * np.sqrt(osc.mass.eval(t)))

    def d1(t):
        m = osc.mass.eval(t)
        m1 = osc.mass.deriv1(t)
        m2 = osc.mass.deriv2(t)
        return -m2 / (2.0 * np.sqrt(m)) + m1 * m1 / (4.0 * m ** 1.5)

    return DerivedTimeFunction(fn, d1, label=f"beta[{j}]")


def normal_mode_coordinates(spec, alpha, x, t):
    """Map lab coordinates ``(x1, x2)`` to normal-mode coordinates at time t."""
    x1, x2 = x
    c, s = math.cos(alpha), math.sin(alpha)
    y1 = np.sqrt(spec.oscillators[0].mass.eval(t)) * np.asarray(x1)
    y2 = np.sqrt(spec.oscillators[1].mass.eval(t)) * np.asarray(x2)
    return (y1 * c - y2 * s, y1 * s + y2 * c)


def lab_coordinates(spec, alpha, Q, t):
    """Inverse of :func:`normal_mode_coordinates`."""
    Q1, Q2 = Q
    c, s = math.cos(alpha), math.sin(alpha)
    x1 = (np.asarray(Q1) * c + np.asarray(Q2) * s) / np.sqrt(spec.oscillators[0].mass.eval(t))
    x2 = (-np.asarray(Q1) * s + np.asarray(Q2) * c) / np.sqrt(spec.oscillators[1].mass.eval(t))
    return (x1, x2)


@dataclass(frozen=True)
class TransformCoefficients:
    """All coefficient functions of the rotated Hamiltonian at one time.

    For arbitrary momentum shifts beta_j the rotated Hamiltonian reads

        H' = (P1^2 + P2^2)/2 + A P1 Q1 + B P2 Q2 + C (P1 Q2 + P2 Q1)
             + D1 Q1^2 / 2 + D2 Q2^2 / 2 + E Q1 Q2 - F1 Q1 - F2 Q2

    with d_j the single-oscillator quadratic coefficients before rotation.
    The canonical choice beta_j = -mdot_j/(2 sqrt(m_j)) makes A = B = C = 0,
    D_j the squared normal-mode frequencies, and E the residual coupling.
    """

    A: object
    B: object
    C: object
    D1: object
    D2: object
    E: object
    F1: object
    F2: object
    d1: object
    d2: object


def transform_coefficients(spec, alpha, beta1, beta2, t):
    """Evaluate the rotated-Hamiltonian coefficients at time ``t``.

    ``beta1``/``beta2`` are arbitrary TimeFunctions; ``t`` may be a float
    or an array.
    """
    t = np.asarray(t, dtype=float)
    c, s = math.cos(alpha), math.sin(alpha)
    osc1, osc2 = spec.oscillators
    m1, m2 = osc1.mass.eval(t), osc2.mass.eval(t)
    m1d, m2d = osc1.mass.deriv1(t), osc2.mass.deriv1(t)
    b1, b2 = beta1.eval(t), beta2.eval(t)

    g1 = b1 / np.sqrt(m1) + m1d / (2.0 * m1)
    g2 = b2 / np.sqrt(m2) + m2d / (2.0 * m2)
    A = g1 * c * c + g2 * s * s
    B = g1 * s * s + g2 * c * c
    C = (g1 - g2) * s * c

    # d_j = omega_j^2 + beta_j^2/m_j + d/dt(sqrt(m_j) beta_j)/m_j
    def _dj(osc, beta, m, md, b):
        sqrt_m_beta_dot = md / (2.0 * np.sqrt(m)) * b + np.sqrt(m) * beta.deriv1(t)
        w = osc.omega.eval(t)
        return w * w + b * b / m + sqrt_m_beta_dot / m

    d1 = _dj(osc1, beta1, m1, m1d, b1)
    d2 = _dj(osc2, beta2, m2, m2d, b2)

    lam = spec.coupling.eval(t) / np.sqrt(m1 * m2)
    D1 = d1 * c * c + d2 * s * s - 2.0 * lam * s * c
    D2 = d1 * s * s + d2 * c * c + 2.0 * lam * s * c
    E = (d1 - d2) * s * c + lam * (c * c - s * s)

    f1 = np.sqrt(m1) * osc1.force.eval(t)
    f2 = np.sqrt(m2) * osc2.force.eval(t)
    F1 = f1 * c - f2 * s
    F2 = f1 * s + f2 * c
    return TransformCoefficients(A, B, C, D1, D2, E, F1, F2, d1, d2)


def chebyshev_lobatto(t_lo, t_hi, n=513):
    """n Chebyshev-Lobatto points on [t_lo, t_hi], ascending.

    Clusters near the endpoints, where mass derivatives are largest.
    """
    k = np.arange(n)
    nodes = np.cos(np.pi * k / (n - 1))[::-1]
    return 0.5 * (t_lo + t_hi) + 0.5 * (t_hi - t_lo) * nodes


def _gamma_arrays(spec, n=513):
    """Sampled ingredients of Gamma: a(t) = (wt1^2 - wt2^2)/2, b(t) = lam/sqrt(m1 m2)."""
    grid = chebyshev_lobatto(spec.t_start, spec.t_end, n)
    wt1 = np.asarray(effective_frequency_sq(spec, 0).eval(grid))
    wt2 = np.asarray(effective_frequency_sq(spec, 1).eval(grid))
    b = np.asarray(coupling_rate(spec).eval(grid))
    return grid, 0.5 * (wt1 - wt2), b, wt1, wt2


def find_decoupling_angle(spec, tol=1e-9, grid_points=513, scan_angles=1024):
    """Find the constant rotation angle that cancels the cross coupling.

    Minimizes sup_t |Gamma(t; alpha)| over alpha in (-pi/4, pi/4] with a
    coarse scan followed by golden-section refinement.  The candidate is
    accepted iff the residual is at most ``tol * max(1, sup_t(|wt1^2| +
    |wt2^2| + |lambda|/sqrt(m1 m2)))``; otherwise
    :class:`NotDecouplableError` is raised.

    Two exact branches bypass the search: zero coupling (alpha = 0) and
    uniformly degenerate effective frequencies (alpha = pi/4, where the
    cross term is proportional to cos(2 alpha) alone).
    """
    _, a, b, wt1, wt2 = _gamma_arrays(spec, grid_points)
    scale = max(1.0, float(np.max(np.abs(wt1) + np.abs(wt2) + np.abs(b))))

    def residual(alpha):
        return float(np.max(np.abs(a * math.sin(2 * alpha) + b * math.cos(2 * alpha))))

    if np.max(np.abs(b)) == 0.0:
        alpha = 0.0
    elif np.max(np.abs(2.0 * a)) < 1e-12:
        # degenerate oscillators: Gamma = b cos(2 alpha), kill the cosine
        alpha = math.pi / 4
    else:
        alphas = np.linspace(-math.pi / 4, math.pi / 4, scan_angles, endpoint=True)
        sup = np.max(
            np.abs(
                a[:, None] * np.sin(2 * alphas)[None, :]
                + b[:, None] * np.cos(2 * alphas)[None, :]
            ),
            axis=0,
        )
        best = int(np.argmin(sup))
        step = alphas[1] - alphas[0]
        alpha = _golden_section(residual, alphas[best] - step, alphas[best] + step)
        # map back to the principal branch (-pi/4, pi/4]
        alpha = (alpha + math.pi / 4) % (math.pi / 2) - math.pi / 4
        if alpha <= -math.pi / 4 + 1e-15:
            alpha = math.pi / 4

    res = residual(alpha)
    accepted = res <= tol * scale
    if not accepted:
        raise NotDecouplableError(res, scale, tol)
    return _build_decoupled(spec, alpha, res, scale, tol)


def _golden_section(f, lo, hi, iterations=90):
    """Golden-section minimization of a unimodal scalar function."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(iterations):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = f(x2)
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def _build_decoupled(spec, alpha, res, scale, tol):
    wt = (effective_frequency_sq(spec, 0), effective_frequency_sq(spec, 1))
    rate = coupling_rate(spec)
    c, s = math.cos(alpha), math.sin(alpha)
    s2a = math.sin(2 * alpha)

    def _omega_sq(sign):
        def fn(t):
            w1, w2, b = wt[0].eval(t), wt[1].eval(t), rate.eval(t)
            if sign < 0:
                return w1 * c * c + w2 * s * s - b * s2a
            return w1 * s * s + w2 * c * c + b * s2a

        return DerivedTimeFunction(fn, label=f"Omega_sq[{0 if sign < 0 else 1}]")

    def _force(k):
        def fn(t):
            f1 = np.sqrt(spec.oscillators[0].mass.eval(t)) * spec.oscillators[0].force.eval(t)
            f2 = np.sqrt(spec.oscillators[1].mass.eval(t)) * spec.oscillators[1].force.eval(t)
            return f1 * c - f2 * s if k == 0 else f1 * s + f2 * c

        return DerivedTimeFunction(fn, label=f"F[{k}]")

    def gamma_fn(t):
        w1, w2, b = wt[0].eval(t), wt[1].eval(t), rate.eval(t)
        return 0.5 * (w1 - w2) * s2a + b * math.cos(2 * alpha)

    return DecoupledSystem(
        alpha=alpha,
        omega_tilde_sq=wt,
        Omega_sq=(_omega_sq(-1), _omega_sq(+1)),
        F=(_force(0), _force(1)),
        gamma=DerivedTimeFunction(gamma_fn, label="gamma"),
        gamma_residual=res,
        scale=scale,
        tol=tol,
        accepted=True,
    )


def decoupling_report(spec, tol=1e-9, n_samples=33):
    """Run the decoupling search and return a JSON-friendly summary.

    Never raises on a non-decouplable system; the outcome is encoded in
    the ``decision`` field.
    """
    grid = np.linspace(spec.t_start, spec.t_end, n_samples)
    try:
        dec = find_decoupling_angle(spec, tol)
    except NotDecouplableError as err:
        return {
            "decision": "not_decouplable",
            "alpha": None,
            "residual": err.residual,
            "scale": err.scale,
            "tolerance": tol,
        }
    return {
        "decision": "decoupled",
        "alpha": dec.alpha,
        "residual": dec.gamma_residual,
        "scale": dec.scale,
        "tolerance": tol,
        "samples": {
            "t": grid.tolist(),
            "Omega1_sq": np.asarray(dec.Omega_sq[0].eval(grid)).tolist(),
            "Omega2_sq": np.asarray(dec.Omega_sq[1].eval(grid)).tolist(),
        },
    }
