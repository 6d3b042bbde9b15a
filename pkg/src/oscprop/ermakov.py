"""Auxiliary (Ermakov-Pinney) equation solver for one normal mode.

Each decoupled mode is a unit-mass oscillator with squared frequency
Omega^2(t).  The kernel construction needs a positive solution of

    rho'' + Omega^2(t) rho = omega0^2 / rho^3

together with the phase integral phi(a, b) = omega0 * int_a^b dt / rho^2.

Instead of integrating the stiff nonlinear equation directly, we integrate
the associated linear equation u'' + Omega^2(t) u = 0 for the basis

    u(t0) = 1, u'(t0) = 0        v(t0) = 0, v'(t0) = 1

and form the Pinney combination rho = sqrt(u^2 + omega0^2 v^2), which
satisfies the nonlinear equation exactly (the Wronskian u v' - u' v = 1 is
conserved) and is unconditionally smooth: u and v never vanish together,
so rho stays positive even across caustics of the individual solutions.
The chosen initial conditions give rho(t0) = 1, rhodot(t0) = 0, which makes
the kernel's boundary phase vanish at the initial time; the kernel itself
is independent of this gauge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp


class IntegratorError(RuntimeError):
    """The adaptive integrator failed to reach the end of the interval."""


def default_gauge_frequency(Omega_sq, t0):
    """omega0 = Omega(t0) when real and appreciable, else 1.

    Keeps rho close to 1 for slowly varying Omega, which minimizes the
    stiffness of the phase quadrature.
    """
    w2 = float(np.asarray(Omega_sq(t0)))
    if w2 > 1e-12:
        return float(np.sqrt(w2))
    return 1.0


@dataclass
class ErmakovSolution:
    """Dense solution of the auxiliary equation for one mode.

    ``t_start``/``t_end`` delimit the covered interval (t_end < t_start for
    a time-reversed solution).  ``u``/``v`` are the linear basis solutions;
    ``rho``, ``rho_dot`` and ``phase`` are formed from them on demand via
    the dense output of the integrator.
    """

    omega0: float
    t_start: float
    t_end: float
    mode: int = 0
    _uv: object = field(default=None, repr=False)
    _s: object = field(default=None, repr=False)
    n_steps: int = 0
    n_rhs_evals: int = 0

    # -- linear basis -------------------------------------------------
    def u(self, t):
        return self._uv.sol(t)[0]

    def u_dot(self, t):
        return self._uv.sol(t)[1]

    def v(self, t):
        return self._uv.sol(t)[2]

    def v_dot(self, t):
        return self._uv.sol(t)[3]

    def wronskian(self, t):
        y = self._uv.sol(t)
        return y[0] * y[3] - y[1] * y[2]

    # -- Pinney combination -------------------------------------------
    def rho(self, t):
        y = self._uv.sol(t)
        return np.sqrt(y[0] ** 2 + self.omega0 ** 2 * y[2] ** 2)

    def rho_dot(self, t):
        y = self._uv.sol(t)
        r = np.sqrt(y[0] ** 2 + self.omega0 ** 2 * y[2] ** 2)
        return (y[0] * y[1] + self.omega0 ** 2 * y[2] * y[3]) / r

    def residual(self, t):
        """|rho'' + Omega^2 rho - omega0^2/rho^3| expressed through u, v.

        Algebraically this equals the Wronskian drift of the integrated
        basis, so it measures integration quality directly.
        """
        y = self._uv.sol(t)
        w0sq = self.omega0 ** 2
        r = np.sqrt(y[0] ** 2 + w0sq * y[2] ** 2)
        rdot = (y[0] * y[1] + w0sq * y[2] * y[3]) / r
        return np.abs((y[1] ** 2 + w0sq * y[3] ** 2) / r - rdot ** 2 / r - w0sq / r ** 3)

    # -- phase ---------------------------------------------------------
    def phase(self, t_a, t_b):
        """phi(t_a, t_b) = omega0 * int_{t_a}^{t_b} dt / rho^2.

        Additivity phi(a, c) = phi(a, b) + phi(b, c) holds exactly because
        the integral is stored in cumulative form.
        """
        lo, hi = sorted((self.t_start, self.t_end))
        for t in (t_a, t_b):
            if t < lo - 1e-12 or t > hi + 1e-12:
                raise ValueError(f"phase endpoint {t} outside solved interval [{lo}, {hi}]")
        return self.omega0 * (self._s.sol(t_b)[0] - self._s.sol(t_a)[0])

    @property
    def phase_total(self):
        return self.phase(self.t_start, self.t_end)


def solve_ermakov(Omega_sq, omega0=None, interval=None, rtol=1e-10, atol=1e-12, mode=0):
    """Solve the auxiliary equation on ``interval`` with gauge ``omega0``.

    ``Omega_sq`` is a TimeFunction or any callable, evaluated pointwise.
    The linear basis is integrated with DOP853 and dense output; the phase
    integral is accumulated in a second adaptive pass over the dense basis,
    so ``u`` and ``v`` are bit-identical across gauge choices.
    """
    t0, t1 = interval
    if omega0 is None:
        omega0 = default_gauge_frequency(Omega_sq, t0)
    if not omega0 > 0:
        raise ValueError("gauge frequency omega0 must be positive")

    def rhs(t, y):
        w2 = float(np.asarray(Omega_sq(t)))
        return (y[1], -w2 * y[0], y[3], -w2 * y[2])

    uv = solve_ivp(
        rhs, (t0, t1), (1.0, 0.0, 0.0, 1.0),
        method="DOP853", dense_output=True, rtol=rtol, atol=atol,
    )
    if not uv.success:
        raise IntegratorError(f"linear basis integration failed: {uv.message}")

    w0sq = omega0 ** 2

    def rhs_phase(t, y):
        z = uv.sol(t)
        return (1.0 / (z[0] ** 2 + w0sq * z[2] ** 2),)

    s = solve_ivp(
        rhs_phase, (t0, t1), (0.0,),
        method="DOP853", dense_output=True, rtol=1e-11, atol=1e-13,
    )
    if not s.success:
        raise IntegratorError(f"phase quadrature failed: {s.message}")

    sol = ErmakovSolution(
        omega0=float(omega0), t_start=t0, t_end=t1, mode=mode,
        _uv=uv, _s=s, n_steps=len(uv.t) - 1, n_rhs_evals=uv.nfev + s.nfev,
    )
    # rho > 0 is structural (Wronskian = 1); the guard only catches a
    # catastrophically failed integration.
    check = np.linspace(t0, t1, 101)
    if np.min(sol.rho(check)) <= 1e-12:
        raise IntegratorError("auxiliary solution collapsed to zero")
    return sol


def solve_modes(dec, interval, omega0=None, rtol=1e-10, atol=1e-12):
    """Solve the auxiliary equation for both normal modes.

    ``omega0`` may be None (default gauge per mode) or a pair.  Returns a
    pair of :class:`ErmakovSolution`.
    """
    out = []
    for j in (0, 1):
        w0 = None if omega0 is None else omega0[j]
        out.append(
            solve_ermakov(dec.Omega_sq[j], w0, interval, rtol=rtol, atol=atol, mode=j)
        )
    return tuple(out)
