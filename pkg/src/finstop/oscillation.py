"""Damped oscillator brought to rest at a finite time, and a finite-stop
cosine kernel.

The oscillator ``v'' + v'/tau0 + omega0^2 v = -phi ell_phi - psi ell_psi``
is written as ``u' + A u = rhs`` with ``u = (v, v')``. Its free motion is
``[phi eta + psi xi] rho`` with ``rho = exp(-t / (2 tau0))``,
``xi = sin(omega t) / omega`` and ``eta = xi' + xi / (2 tau0)``.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._quadrature import inner
from .errors import DegenerateControlError, InputError, OverdampedError
from .io import write_csv
from .ode_core import FundamentalSolution, MatrixFunction, solve_ivp, stopping_check


@dataclass(frozen=True)
class OscillatorParams:
    """``omega0 > 0``, ``tau0 > 0`` (``inf`` for no damping), initial state."""

    omega0: float
    tau0: float
    phi: float = 1.0
    psi: float = 0.0

    def __post_init__(self):
        if not self.omega0 > 0:
            raise InputError(f"omega0 must be positive, got {self.omega0}")
        if not self.tau0 > 0:
            raise InputError(f"tau0 must be positive, got {self.tau0}")

    @property
    def damping(self) -> float:
        """``1 / (2 tau0)``."""
        return 0.5 / self.tau0

    @property
    def omega(self) -> float:
        w2 = self.omega0**2 - self.damping**2
        if w2 < 0:
            raise OverdampedError(
                f"omega0^2={self.omega0**2} < 1/(4 tau0^2)={self.damping**2}: overdamped"
            )
        return math.sqrt(w2)

    def generator(self) -> MatrixFunction:
        return MatrixFunction.constant([[0.0, -1.0], [self.omega0**2, 2.0 * self.damping]])


@dataclass(frozen=True)
class OscBasis:
    omega: float
    tau0: float

    @property
    def damping(self):
        return 0.5 / self.tau0

    def rho(self, t):
        return np.exp(-self.damping * np.asarray(t, dtype=float))

    def xi(self, t):
        t = np.asarray(t, dtype=float)
        # t sinc(omega t / pi) = sin(omega t) / omega, and t at omega = 0
        return t * np.sinc(self.omega * t / math.pi)

    def dxi(self, t):
        return np.cos(self.omega * np.asarray(t, dtype=float))

    def eta(self, t):
        return self.dxi(t) + self.damping * self.xi(t)

    def deta(self, t):
        return -self.omega**2 * self.xi(t) + self.damping * self.dxi(t)

    def wronskian(self, t):
        return self.eta(t) * self.dxi(t) - self.deta(t) * self.xi(t)

    def G(self, t) -> np.ndarray:
        """Fundamental matrix ``G(t, 0)`` of the free oscillator."""
        t = np.asarray(t, dtype=float)
        e, x = self.eta(t), self.xi(t)
        c = self.damping
        m = np.array([[e, x], [self.deta(t) - c * e, self.dxi(t) - c * x]])
        return np.moveaxis(m * self.rho(t), (0, 1), (-2, -1))

    def G_inv(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        e, x = self.eta(t), self.xi(t)
        c = self.damping
        m = np.array([[self.dxi(t) - c * x, -x], [-(self.deta(t) - c * e), e]])
        return np.moveaxis(m / self.rho(t), (0, 1), (-2, -1))


def damped_basis(params: OscillatorParams) -> OscBasis:
    """Basis ``rho, xi, eta``; raises :class:`OverdampedError` if ``omega`` is imaginary."""
    return OscBasis(params.omega, params.tau0)


def analytic_fundamental_solution(params: OscillatorParams, grid) -> FundamentalSolution:
    """Closed-form ``G`` and ``G^-1`` sampled on ``grid`` (which must start at 0)."""
    if grid.t_start != 0:
        raise InputError("the closed-form fundamental solution is anchored at t0 = 0")
    b = damped_basis(params)
    t = grid.nodes
    return FundamentalSolution(grid, b.G(t), b.G_inv(t))


def orthogonalize(h_raw: Callable, against: Callable, T: float) -> Callable:
    """Remove the component of ``h_raw`` along ``against`` in ``L2(0, T)``."""
    nn = inner(against, against, T)
    if not nn > 0:
        raise InputError("cannot orthogonalize against a zero function")
    c = inner(h_raw, against, T) / nn

    def h(t):
        return np.asarray(h_raw(t), dtype=float) - c * np.asarray(against(t), dtype=float)

    return h


def _one(t):
    return np.ones_like(np.asarray(t, dtype=float))


@dataclass(frozen=True)
class ControlPair:
    ell_phi: Callable
    ell_psi: Callable
    T: float
    h1: Callable
    h2: Callable

    def to_csv(self, path, times, meta=None):
        t = np.asarray(times, dtype=float)
        info = {"T": self.T}
        info.update(meta or {})
        return write_csv(path, {"t": t, "ell_phi": self.ell_phi(t), "ell_psi": self.ell_psi(t)}, info)


def _truncate(f, T):
    def g(t):
        t = np.asarray(t, dtype=float)
        out = np.where((t >= 0) & (t <= T), f(np.clip(t, 0, T)), 0.0)
        return float(out) if out.ndim == 0 else out

    return g


def oscillation_controls(params: OscillatorParams, T: float, h1=None, h2=None) -> ControlPair:
    """Controls ``ell_phi = -rho h1 / <xi, h1>`` and ``ell_psi = rho h2 / <eta, h2>``.

    ``h1`` must be orthogonal to ``eta`` and ``h2`` to ``xi`` on ``[0, T]``;
    by default both start from the constant 1 and are orthogonalized.
    """
    if not T > 0:
        raise InputError(f"T must be positive, got {T}")
    b = damped_basis(params)
    h1 = orthogonalize(_one, b.eta, T) if h1 is None else h1
    h2 = orthogonalize(_one, b.xi, T) if h2 is None else h2
    p1, p2 = inner(b.xi, h1, T), inner(b.eta, h2, T)
    for name, p, f, h in (("<xi,h1>", p1, b.xi, h1), ("<eta,h2>", p2, b.eta, h2)):
        scale = math.sqrt(inner(f, f, T) * inner(h, h, T))
        if abs(p) <= 1e-12 * scale:
            raise DegenerateControlError(f"pairing {name}={p:.3e} vanishes")
    ell_phi = _truncate(lambda t: -b.rho(t) * h1(t) / p1, T)
    ell_psi = _truncate(lambda t: b.rho(t) * h2(t) / p2, T)
    return ControlPair(ell_phi, ell_psi, T, h1, h2)


def pairing_identities(params: OscillatorParams, pair: ControlPair) -> dict:
    """The four pairings that make ``pair`` stop the oscillator (targets 0, 0, 1, 1)."""
    b = damped_basis(params)
    T = pair.T
    ieta = lambda t: b.eta(t) / b.rho(t)
    ixi = lambda t: b.xi(t) / b.rho(t)
    return {
        "eta_phi": inner(ieta, pair.ell_phi, T),
        "xi_psi": inner(ixi, pair.ell_psi, T),
        "minus_xi_phi": -inner(ixi, pair.ell_phi, T),
        "eta_psi": inner(ieta, pair.ell_psi, T),
    }


def control_matrix(pair: ControlPair):
    """The pair as the matrix control ``[[0, 0], [ell_phi, ell_psi]]``."""
    from .ode_core import ControlMatrix

    return ControlMatrix(
        2, pair.T, lambda t: np.array([[0.0, 0.0], [pair.ell_phi(t), pair.ell_psi(t)]])
    )


def simulate_controlled_oscillator(params: OscillatorParams, pair: Optional[ControlPair], grid, tol=1e-6):
    """Integrate the controlled oscillator from ``(phi, psi)``; returns ``(trajectory, stop report)``.

    ``pair=None`` runs the free oscillator; the report then refers to
    ``grid.t_end``.
    """
    A = params.generator()
    phi, psi = params.phi, params.psi
    if pair is None:
        rhs = lambda t: np.zeros(2)
        breaks, T = (), grid.t_end
    else:
        rhs = lambda t: np.array([0.0, -phi * pair.ell_phi(t) - psi * pair.ell_psi(t)])
        breaks, T = (pair.T,), pair.T
        if T > grid.t_end:
            raise InputError(f"grid ends at {grid.t_end} before T={T}")
    traj = solve_ivp(A, rhs, [phi, psi], grid.t_start, grid, breakpoints=breaks)
    return traj, stopping_check(traj, T, tol)


def _expm1c(x):
    """``exp(x) - 1`` for complex arrays without cancellation near 0."""
    x = np.asarray(x, dtype=complex)
    out = np.exp(x) - 1.0
    small = np.abs(x) < 0.5
    if np.any(small):
        xs = x[small]
        term, acc = xs.copy(), xs.copy()
        for k in range(2, 25):
            term = term * xs / k
            acc = acc + term
        out[small] = acc
    return out


def _moment0(p, L):
    """``int_0^L exp(-p t) dt``."""
    p = np.asarray(p, dtype=complex)
    x = p * L
    out = np.empty_like(x)
    small = np.abs(x) < 1e-8
    out[~small] = -_expm1c(-x[~small]) / p[~small]
    out[small] = L * (1.0 - x[small] / 2.0)
    return out


def _moment1(p, L):
    """``int_0^L t exp(-p t) dt``."""
    p = np.asarray(p, dtype=complex)
    x = p * L
    out = np.empty_like(x)
    small = np.abs(x) < 1.0
    big = ~small
    out[big] = (1.0 - np.exp(-x[big]) * (1.0 + x[big])) / p[big] ** 2
    # L^2 sum_k (-x)^k / (k! (k + 2))
    xs = x[small]
    term = np.ones_like(xs)
    acc = term / 2.0
    for k in range(1, 40):
        term = term * (-xs) / k
        acc = acc + term / (k + 2)
    out[small] = L * L * acc
    return out


@dataclass(frozen=True)
class CosineKernel:
    """``K(t) = varrho(t) cos(omega0 t)`` with ``varrho(t) = varrho_1(a0 t)``.

    ``varrho`` solves ``varrho' + a0 varrho = delta - a0 ell_1(a0 t)``, so
    ``K(t) = [A e^{-a0 t} + B a0 t + C] cos(omega0 t)`` on ``[0, T / a0]``.
    """

    T: float
    a0: float
    omega0: float
    A: float
    B: float
    C: float

    @property
    def b0(self) -> float:
        return self.omega0**2 + self.a0**2

    @property
    def support_end(self) -> float:
        return self.T / self.a0

    @property
    def hypotheses_hold(self) -> bool:
        return self.a0 >= 1 and self.omega0 > 1

    def relaxation(self, t):
        t = np.asarray(t, dtype=float)
        m = (t >= 0) & (t <= self.support_end)
        s = self.a0 * np.where(m, t, 0.0)
        tau = self.T - s
        # A e^{-s} + B s + C, rewritten so the zero at T does not cancel
        out = np.where(m, (np.expm1(tau) - tau) * self.B, 0.0)
        return float(out) if out.ndim == 0 else out

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = self.relaxation(t) * np.cos(self.omega0 * t)
        return float(out) if np.ndim(out) == 0 else out

    def spectrum(self, freqs):
        """Exact transform of the truncated kernel at real or complex ``freqs``."""
        z = -2j * math.pi * np.asarray(freqs, dtype=complex)
        L, a0, w0 = self.support_end, self.a0, self.omega0
        out = 0.0
        for s in (1.0, -1.0):
            q = z - s * 1j * w0
            out = out + self.A * _moment0(q + a0, L) + self.B * a0 * _moment1(q, L) + self.C * _moment0(q, L)
        return 0.5 * out

    def three_term_spectrum(self, freqs):
        """Rational three-term formula for the untruncated kernel, kept for comparison.

        Its last term carries ``omega0`` rather than ``omega0^2`` and the
        untruncated terms have poles at ``omega = +-omega0 / (2 pi)``, so it
        departs from :meth:`spectrum` and must not be used as a transform.
        """
        z = -2j * math.pi * np.asarray(freqs, dtype=complex)
        a0, w0 = self.a0, self.omega0
        with np.errstate(divide="ignore", invalid="ignore"):
            return (
                self.A * (a0 + z) / (w0**2 + (a0 + z) ** 2)
                + (self.B * a0 + self.C * z) / (w0**2 + z**2)
                - self.B * 2 * a0 * w0 / (w0**2 + z**2) ** 2
            )

    def all_subunit(self, freqs) -> bool:
        return bool(np.max(np.abs(self.spectrum(freqs))) < 1.0)


def finite_stop_cosine_kernel(T: float, a0: float, omega0: float) -> CosineKernel:
    if not (T > 0 and a0 > 0 and omega0 > 0):
        raise InputError(f"T, a0, omega0 must be positive, got {T}, {a0}, {omega0}")
    D = math.expm1(T) - T
    return CosineKernel(T, a0, omega0, math.exp(T) / D, 1.0 / D, -(T + 1.0) / D)
