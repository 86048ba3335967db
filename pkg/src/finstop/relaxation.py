"""Scalar relaxation with a finite stopping time.

A relaxation ``rho' + rho / tau = 0`` is driven to zero at ``T`` by a control
``ell`` supported on ``[0, T]`` with ``int_0^T ell / rho = 1``. The controlled
process ``varrho`` then has the effective rate ``a = -varrho' / varrho``; its
kinetic energy ``(varrho')^2 / 2`` decreases exactly when ``a^2 >= a'``.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import gammainc, gammaln

from ._quadrature import simpson_fn
from .errors import InputError, NumericalDegeneracyError
from .io import write_csv

Number = Union[int, float]

# ln(1e16): the bump control is below 1e-16 of its peak past this exponent
_BUMP_TAIL = 16.0 * math.log(10.0)
# the rate of the bump kernel is reported up to exp(-600) of the peak
_BUMP_RATE_TAIL = 600.0
# denominator floor for the time-dependent relaxation time
_DEGENERATE = 1e-14
_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def _vectorize(fn):
    vf = np.vectorize(fn, otypes=[float])

    def wrapper(t):
        out = vf(t)
        return float(out) if np.ndim(out) == 0 else out

    return wrapper


def _quad(f, a, b):
    val, _ = quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=400)
    return val


@dataclass(frozen=True)
class RateFunction:
    """Effective rate ``a = 1 / tau_T`` on ``(0, domain_end)``."""

    a: Callable
    da: Optional[Callable]
    domain_end: float
    tau_fn: Optional[Callable] = None

    def tau(self, t):
        """Relaxation time ``tau_T``; zero from ``domain_end`` on."""
        if self.tau_fn is not None:
            return self.tau_fn(t)
        t = np.asarray(t, dtype=float)
        inside = t < self.domain_end
        out = np.zeros_like(t)
        out[inside] = 1.0 / np.asarray(self.a(t[inside]), dtype=float)
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path, times, meta=None):
        times = np.asarray(times, dtype=float)
        da = self.da(times) if self.da is not None else np.full_like(times, np.nan)
        return write_csv(path, {"t": times, "a": self.a(times), "da": da}, meta)


@dataclass(frozen=True)
class RelaxationKernel:
    """Causal relaxation ``varrho`` with its first two derivatives."""

    T: float
    value: Callable
    deriv: Callable
    deriv2: Callable
    closed_form: bool
    rate: Optional[RateFunction] = None
    endpoint_slope: Optional[float] = None
    name: str = ""

    def rate_function(self) -> RateFunction:
        if self.rate is not None:
            return self.rate

        def a(t):
            return -np.asarray(self.deriv(t)) / np.asarray(self.value(t))

        def da(t):
            v = np.asarray(self.value(t))
            return a(t) ** 2 - np.asarray(self.deriv2(t)) / v

        return RateFunction(a, da, self.T)

    def to_csv(self, path, times, meta=None):
        t = np.asarray(times, dtype=float)
        cols = {"t": t, "rho": self.value(t), "drho": self.deriv(t), "ddrho": self.deriv2(t)}
        info = {"kernel": self.name, "T": self.T, "closed_form": self.closed_form}
        info.update(meta or {})
        return write_csv(path, cols, info)


@dataclass(frozen=True)
class ControlFunction:
    """Control supported on ``[0, T]``, normalized against ``exp(s / tau0)``."""

    T: float
    smoothness_order: float
    value: Callable
    deriv: Callable
    denominator: float
    tau0: float = 1.0

    def normalization_error(self, tau=None) -> float:
        """``|int_0^T ell / rho - 1|`` for the uncontrolled relaxation ``rho``."""
        if self.T == math.inf:
            return 0.0 if self.denominator == 0 else math.inf
        rho = classical_rho(self.tau0 if tau is None else tau)
        return abs(_quad(lambda s: self.value(s) / rho(s), 0.0, self.T) - 1.0)

    @classmethod
    def zero(cls) -> "ControlFunction":
        """No control, the process never stops."""
        z = lambda t: np.zeros_like(np.asarray(t, dtype=float)) + 0.0
        return cls(math.inf, math.inf, z, z, 0.0)


def classical_rho(tau: Union[Number, Callable]) -> Callable:
    """Uncontrolled relaxation ``exp(-int_0^t 1/tau)``.

    A constant ``tau`` gives the exact exponential; otherwise the exponent is
    integrated with composite Simpson.
    """
    if np.isscalar(tau):
        tau0 = float(tau)
        if not tau0 > 0:
            raise InputError(f"tau must be positive, got {tau0}")
        return lambda t: np.exp(-np.asarray(t, dtype=float) / tau0)

    def inv(s):
        v = np.asarray(tau(s), dtype=float)
        if np.any(~(v > 0)):
            raise InputError("tau must be positive on [0, t]")
        return 1.0 / v

    def rho(t):
        if t == 0:
            return 1.0
        n = max(64, 2 * int(math.ceil(abs(t) * 64)))
        return math.exp(-simpson_fn(inv, 0.0, t, n))

    return _vectorize(rho)


def classical_kernel(tau0: float = 1.0) -> RelaxationKernel:
    """Uncontrolled ``exp(-t / tau0)`` for ``t >= 0``; it never stops."""
    if not tau0 > 0:
        raise InputError(f"tau0 must be positive, got {tau0}")

    def mk(c):
        def f(t):
            t = np.asarray(t, dtype=float)
            out = np.where(t >= 0, c * np.exp(-np.clip(t, 0, None) / tau0), 0.0)
            return float(out) if out.ndim == 0 else out

        return f

    const = lambda t: np.full(np.shape(t), 1.0 / tau0) if np.ndim(t) else 1.0 / tau0
    zero = lambda t: np.zeros(np.shape(t)) if np.ndim(t) else 0.0
    rate = RateFunction(const, zero, math.inf)
    return RelaxationKernel(math.inf, mk(1.0), mk(-1.0 / tau0), mk(1.0 / tau0**2), True, rate, None, "exponential")


def _support(t, T):
    t = np.asarray(t, dtype=float)
    return t, (t >= 0) & (t <= T)


def control_ell_poly(n: int, T: float, tau0: float = 1.0) -> ControlFunction:
    """Polynomial control ``(T - t)^n / int_0^T e^{s/tau0} (T - s)^n ds``."""
    if not T > 0:
        raise InputError(f"T must be positive, got {T}")
    if int(n) != n or n < 1:
        raise InputError(f"n must be a positive integer, got {n}")
    n = int(n)
    den = _quad(lambda s: math.exp(s / tau0) * (T - s) ** n, 0.0, T)

    def value(t):
        t, m = _support(t, T)
        out = np.where(m, np.clip(T - t, 0, None) ** n / den, 0.0)
        return float(out) if out.ndim == 0 else out

    def deriv(t):
        t, m = _support(t, T)
        out = np.where(m, -n * np.clip(T - t, 0, None) ** (n - 1) / den, 0.0)
        return float(out) if out.ndim == 0 else out

    return ControlFunction(T, n, value, deriv, den, tau0)


def _bump_cut(T, tail):
    # p(t) = exp(-t^2/(T^2-t^2)) drops below exp(-tail) for t > T sqrt(tail/(1+tail))
    return T * math.sqrt(tail / (1.0 + tail))


def _bump_exponent(t, T):
    return t * t / (T * T - t * t)


def control_ell_bump(T: float, tau0: float = 1.0) -> ControlFunction:
    """Smooth control ``exp(-t^2/(T^2-t^2))`` normalized like the polynomial one."""
    if not T > 0:
        raise InputError(f"T must be positive, got {T}")
    cut = _bump_cut(T, _BUMP_TAIL)
    den = _quad(lambda s: math.exp(s / tau0 - _bump_exponent(s, T)), 0.0, cut)

    def value(t):
        t = np.asarray(t, dtype=float)
        m = (t >= 0) & (t < T)
        tt = np.where(m, t, 0.0)
        out = np.where(m, np.exp(-tt * tt / (T * T - tt * tt)) / den, 0.0)
        return float(out) if out.ndim == 0 else out

    def deriv(t):
        t = np.asarray(t, dtype=float)
        m = (t >= 0) & (t < T)
        tt = np.where(m, t, 0.0)
        q = T * T - tt * tt
        out = np.where(m, -2 * tt * T * T / q**2 * np.exp(-tt * tt / q) / den, 0.0)
        return float(out) if out.ndim == 0 else out

    return ControlFunction(T, math.inf, value, deriv, den, tau0)


def _check_T(T):
    if not T > 0:
        raise InputError(f"T must be positive, got {T}")
    if T < 1:
        warnings.warn(f"T={T} < 1: the kernel is far from exp(-t) before T", stacklevel=3)


def _varrho_poly(n, T):
    logP_T = math.log(gammainc(n + 1, T))
    logI = gammaln(n + 1) + T + logP_T

    def value(t):
        t, m = _support(t, T)
        tau = np.clip(T - t, 0, None)
        out = np.where(m, np.exp(-t) * gammainc(n + 1, tau) / math.exp(logP_T), 0.0)
        return float(out) if out.ndim == 0 else out

    def ell(t, k=0):
        t, m = _support(t, T)
        tau = np.clip(T - t, 0, None)
        if k == 0:
            out = np.where(m, tau**n * math.exp(-logI), 0.0)
        else:
            out = np.where(m, -n * tau ** (n - 1) * math.exp(-logI), 0.0)
        return out

    def deriv(t):
        out = -np.asarray(value(t)) - ell(t)
        return float(out) if out.ndim == 0 else out

    def deriv2(t):
        out = np.asarray(value(t)) + ell(t) - ell(t, 1)
        return float(out) if out.ndim == 0 else out

    def ratio(t):
        # ell / varrho expressed through tau = T - t only
        tau = np.asarray(T - np.asarray(t, dtype=float))
        with np.errstate(divide="ignore", over="ignore"):
            return np.exp(n * np.log(tau) - tau - gammaln(n + 1) - np.log(gammainc(n + 1, tau)))

    def a(t):
        out = 1.0 + ratio(t)
        return float(out) if np.ndim(out) == 0 else out

    def da(t):
        tau = T - np.asarray(t, dtype=float)
        r = ratio(t)
        out = (1.0 + r) ** 2 - 1.0 - r * (1.0 + n / tau)
        return float(out) if np.ndim(out) == 0 else out

    return RelaxationKernel(T, value, deriv, deriv2, False, RateFunction(a, da, T), 0.0, f"varrho_{n}")


def _varrho_bump(T):
    cut = _bump_cut(T, _BUMP_TAIL)
    I_T = _quad(lambda s: math.exp(s - _bump_exponent(s, T)), 0.0, cut)

    def J(t):
        # int_t^T e^{s-t} p(s)/p(t) ds with s = t + u; the exponent is written
        # so that no large g(s), g(t) cancel. Gauss-Legendre on 4 panels up to
        # the point where p(s)/p(t) < e^-40.
        t = np.asarray(t, dtype=float)
        live = t < T
        tt = np.where(live, t, 0.0)
        d = T - tt
        g = tt * tt / (d * (T + tt))
        v = g + 40.0
        width = T * np.sqrt(v / (1.0 + v)) - tt
        tot = np.zeros_like(tt)
        dd, t1 = d[..., None], tt[..., None]
        for k in range(4):
            a, b = width * k / 4.0, width * (k + 1) / 4.0
            u = 0.5 * (b - a)[..., None] * _GL_X + 0.5 * (a + b)[..., None]
            ex = u - T * T * u * (2 * t1 + u) / ((dd - u) * (T + t1 + u) * dd * (T + t1))
            tot = tot + 0.5 * (b - a) * np.sum(_GL_W * np.exp(ex), axis=-1)
        return np.where(live, tot, 0.0)

    def p(t):
        t = np.asarray(t, dtype=float)
        m = (t >= 0) & (t < T)
        tt = np.where(m, t, 0.0)
        return np.where(m, np.exp(-_bump_exponent(tt, T)), 0.0), tt, m

    def value(t):
        pt, tt, m = p(t)
        out = np.where(m, pt * J(tt) / I_T, 0.0)
        return float(out) if out.ndim == 0 else out

    def ell(t, k=0):
        pt, tt, m = p(t)
        if k == 0:
            return pt / I_T
        return np.where(m, -2 * tt * T * T / (T * T - tt * tt) ** 2, 0.0) * pt / I_T

    def deriv(t):
        out = -np.asarray(value(t)) - ell(t)
        return float(out) if out.ndim == 0 else out

    def deriv2(t):
        out = np.asarray(value(t)) + ell(t) - ell(t, 1)
        return float(out) if out.ndim == 0 else out

    def a(t):
        out = 1.0 + 1.0 / J(t)
        return float(out) if np.ndim(out) == 0 else out

    def da(t):
        t = np.asarray(t, dtype=float)
        j = J(t)
        dg = 2 * t * T * T / (T * T - t * t) ** 2
        out = (1.0 + 1.0 / j) ** 2 - 1.0 - (1.0 + dg) / j
        return float(out) if np.ndim(out) == 0 else out

    rate = RateFunction(a, da, _bump_cut(T, _BUMP_RATE_TAIL))
    return RelaxationKernel(T, value, deriv, deriv2, False, rate, 0.0, "varrho_inf")


def varrho_n(n, T: float) -> RelaxationKernel:
    """Relaxation ``e^{-t}[1 - I_n(t) / I_n(T)]`` driven by the control of order ``n``.

    ``n`` is a positive integer or ``math.inf`` (bump control). For finite
    ``n`` the ratio is evaluated as a regularized incomplete gamma function,
    which stays accurate up to ``T``.
    """
    _check_T(T)
    if n == math.inf:
        return _varrho_bump(T)
    if int(n) != n or n < 1:
        raise InputError(f"n must be a positive integer or inf, got {n}")
    return _varrho_poly(int(n), T)


def varrho_closed(n: int, T: float) -> RelaxationKernel:
    """Explicit kernels and rates for ``n = 1, 2``."""
    if n not in (1, 2):
        raise InputError(f"closed forms exist for n in (1, 2), got {n}")
    _check_T(T)
    if n == 1:
        D = math.expm1(T) - T

        def parts(tau):
            em = np.expm1(tau)
            return (em - tau) / D, -em / D, (em + 1.0) / D

        def a(t):
            tau = T - np.asarray(t, dtype=float)
            em = np.expm1(tau)
            out = em / (em - tau)
            return float(out) if out.ndim == 0 else out

        def da(t):
            tau = T - np.asarray(t, dtype=float)
            em = np.expm1(tau)
            d = em - tau
            out = -((em + 1.0) * d - em * em) / d**2
            return float(out) if out.ndim == 0 else out

    else:
        D = 2.0 * math.expm1(T) - T * T - 2.0 * T

        def parts(tau):
            em = np.expm1(tau)
            return (2 * em - tau * tau - 2 * tau) / D, (-2 * em + 2 * tau) / D, 2 * em / D

        def a(t):
            tau = T - np.asarray(t, dtype=float)
            em = np.expm1(tau)
            out = 2 * (em - tau) / (2 * em - tau * tau - 2 * tau)
            return float(out) if out.ndim == 0 else out

        def da(t):
            tau = T - np.asarray(t, dtype=float)
            em = np.expm1(tau)
            num, den = 2 * (em - tau), 2 * em - tau * tau - 2 * tau
            out = -(2 * em * den - num * num) / den**2
            return float(out) if out.ndim == 0 else out

    def pick(k):
        def f(t):
            t, m = _support(t, T)
            out = np.where(m, parts(np.clip(T - t, 0, None))[k], 0.0)
            return float(out) if out.ndim == 0 else out

        return f

    return RelaxationKernel(
        T, pick(0), pick(1), pick(2), True, RateFunction(a, da, T), 0.0, f"varrho_{n}_closed"
    )


def _numeric_derivative(f, t):
    h = 1e-5 * max(1.0, abs(t))
    return (f(t + h) - f(t - h)) / (2 * h)


def tau_T_from(
    ell: ControlFunction,
    tau: Union[Number, Callable],
    T: float,
    dtau: Optional[Callable] = None,
) -> RateFunction:
    """Time-dependent relaxation time of the process stopped by ``ell``.

    With ``h(t) = int_t^T ell / rho`` the controlled process is
    ``varrho = rho h``, so ``tau_T = tau varrho / (varrho + tau ell)`` and
    ``a = 1 / tau + ell / varrho``. The tail integral keeps ``h`` accurate
    close to ``T``. At ``t = 0`` this gives ``tau0 / (1 + tau0 ell(0+))``.
    """
    const = np.isscalar(tau)
    tau_f = (lambda t: float(tau)) if const else (lambda t: float(tau(t)))
    if const:
        dtau_f = lambda t: 0.0
    elif dtau is not None:
        dtau_f = lambda t: float(dtau(t))
    else:
        dtau_f = lambda t: _numeric_derivative(tau_f, t)
    rho = classical_rho(tau)
    stop = ell.T if ell.T != math.inf else math.inf
    if stop != math.inf and abs(stop - T) > 1e-12 * max(1.0, T):
        raise InputError(f"control support ends at {stop}, expected T={T}")

    def state(t):
        if stop == math.inf:
            h = 1.0 - (_quad(lambda s: ell.value(s) / rho(s), 0.0, t) if ell.denominator else 0.0)
        else:
            h = _quad(lambda s: ell.value(s) / rho(s), t, T)
        r = float(rho(t))
        v = r * h
        return v, float(ell.value(t)), tau_f(t)

    @_vectorize
    def tau_T(t):
        if t >= T:
            return 0.0
        v, l, tt = state(t)
        den = v + tt * l
        if den < _DEGENERATE:
            raise NumericalDegeneracyError(f"denominator {den:.3e} below {_DEGENERATE} at t={t}", location=t)
        return tt * v / den

    @_vectorize
    def a(t):
        v, l, tt = state(t)
        if v < _DEGENERATE * 1e-2:
            raise NumericalDegeneracyError(f"controlled state vanishes at t={t}", location=t)
        return 1.0 / tt + l / v

    @_vectorize
    def da(t):
        v, l, tt = state(t)
        dv = -v / tt - l
        dl = float(ell.deriv(t))
        return -dtau_f(t) / tt**2 + (dl * v - l * dv) / v**2

    return RateFunction(a, da, T, tau_T)


def power_law(mu: float, T: float) -> RelaxationKernel:
    """``varrho = (1 - t/T)^(mu T)`` on ``[0, T)`` with rate ``mu T / (T - t)``.

    ``endpoint_slope`` holds ``varrho'(T-)``: 0 if ``mu T > 1``, ``-1/T`` if
    ``mu T = 1`` and ``-inf`` if ``mu T < 1``.
    """
    if not (mu > 0 and T > 0):
        raise InputError(f"mu and T must be positive, got mu={mu}, T={T}")
    k = mu * T

    def mk(c, p):
        def f(t):
            t = np.asarray(t, dtype=float)
            m = (t >= 0) & (t < T)
            base = np.where(m, 1.0 - t / T, 1.0)
            out = np.where(m, c * base**p, 0.0)
            return float(out) if out.ndim == 0 else out

        return f

    value = mk(1.0, k)
    deriv = mk(-mu, k - 1)
    deriv2 = mk(mu * (k - 1) / T, k - 2)

    if math.isclose(k, 1.0, rel_tol=1e-12):
        slope = -1.0 / T
    elif k > 1:
        slope = 0.0
    else:
        slope = -math.inf

    def a(t):
        out = k / (T - np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def da(t):
        out = k / (T - np.asarray(t, dtype=float)) ** 2
        return float(out) if np.ndim(out) == 0 else out

    return RelaxationKernel(T, value, deriv, deriv2, True, RateFunction(a, da, T), slope, "power_law")


def tan_rate(a0: float, a1: float, T: float):
    """Rate ``a0 + a1 tan(pi t / 2T)`` and whether its energy decreases.

    The flag requires positive ``a0``, ``a1`` with ``a1 >= pi/(2T)`` and
    ``a0^2 >= pi a1 / (2T)``; a relative slack of 1e-12 admits the boundary.
    """
    if not T > 0:
        raise InputError(f"T must be positive, got {T}")
    b0 = math.pi / (2.0 * T)
    slack = 1.0 - 1e-12
    valid = bool(a0 > 0 and a1 > 0 and a1 >= b0 * slack and a0 * a0 >= b0 * a1 * slack)

    def a(t):
        out = a0 + a1 * np.tan(b0 * np.asarray(t, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def da(t):
        out = a1 * b0 / np.cos(b0 * np.asarray(t, dtype=float)) ** 2
        return float(out) if np.ndim(out) == 0 else out

    return RateFunction(a, da, T), valid


@dataclass(frozen=True)
class EnergyReport:
    min_margin: float
    worst_t: float
    passes: bool


def energy_monotone_check(rate: RateFunction, grid, tol: float = 1e-10) -> EnergyReport:
    """Minimum of ``a^2 - a'`` over interior grid nodes inside the rate's domain.

    A node passes when ``a^2 - a' >= -tol * max(1, a^2)``; the relative
    slack absorbs rounding where ``a`` blows up near the stopping time.
    ``a'`` falls back to central differences when ``rate.da`` is missing.
    """
    t = grid.nodes[1:-1]
    t = t[(t > 0) & (t < rate.domain_end)]
    if t.size == 0:
        raise InputError("no interior grid nodes inside the rate's domain")
    a = np.asarray(rate.a(t), dtype=float)
    if rate.da is not None:
        da = np.asarray(rate.da(t), dtype=float)
    else:
        h = grid.step
        da = (np.asarray(rate.a(t + h)) - np.asarray(rate.a(t - h))) / (2 * h)
    margin = a * a - da
    i = int(np.argmin(margin))
    ok = bool(np.all(margin >= -tol * np.maximum(1.0, a * a)))
    return EnergyReport(float(margin[i]), float(t[i]), ok)
