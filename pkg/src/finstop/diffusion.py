"""Diffusion kernels with a finite front built from stopped relaxations.

A relaxation ``varrho`` supported on ``[0, T]`` is spread over the moving
interval ``|x| < R(t)`` through ``s = sqrt(T) x / R(t)``:

    G(x, t) = N / sqrt(pi) * sqrt(T) / R(t) * varrho(s^2).

``G`` solves the heat equation with a control source ``L`` that is again
confined to the front. Everything is explicit, so verification is done
with finite-difference residuals.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import quad

from .errors import DegenerateKernelError, InputError, ResolutionError
from .io import write_csv


@dataclass(frozen=True)
class FrontRadius:
    """Front position ``R(t)`` and speed ``R'(t)`` with speed bound ``cap``."""

    R: Callable
    dR: Callable
    cap: float
    t0: Optional[float] = None
    kinks: Tuple[float, ...] = ()

    @property
    def speed_unbounded(self) -> bool:
        return not math.isfinite(self.cap)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def front_radius_sqrt(D0: float, tau0: float, T: float) -> FrontRadius:
    """``R = sqrt(4 T D0 t / tau0)``; the speed ``sqrt(T D0 / (tau0 t))`` is unbounded at 0."""
    for name, v in (("D0", D0), ("tau0", tau0), ("T", T)):
        if not v > 0:
            raise InputError(f"{name} must be positive, got {v}")
    k = 4.0 * T * D0 / tau0

    def R(t):
        return _out(np.sqrt(k * np.clip(np.asarray(t, dtype=float), 0, None)))

    def dR(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return _out(np.where(t > 0, np.sqrt(k / 4.0 / np.where(t > 0, t, 1.0)), np.inf))

    return FrontRadius(R, dR, math.inf)


def front_radius_capped(D0: float, t0: float, T: float) -> FrontRadius:
    """Quadratic start on ``[0, t0]`` joined C1 to ``sqrt(4 T D0 t)``; speed at most ``3 sqrt(D0 T / t0)``."""
    for name, v in (("D0", D0), ("t0", t0), ("T", T)):
        if not v > 0:
            raise InputError(f"{name} must be positive, got {v}")
    c = math.sqrt(D0 * T / t0**3)
    k = 4.0 * T * D0

    def R(t):
        t = np.clip(np.asarray(t, dtype=float), 0, None)
        return _out(np.where(t <= t0, c * (-t * t + 3 * t0 * t), np.sqrt(k * t)))

    def dR(t):
        t = np.clip(np.asarray(t, dtype=float), 0, None)
        tt = np.where(t > t0, t, t0)
        return _out(np.where(t <= t0, c * (-2 * t + 3 * t0), np.sqrt(k / 4.0 / tt)))

    # both branches must meet with equal value and slope
    left, right = c * 2 * t0 * t0, math.sqrt(k * t0)
    if abs(left - right) > 1e-12 * right or abs(c * t0 - math.sqrt(k / 4 / t0)) > 1e-12 * right:
        raise AssertionError("capped front is not C1 at t0")
    return FrontRadius(R, dR, 3.0 * math.sqrt(D0 * T / t0), t0, (t0,))


@dataclass(frozen=True)
class GeneralizedGaussian:
    kernel: object
    front: FrontRadius
    T: float
    N: float

    @property
    def finite_front(self) -> bool:
        return math.isfinite(self.kernel.T)

    def s2(self, x, t):
        x = np.asarray(x, dtype=float)
        R = np.asarray(self.front.R(t), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.T * x * x / (R * R)

    def value(self, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        pos = t > 0
        tt = np.where(pos, t, 1.0)
        R = np.asarray(self.front.R(tt), dtype=float)
        s2 = self.T * x * x / (R * R)
        v = self.N / math.sqrt(math.pi) * math.sqrt(self.T) / R * np.asarray(self.kernel.value(s2))
        if self.finite_front:
            v = np.where(s2 >= self.T, 0.0, v)
        return _out(np.where(pos, v, 0.0))

    def mass(self, t: float) -> float:
        R = float(self.front.R(t))
        f = lambda x: float(self.value(x, t))
        if self.finite_front:
            return quad(f, -R, R, epsabs=0.0, epsrel=1e-12, limit=200)[0]
        return quad(f, -np.inf, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)[0]

    def to_csv(self, path, xs, ts, meta=None):
        X, Tt = np.meshgrid(np.asarray(xs, float), np.asarray(ts, float))
        info = {"T": self.T, "N": self.N}
        info.update(meta or {})
        return write_csv(path, {"x": X.ravel(), "t": Tt.ravel(), "value": self.value(X, Tt).ravel()}, info)


def _normalization(kernel, T):
    f = lambda s: float(kernel.value(s * s))
    if math.isfinite(kernel.T):
        r = math.sqrt(kernel.T)
        mass = quad(f, -r, r, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    else:
        mass = quad(f, -np.inf, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)[0]
    if not mass > 0:
        raise DegenerateKernelError(f"kernel mass {mass} is not positive")
    return math.sqrt(math.pi) / mass


def generalized_gaussian(kernel, front: FrontRadius, T: Optional[float] = None) -> GeneralizedGaussian:
    """Spread ``kernel`` over the front. ``T`` defaults to the kernel's stopping
    time and must be given for kernels without one (for instance ``exp(-t)``)."""
    if T is None:
        T = kernel.T
    if not (T > 0 and math.isfinite(T)):
        raise InputError(f"a finite positive scale T is required, got {T}")
    return GeneralizedGaussian(kernel, front, T, _normalization(kernel, T))


@dataclass(frozen=True)
class DiffusionControl:
    a0: Callable
    a1: Callable
    a2: Callable
    L: Callable


def control_coeffs(front: FrontRadius, D0: float, tau0: float, T: float, N: float = 1.0):
    """Coefficient fields ``(a0, a1, a2)`` of the control source, for ``t > 0``."""
    c = N / math.sqrt(math.pi)

    def parts(x, t):
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        R = np.asarray(front.R(t), dtype=float)
        dR = np.asarray(front.dR(t), dtype=float)
        s2 = T * x * x / (R * R)
        g = dR - 2.0 * T * D0 / (tau0 * R)
        return R, s2, g

    def a0(x, t):
        R, s2, g = parts(x, t)
        return _out(c * math.sqrt(T) / R**2 * (2.0 / tau0 * s2 - 1.0) * g)

    def a1(x, t):
        R, s2, g = parts(x, t)
        return _out(c * math.sqrt(T) / R**2 * (2.0 * g * s2 + 2.0 * T * D0 / R))

    def a2(x, t):
        R, s2, _ = parts(x, t)
        return _out(c * 4.0 * T**1.5 * D0 / R**3 * s2)

    return a0, a1, a2


def diffusion_control_L(kernel, ell, front: FrontRadius, D0: float, tau0: float, T=None) -> DiffusionControl:
    """Control source ``L = -a0 varrho(s^2) - a1 ell(s^2) - a2 ell'(s^2)``.

    ``ell`` must be the control that produced ``kernel`` at relaxation time
    ``tau0``; a mismatch shows up as a non-vanishing PDE residual.
    """
    if T is None:
        T = kernel.T
    N = _normalization(kernel, T)
    a0, a1, a2 = control_coeffs(front, D0, tau0, T, N)
    finite = math.isfinite(kernel.T)

    def L(x, t):
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        R = np.asarray(front.R(t), dtype=float)
        s2 = T * x * x / (R * R)
        inside = s2 < T if finite else np.ones_like(s2, dtype=bool)
        q = np.where(inside, s2, 0.0)
        v = -a0(x, t) * kernel.value(q) - a1(x, t) * ell.value(q) - a2(x, t) * ell.deriv(q)
        return _out(np.where(inside, v, 0.0))

    return DiffusionControl(a0, a1, a2, L)


@dataclass(frozen=True)
class SpaceTimeGrid:
    x_min: float
    x_max: float
    dx: float
    t_min: float
    t_max: float
    dt: float

    def __post_init__(self):
        if not (self.dx > 0 and self.dt > 0):
            raise InputError("grid steps must be positive")
        if not (self.x_max > self.x_min and self.t_max > self.t_min):
            raise InputError("grid bounds must be increasing")

    @property
    def x(self):
        n = int(round((self.x_max - self.x_min) / self.dx))
        return self.x_min + self.dx * np.arange(n + 1)

    @property
    def t(self):
        n = int(round((self.t_max - self.t_min) / self.dt))
        return self.t_min + self.dt * np.arange(n + 1)

    def refine(self, k: int) -> "SpaceTimeGrid":
        f = 2.0**k
        return SpaceTimeGrid(self.x_min, self.x_max, self.dx / f, self.t_min, self.t_max, self.dt / f)


@dataclass(frozen=True)
class ResidualReport:
    max_residual: float
    order_estimate: float
    residuals: Tuple[float, ...]
    one_sided_nodes: int

    def items(self):
        return {
            "max_residual": self.max_residual,
            "order_estimate": self.order_estimate,
            "residuals": " ".join(format(r, ".6e") for r in self.residuals),
            "one_sided_nodes": self.one_sided_nodes,
        }


def _side(field, x, t):
    """+1 inside the front, -1 outside, and a time-branch label for kinks."""
    if not field.finite_front:
        return np.ones(np.broadcast(x, t).shape)
    return np.where(field.s2(x, t) < field.T, 1.0, -1.0)


def _branch(field, t):
    out = np.zeros(np.shape(t))
    for k in field.front.kinks:
        out = out + (np.asarray(t) > k)
    return out


def _residual_at(field, control, D0, X, Tt, hx, ht, diffusivity=None):
    """Residual at nodes ``(X, Tt)`` using stencil spacings ``hx``, ``ht``."""
    g = field.value
    f0 = g(X, Tt)
    inside = _side(field, X, Tt)
    br = _branch(field, Tt)

    # time derivative: central unless the stencil crosses the front or a kink
    tp, tm = Tt + ht, Tt - ht
    ok_t = (_side(field, X, tp) == inside) & (_side(field, X, tm) == inside)
    ok_t &= (_branch(field, tp) == br) & (_branch(field, tm) == br)
    central_t = (g(X, tp) - g(X, tm)) / (2 * ht)
    back_ok = (_side(field, X, Tt - 2 * ht) == inside) & (_branch(field, Tt - 2 * ht) == br)
    back_ok &= (_side(field, X, tm) == inside) & (_branch(field, tm) == br)
    back = (3 * f0 - 4 * g(X, tm) + g(X, Tt - 2 * ht)) / (2 * ht)
    fwd = (-3 * f0 + 4 * g(X, tp) - g(X, Tt + 2 * ht)) / (2 * ht)
    gt = np.where(ok_t, central_t, np.where(back_ok, back, fwd))

    # space derivative: one-sided four-point stencils pointing into the node's region
    xp, xm = X + hx, X - hx
    ok_x = (_side(field, xp, Tt) == inside) & (_side(field, xm, Tt) == inside)
    central_x = (g(xp, Tt) - 2 * f0 + g(xm, Tt)) / hx**2
    # the side away from the nearer front lies toward x = 0 when inside, away from 0 outside
    d = np.where(inside > 0, -np.sign(X), np.sign(X))
    d = np.where(d == 0, 1.0, d)
    one = (2 * f0 - 5 * g(X + d * hx, Tt) + 4 * g(X + 2 * d * hx, Tt) - g(X + 3 * d * hx, Tt)) / hx**2
    gxx = np.where(ok_x, central_x, one)

    if diffusivity is None:
        res = gt - D0 * gxx + control.L(X, Tt)
    else:
        res = gt - diffusivity(X, Tt) * gxx
    return res, int(np.sum(~ok_t) + np.sum(~ok_x))


def pde_residual(field: GeneralizedGaussian, control: Optional[DiffusionControl], D0, grid: SpaceTimeGrid,
                 refinements: int = 3, diffusivity=None) -> ResidualReport:
    """Finite-difference residual of ``G_t - D0 G_xx + L`` on a refinement ladder.

    The residual is evaluated at the nodes of ``grid`` with stencil spacings
    halved ``refinements`` times; ``order_estimate`` is the smallest
    ``log2`` ratio between consecutive levels. Passing ``diffusivity``
    replaces ``D0`` by a field and drops ``L``.
    """
    if grid.t_min < 10 * grid.dt:
        raise InputError(f"t_min={grid.t_min} must be at least 10 dt={10 * grid.dt} (source excluded)")
    R = float(field.front.R(grid.t_min))
    if field.finite_front and 2 * R / grid.dx < 5:
        raise ResolutionError(f"only {2 * R / grid.dx:.1f} nodes across the front at t={grid.t_min}")
    X, Tt = np.meshgrid(grid.x[1:-1], grid.t[1:-1])
    residuals, one_sided = [], 0
    for k in range(refinements + 1):
        f = 2.0**k
        r, n = _residual_at(field, control, D0, X, Tt, grid.dx / f, grid.dt / f, diffusivity)
        residuals.append(float(np.max(np.abs(r))))
        one_sided = n
    ratios = [a / b for a, b in zip(residuals[:-1], residuals[1:]) if b > 0]
    if len(ratios) < len(residuals) - 1 or not ratios:
        order = math.inf if residuals[-1] == 0 else math.nan
    else:
        order = min(math.log2(q) for q in ratios)
    return ResidualReport(residuals[-1], order, tuple(residuals), one_sided)


@dataclass(frozen=True)
class VariableDiffusivity:
    """Diffusivity field for which ``G`` solves the uncontrolled equation."""

    numerator: Callable
    denominator: Callable
    form: str

    def __call__(self, x, t):
        num, den = self.numerator(x, t), self.denominator(x, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den != 0, num / np.where(den != 0, den, 1.0), np.nan)
        out = np.where((num == 0) & (den == 0), 0.0, out)
        return _out(out)

    def scan(self, xs, ts, threshold: float = 1e-10) -> dict:
        """Negativity and near-singular denominators over a grid inside the front."""
        X, Tt = np.meshgrid(np.asarray(xs, float), np.asarray(ts, float))
        num, den = self.numerator(X, Tt), self.denominator(X, Tt)
        active = (num != 0) | (den != 0)
        scale = np.maximum(1.0, np.abs(num))
        singular = active & (np.abs(den) < threshold * scale)
        with np.errstate(divide="ignore", invalid="ignore"):
            D = np.where(active & ~singular, num / np.where(den == 0, 1.0, den), 0.0)
        neg = active & ~singular & (D < 0)
        return {
            "min_D": float(np.min(D[active & ~singular])) if np.any(active & ~singular) else 0.0,
            "negative_count": int(np.sum(neg)),
            "singular_count": int(np.sum(singular)),
            "singular_locations": list(zip(X[singular].tolist(), Tt[singular].tolist())),
            "nonnegative": bool(not np.any(neg)),
        }


def variable_diffusivity(rate, front: FrontRadius, T: float, form: str = "derived") -> VariableDiffusivity:
    """Diffusivity ``D = G_t / G_xx`` on ``|x| < R(t)``, zero outside.

    ``rate`` supplies ``a = 1/tau`` and ``a'`` for the relaxation behind ``G``.
    ``form="derived"`` uses ``R R' tau (2 s^2 - tau) / (2 T [2 s^2 (1 + tau') - tau])``;
    ``form="quadratic"`` swaps the numerator factor for ``tau^2 - 2 s^2``.
    """
    if form not in ("derived", "quadratic"):
        raise InputError(f"form must be 'derived' or 'quadratic', got {form!r}")

    def pieces(x, t):
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        R = np.asarray(front.R(t), dtype=float)
        dR = np.asarray(front.dR(t), dtype=float)
        s2 = T * x * x / (R * R)
        inside = (s2 < rate.domain_end) & (t > 0)
        q = np.where(inside, s2, 0.0)
        a = np.asarray(rate.a(q), dtype=float)
        tau = 1.0 / a
        dtau = -np.asarray(rate.da(q), dtype=float) / (a * a)
        return R, dR, q, tau, dtau, inside

    def numerator(x, t):
        R, dR, s2, tau, _, inside = pieces(x, t)
        factor = 2 * s2 - tau if form == "derived" else tau * tau - 2 * s2
        return _out(np.where(inside, R * dR * tau * factor, 0.0))

    def denominator(x, t):
        _, _, s2, tau, dtau, inside = pieces(x, t)
        return _out(np.where(inside, 2 * T * (2 * s2 * (1 + dtau) - tau), 0.0))

    return VariableDiffusivity(numerator, denominator, form)
