"""Dissipative wave kernels in the frequency domain.

Transforms follow ``F(f)(w) = int f(t) exp(+i 2 pi w t) dt``, so a time
derivative becomes multiplication by ``z = -i 2 pi w`` and a causal kernel's
transform is its Laplace transform at ``z``. A kernel family
``K(r, .) = F^-1(exp(-alpha r))`` is built from an attenuation law ``alpha``;
a wave observed at distance ``|x|`` is ``K(|x|, t - |x|/c0) / (4 pi |x|)``.

Grids are periodic: ``n`` samples of step ``dt`` with signed times in FFT
order (the second half of the array holds negative times).
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    BranchError,
    ExtractionUndefinedError,
    InputError,
    InvalidKernelError,
    SingularPointError,
    WindowError,
)
from .io import TRANSFORM_CONVENTION, write_csv


@dataclass(frozen=True)
class FrequencyGrid:
    n_samples: int
    dt: float

    def __post_init__(self):
        n = self.n_samples
        if int(n) != n or n < 2 or (int(n) & (int(n) - 1)):
            raise InputError(f"n_samples must be a power of two, got {n}")
        if not self.dt > 0:
            raise InputError(f"dt must be positive, got {self.dt}")

    @classmethod
    def from_window(cls, duration: float, dt: float) -> "FrequencyGrid":
        """Smallest power-of-two grid covering ``duration``."""
        if not (duration > 0 and dt > 0):
            raise InputError("duration and dt must be positive")
        n = 1 << max(1, math.ceil(math.log2(duration / dt - 1e-9)))
        return cls(n, dt)

    @property
    def window(self) -> float:
        return self.n_samples * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_samples, 1.0 / self.window)

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_samples, self.dt)

    @property
    def z(self) -> np.ndarray:
        return -2j * math.pi * self.freqs

    def check_support(self, support: float):
        if support > self.window / 2:
            raise WindowError(f"support {support} exceeds half the window {self.window / 2}")


def _check_len(x, grid):
    x = np.asarray(x)
    if x.shape != (grid.n_samples,):
        raise InputError(f"expected {grid.n_samples} samples, got shape {x.shape}")
    return x


def spectrum(signal, grid: FrequencyGrid) -> np.ndarray:
    """``dt * sum_k f_k exp(+i 2 pi w t_k)`` at every grid frequency."""
    f = _check_len(signal, grid)
    return grid.n_samples * grid.dt * np.fft.ifft(f)


def inverse_spectrum(values, grid: FrequencyGrid, real: bool = True) -> np.ndarray:
    F = _check_len(values, grid)
    out = np.fft.fft(F) / (grid.n_samples * grid.dt)
    return out.real if real else out


def sample_causal(f: Callable, grid: FrequencyGrid) -> np.ndarray:
    """Sample a causal ``f`` with the jump at 0 split in half (midpoint value)."""
    t = grid.times
    out = np.zeros(grid.n_samples)
    pos = t > 0
    out[pos] = f(t[pos])
    out[0] = 0.5 * float(np.asarray(f(np.array([0.0])))[0])
    return out


def closed_form_transforms(omega0: float, a0: float):
    """Transforms of ``sin(omega0 t) H``, ``exp(-a0 t) cos(omega0 t) H`` and
    ``t cos(omega0 t) H``. Complex frequencies ``w + i eps / (2 pi)`` give the
    transforms of the same signals damped by ``exp(-eps t)``."""
    if not omega0 > 0 or a0 < 0:
        raise InputError(f"need omega0 > 0 and a0 >= 0, got {omega0}, {a0}")

    def zz(w):
        return -2j * math.pi * np.asarray(w, dtype=complex)

    def u_hat(w):
        z = zz(w)
        return omega0 / (omega0**2 + z**2)

    def v_hat(w):
        z = zz(w)
        return (a0 + z) / ((a0 + z) ** 2 + omega0**2)

    def w_hat(w):
        z = zz(w)
        q = omega0**2 + z**2
        return 1.0 / q - 2.0 * omega0**2 / q**2

    return u_hat, v_hat, w_hat


@dataclass(frozen=True)
class AttenuationLaw:
    """Law ``alpha`` sampled at the frequencies of ``grid``."""

    grid: FrequencyGrid
    values: np.ndarray
    realpart_min: float
    admissible_by: str = ""

    @classmethod
    def from_function(cls, fn: Callable, grid: FrequencyGrid) -> "AttenuationLaw":
        """Sample an analytic law ``fn(z)`` with ``z = -i 2 pi w``."""
        vals = np.asarray(fn(grid.z), dtype=complex)
        return cls(grid, vals, float(np.min(vals.real)), "analytic")

    def __add__(self, other):
        vals = self.values + np.asarray(other.values if isinstance(other, AttenuationLaw) else other)
        return AttenuationLaw(self.grid, vals, float(np.min(vals.real)), "sum")

    def to_csv(self, path, meta=None):
        info = {"convention": TRANSFORM_CONVENTION, "n_samples": self.grid.n_samples, "dt": self.grid.dt}
        info.update(meta or {})
        order = np.argsort(self.grid.freqs)
        cols = {
            "omega": self.grid.freqs[order],
            "re_alpha": self.values.real[order],
            "im_alpha": self.values.imag[order],
        }
        return write_csv(path, cols, info)


def attenuation_from_kernel(K1, grid: FrequencyGrid, unit_tol: float = 1e-9) -> AttenuationLaw:
    """Principal-branch law with ``exp(-alpha) = F(K1)``.

    ``alpha = log(1/|K|) - i atan2(Im K, Re K)``. Admissibility needs either
    ``||K1||_1 <= 1/sqrt(2)`` or ``|F(K1)| <= 1 + unit_tol`` on the grid.
    """
    K = spectrum(K1, grid)
    re = K.real
    if np.any(re <= 0):
        i = int(np.argmin(re))
        raise ExtractionUndefinedError(f"Re F(K1) = {re[i]:.3e} <= 0 at w = {grid.freqs[i]}")
    l1 = grid.dt * float(np.sum(np.abs(K1)))
    amp = np.abs(K)
    if l1 <= 1 / math.sqrt(2):
        by = "l1"
    elif np.max(amp) <= 1 + unit_tol:
        by = "amplitude"
    else:
        i = int(np.argmax(amp))
        raise InvalidKernelError(
            f"||K1||_1 = {l1:.6g} > 1/sqrt(2) and |F(K1)| = {amp[i]:.6g} > 1 at w = {grid.freqs[i]}"
        )
    alpha = -np.log(amp) - 1j * np.arctan2(K.imag, re)
    return AttenuationLaw(grid, alpha, float(np.min(alpha.real)), by)


@dataclass(frozen=True)
class DissipativeKernel:
    law: AttenuationLaw
    T_unit: Optional[float]

    @property
    def grid(self) -> FrequencyGrid:
        return self.law.grid

    def spectrum_at(self, r: float) -> np.ndarray:
        return np.exp(-self.law.values * r)

    def at(self, r: float) -> np.ndarray:
        """Samples of ``K(r, .)`` on the grid times; ``r = 0`` is the discrete delta."""
        if r < 0:
            raise InputError(f"r must be nonnegative, got {r}")
        if self.T_unit is not None:
            self.grid.check_support(r * self.T_unit)
        return inverse_spectrum(self.spectrum_at(r), self.grid)

    def to_csv(self, path, radii, meta=None):
        g = self.grid
        order = np.argsort(g.times)
        cols = {"t": g.times[order]}
        for r in radii:
            cols[f"K_r{r:g}"] = self.at(r)[order]
        info = {"convention": TRANSFORM_CONVENTION, "n_samples": g.n_samples, "dt": g.dt, "T_unit": self.T_unit}
        info.update(meta or {})
        return write_csv(path, cols, info)


def kernel_family(law: AttenuationLaw, T_unit: Optional[float] = None) -> DissipativeKernel:
    """Family ``K(r, .) = F^-1(exp(-alpha r))``; ``T_unit`` is the support of ``K(1, .)``."""
    if law.realpart_min < -1e-12:
        raise InputError(f"law has Re alpha = {law.realpart_min:.3e} < 0")
    return DissipativeKernel(law, T_unit)


def _linear_convolution(a, b, grid):
    """Zero-padded convolution of two grid signals, returned on the grid times."""
    n = grid.n_samples
    c = fftconvolve(np.fft.fftshift(a), np.fft.fftshift(b)) * grid.dt
    # both inputs start at -n/2 dt, so c[i] sits at (i - n) dt
    return np.fft.ifftshift(c[n // 2 : n // 2 + n])


def semigroup_residual(kernel: DissipativeKernel, r1: float, r2: float) -> float:
    """Relative L2 gap between ``K(r1) * K(r2)`` and ``K(r1 + r2)``."""
    a, b, c = kernel.at(r1), kernel.at(r2), kernel.at(r1 + r2)
    conv = _linear_convolution(a, b, kernel.grid)
    return float(np.linalg.norm(conv - c) / np.linalg.norm(c))


@dataclass(frozen=True)
class SupportReport:
    leak_fraction: float
    passes: bool
    bound: float
    energy_tol: float


def support_check(signal, grid: FrequencyGrid, bound: float, energy_tol: float) -> SupportReport:
    """Energy fraction outside ``[-dt, bound (1 + 0.01)]``."""
    x = _check_len(signal, grid)
    e = np.abs(x) ** 2
    total = float(np.sum(e))
    if total == 0:
        raise InputError("signal has zero energy")
    t = grid.times
    inside = (t >= -grid.dt - 1e-12) & (t <= bound * 1.01 + 1e-12)
    leak = float(np.sum(e[~inside]) / total)
    return SupportReport(leak, leak <= energy_tol, bound, energy_tol)


def measured_support(signal, grid: FrequencyGrid, rel: float = 1e-10) -> float:
    """Last time at which ``|signal|`` exceeds ``rel`` times its peak."""
    x = np.abs(_check_len(signal, grid))
    t = grid.times
    hit = x > rel * x.max()
    return float(np.max(t[hit]))


@dataclass(frozen=True)
class Trace:
    times: np.ndarray
    values: np.ndarray
    arrival: float
    distance: float

    def pre_arrival_fraction(self, dt: float) -> float:
        e = self.values**2
        before = self.times < self.arrival - dt - 1e-12
        return float(np.sum(e[before]) / np.sum(e))


def spherical_wave_trace(kernel: DissipativeKernel, c0: float, x: Sequence[float]) -> Trace:
    """``K(|x|, t - |x| / c0) / (4 pi |x|)`` on the grid times.

    The delay is applied as a whole-node shift plus a spectral phase for
    the remaining fraction of a step.
    """
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if r == 0:
        raise SingularPointError("the trace is singular at the source |x| = 0")
    if not c0 > 0:
        raise InputError(f"c0 must be positive, got {c0}")
    g = kernel.grid
    delay = r / c0
    steps = math.floor(delay / g.dt + 1e-9)
    frac = delay - steps * g.dt
    if kernel.T_unit is not None:
        g.check_support(delay + r * kernel.T_unit)
    F = kernel.spectrum_at(r)
    if abs(frac) > 1e-12 * g.dt:
        F = F * np.exp(2j * math.pi * g.freqs * frac)
    base = inverse_spectrum(F, g)
    values = np.roll(base, steps) / (4 * math.pi * r)
    return Trace(g.times, values, delay, r)


@dataclass(frozen=True)
class WaveControlSpectrum:
    """Spectral pieces of the control for the controlled wave at radius ``r``."""

    grid: FrequencyGrid
    beta: np.ndarray
    mu_hat: np.ndarray
    c0: float
    r: float

    def M(self, r: Optional[float] = None) -> np.ndarray:
        """``(1 - ell_hat)^r`` as ``exp(-r mu_hat)``."""
        return np.exp(-(self.r if r is None else r) * self.mu_hat)

    def G(self, r: Optional[float] = None) -> np.ndarray:
        return np.exp(-self.beta * (self.r if r is None else r))

    def L_hat(self, r: Optional[float] = None) -> np.ndarray:
        r = self.r if r is None else r
        z = self.grid.z
        return self.G(r) * self.mu_hat * (2 * (z / self.c0 + self.beta) + self.mu_hat) * self.M(r)

    def effective_law(self) -> np.ndarray:
        return self.beta + self.mu_hat


def _log_one_minus(ell_hat, grid):
    q = 1.0 - np.asarray(ell_hat, dtype=complex)
    if np.any(np.abs(q) < 1e-12):
        i = int(np.argmin(np.abs(q)))
        raise BranchError(f"1 - ell_hat vanishes at w = {grid.freqs[i]}")
    # crossing the negative real axis between neighbouring frequencies
    order = np.argsort(grid.freqs)
    qs = q[order]
    cross = (qs.real[:-1] < 0) & (qs.real[1:] < 0) & (np.sign(qs.imag[:-1]) != np.sign(qs.imag[1:]))
    if np.any(cross):
        i = int(np.argmax(cross))
        raise BranchError(f"1 - ell_hat winds across the branch cut near w = {grid.freqs[order][i]}")
    return np.log(q)


def wave_control_spectrum(beta: AttenuationLaw, ell_hat, c0: float, r: float) -> WaveControlSpectrum:
    """``mu_hat = -log(1 - ell_hat)`` and the control pieces at radius ``r``.

    ``ell_hat`` is an array on the law's grid or a callable of ``z``.
    """
    grid = beta.grid
    if callable(ell_hat):
        ell_hat = ell_hat(grid.z)
    mu = -_log_one_minus(ell_hat, grid)
    return WaveControlSpectrum(grid, beta.values, mu, c0, r)


@dataclass(frozen=True)
class SupportStudy:
    radii: tuple
    leaks: tuple
    supports: tuple
    slope: float
    T: float
    energy_tol: float

    @property
    def slope_rel_error(self) -> float:
        return abs(self.slope - self.T) / self.T

    @property
    def passes(self) -> bool:
        return self.slope_rel_error <= 0.05 and all(l <= self.energy_tol for l in self.leaks)


def relaxation_wave_inputs(a0: float, ell, grid: FrequencyGrid, renormalize: bool = True):
    """Baseline law and control spectrum for ``varrho' + a0 varrho = delta - ell``.

    ``beta`` comes from the sampled ``exp(-a0 t) H`` and ``ell_hat`` from the
    sampled control. With ``renormalize`` the control is rescaled so that its
    trapezoid normalization ``dt sum exp(a0 t_k) ell_k = 1`` holds exactly;
    the discrete relaxation ``rho * (delta - ell)`` then vanishes after the
    control's support, as in the continuous problem.
    """
    if not a0 > 0:
        raise InputError(f"a0 must be positive, got {a0}")
    rho = sample_causal(lambda t: np.exp(-a0 * t), grid)
    # trapezoid sampling inflates |F(rho)(0)| by (dt/2) coth(dt/2) - 1 ~ dt^2/12
    beta = attenuation_from_kernel(rho, grid, unit_tol=max(1e-9, (a0 * grid.dt) ** 2 / 6))
    return beta, control_spectrum(ell, a0, grid, renormalize)


def control_spectrum(ell, a0: float, grid: FrequencyGrid, renormalize: bool = True) -> np.ndarray:
    """Spectrum of a sampled time-domain control (``ell.value`` or a callable)."""
    samples = sample_causal(ell.value if hasattr(ell, "value") else ell, grid)
    if renormalize:
        t = grid.times
        pos = t >= 0
        norm = grid.dt * float(np.sum(np.exp(a0 * t[pos]) * samples[pos]))
        if norm == 0:
            raise InputError("control has zero normalization on the grid")
        samples = samples / norm
    return spectrum(samples, grid)


def controlled_kernel_support_study(beta: AttenuationLaw, ell, T: float, radii, energy_tol: float = 1e-6,
                                    rel: float = 1e-10, a0: float = 1.0) -> SupportStudy:
    """Leak fractions and measured supports of the controlled family ``exp(-(beta + mu) r)``.

    ``ell`` is a time-domain control (anything with ``.value``), sampled and
    renormalized against ``exp(a0 t)``, or a ready spectrum (array or callable
    of ``z``). ``r = 0`` is reported as the delta (leak 0, support 0).
    """
    grid = beta.grid
    ell_hat = control_spectrum(ell, a0, grid) if hasattr(ell, "value") else ell
    grid.check_support(2 * max(radii) * T)
    ctl = wave_control_spectrum(beta, ell_hat, 1.0, 1.0)
    law = AttenuationLaw(grid, ctl.effective_law(), float(np.min(ctl.effective_law().real)), "controlled")
    fam = DissipativeKernel(law, T)
    leaks, supports = [], []
    for r in radii:
        k = fam.at(r)
        leaks.append(support_check(k, grid, r * T, energy_tol).leak_fraction if r > 0 else 0.0)
        supports.append(measured_support(k, grid, rel) if r > 0 else 0.0)
    slope = float(np.polyfit(np.asarray(radii, float), np.asarray(supports), 1)[0]) if len(radii) > 1 else math.nan
    return SupportStudy(tuple(radii), tuple(leaks), tuple(supports), slope, T, energy_tol)
