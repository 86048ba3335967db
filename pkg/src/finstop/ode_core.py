"""Linear time-varying ODEs ``u' + A(t) u = f(t)`` and finite-stop controls.

The fundamental matrix ``G(t, t0)`` solves ``G' = -A G`` with ``G(t0) = I``.
Its inverse is integrated from its own equation ``(G^-1)' = G^-1 A`` rather
than by inverting samples. All time integrals of ``G^-1 (...)`` use the
composite Simpson rule on the integration grid, so both building blocks are
fourth order.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._quadrature import cumulative_simpson, simpson
from .errors import (
    ContractError,
    DegenerateAnsatzError,
    InputError,
    IntegrationBlowupError,
)
from .io import write_csv

# reciprocal condition number below which a normalization matrix is singular
RCOND_MIN = 1e-12
# tolerance (in units of the step) for locating a time on the grid
_NODE_TOL = 1e-7


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_start, t_start + step, ...``.

    The node count is forced to be odd (the grid is extended by one step
    if needed) so that the composite Simpson rule closes on the last node.
    """

    t_start: float
    t_end: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise InputError(f"step must be positive, got {self.step}")
        if not self.t_end > self.t_start:
            raise InputError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        count = int(round((self.t_end - self.t_start) / self.step)) + 1
        if count % 2 == 0:
            count += 1
        object.__setattr__(self, "t_end", self.t_start + (count - 1) * self.step)

    @property
    def size(self) -> int:
        return int(round((self.t_end - self.t_start) / self.step)) + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.t_start + self.step * np.arange(self.size)

    def index_of(self, t: float) -> int:
        """Index of the node at ``t``; raises :class:`InputError` otherwise."""
        k = (t - self.t_start) / self.step
        i = int(round(k))
        if abs(k - i) > _NODE_TOL or not 0 <= i < self.size:
            raise InputError(f"t={t} is not a node of {self}")
        return i

    def restrict(self, t0: float) -> "TimeGrid":
        """Grid starting at node ``t0`` and ending at the same last node."""
        i = self.index_of(t0)
        t0 = self.t_start + i * self.step
        return _exact_grid(t0, self.size - i, self.step)


def _exact_grid(t0, count, step):
    g = object.__new__(TimeGrid)
    object.__setattr__(g, "t_start", t0)
    object.__setattr__(g, "t_end", t0 + (count - 1) * step)
    object.__setattr__(g, "step", step)
    return g


class MatrixFunction:
    """Time-dependent ``dim x dim`` matrix ``A(t)``."""

    def __init__(self, dim: int, fn: Callable[[float], np.ndarray]):
        if int(dim) != dim or dim < 1:
            raise InputError(f"dim must be a positive integer, got {dim}")
        self.dim = int(dim)
        self._fn = fn

    def __call__(self, t: float) -> np.ndarray:
        m = np.asarray(self._fn(t), dtype=float)
        if m.ndim == 0 and self.dim == 1:
            m = m.reshape(1, 1)
        if m.shape != (self.dim, self.dim):
            raise InputError(f"A({t}) has shape {m.shape}, expected {(self.dim, self.dim)}")
        return m

    @classmethod
    def constant(cls, matrix) -> "MatrixFunction":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(m.shape[0], lambda t: m)

    @classmethod
    def scalar(cls, fn: Callable[[float], float]) -> "MatrixFunction":
        return cls(1, lambda t: np.array([[fn(t)]], dtype=float))


@dataclass(frozen=True)
class FundamentalSolution:
    """Samples of ``G(t, t0)`` and of its inverse on ``grid``."""

    grid: TimeGrid
    samples: np.ndarray
    inverse_samples: np.ndarray

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def at(self, t: float) -> np.ndarray:
        return self.samples[self.grid.index_of(t)]

    def inverse_at(self, t: float) -> np.ndarray:
        return self.inverse_samples[self.grid.index_of(t)]

    def propagator(self, t: float, s: float) -> np.ndarray:
        """``G(t, s) = G(t, t0) G(s, t0)^-1`` for grid nodes ``t, s``."""
        return self.at(t) @ self.inverse_at(s)


class ControlMatrix:
    """Matrix control ``ell(t)`` supported on ``[0, support_end]``."""

    def __init__(self, dim: int, support_end: float, fn: Callable[[float], np.ndarray]):
        self.dim = dim
        self.support_end = float(support_end)
        self._fn = fn

    def __call__(self, t: float) -> np.ndarray:
        if t < 0 or t > self.support_end:
            return np.zeros((self.dim, self.dim))
        return np.asarray(self._fn(t), dtype=float).reshape(self.dim, self.dim)


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    values: np.ndarray
    derivatives: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path, meta=None):
        cols = {"t": self.grid.nodes}
        for i in range(self.dim):
            cols[f"u_{i + 1}"] = self.values[:, i]
        for i in range(self.dim):
            cols[f"du_{i + 1}"] = self.derivatives[:, i]
        info = {"t_start": self.grid.t_start, "t_end": self.grid.t_end, "step": self.grid.step}
        info.update(meta or {})
        return write_csv(path, cols, info)


@dataclass(frozen=True)
class StopReport:
    max_abs_after_T: float
    passes: bool
    tol: float
    T: float


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise IntegrationBlowupError(f"non-finite values at t={t}")


def _rk4(f, y0, nodes, h):
    out = np.empty((len(nodes),) + y0.shape)
    out[0] = y = y0
    for k in range(len(nodes) - 1):
        t = nodes[k]
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(y, t + h)
        out[k + 1] = y
    return out


def fundamental_solution(A: MatrixFunction, t0: float, grid: TimeGrid) -> FundamentalSolution:
    """Integrate ``G' = -A G`` and ``(G^-1)' = G^-1 A`` with classical RK4."""
    if abs(grid.t_start - t0) > _NODE_TOL * grid.step:
        raise InputError(f"grid starts at {grid.t_start}, expected t0={t0}")
    eye = np.eye(A.dim)
    _check_finite(A(t0), t0)
    nodes = grid.nodes
    G = _rk4(lambda t, y: -A(t) @ y, eye, nodes, grid.step)
    Ginv = _rk4(lambda t, y: y @ A(t), eye, nodes, grid.step)
    return FundamentalSolution(grid, G, Ginv)


def _as_vector_fn(rhs, dim):
    def f(t):
        v = np.atleast_1d(np.asarray(rhs(t), dtype=float))
        if v.shape != (dim,):
            raise InputError(f"rhs({t}) has shape {v.shape}, expected ({dim},)")
        if not np.all(np.isfinite(v)):
            raise InputError(f"rhs is not finite at t={t}")
        return v

    return f


def _segments(nodes, h, breakpoints):
    """Split node indices at breakpoints that fall on grid nodes."""
    cuts = [0]
    for b in sorted(breakpoints or ()):
        k = (b - nodes[0]) / h
        i = int(round(k))
        if abs(k - i) > _NODE_TOL:
            raise InputError(f"breakpoint {b} is not a grid node")
        if 0 < i < len(nodes) - 1 and i not in cuts:
            cuts.append(i)
    cuts.append(len(nodes) - 1)
    return list(zip(cuts[:-1], cuts[1:]))


def _starts_at_break(nodes, h, breakpoints):
    """True if a breakpoint sits on the first node (use the right-hand limit there)."""
    return any(abs(b - nodes[0]) <= _NODE_TOL * h for b in breakpoints or ())


def _segment_samples(fn, nodes, h, lo, hi, first, last):
    """Evaluate ``fn`` on ``nodes[lo..hi]`` using one-sided limits at breaks."""
    delta = 1e-9 * h
    vals = []
    for i in range(lo, hi + 1):
        t = nodes[i]
        if i == lo and not first:
            t = t + delta
        elif i == hi and not last:
            t = t - delta
        vals.append(fn(t))
    return np.array(vals)


def _piecewise_cumulative(integrand, nodes, h, breakpoints):
    """Running Simpson integral that restarts at each breakpoint.

    ``integrand(i, t)`` may be discontinuous at breakpoints; one-sided
    limits are used on either side.
    """
    segs = _segments(nodes, h, breakpoints)
    start_break = _starts_at_break(nodes, h, breakpoints)
    total = None
    out = None
    for j, (lo, hi) in enumerate(segs):
        first, last = j == 0 and not start_break, j == len(segs) - 1
        delta = 1e-9 * h
        vals = []
        for i in range(lo, hi + 1):
            t = nodes[i]
            if i == lo and not first:
                t = t + delta
            elif i == hi and not last:
                t = t - delta
            vals.append(integrand(i, t))
        vals = np.array(vals)
        cum = cumulative_simpson(vals, h)
        if out is None:
            out = np.zeros((len(nodes),) + vals.shape[1:])
            total = np.zeros(vals.shape[1:])
        out[lo : hi + 1] = total + cum
        total = out[hi].copy()
    return out


def solve_ivp(
    A: MatrixFunction,
    rhs: Callable[[float], np.ndarray],
    u0,
    t0: float,
    grid: TimeGrid,
    G: Optional[FundamentalSolution] = None,
    breakpoints: Sequence[float] = (),
) -> Trajectory:
    """Variation-of-constants solution of ``u' + A u = rhs``, ``u(t0) = u0``.

    ``breakpoints`` lists grid times where ``rhs`` may jump (for instance
    the end of a control's support); the quadrature restarts there and
    the derivative at a breakpoint uses the right-hand limit of ``rhs``.
    """
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if u0.shape != (A.dim,):
        raise InputError(f"u0 has shape {u0.shape}, expected ({A.dim},)")
    if G is None:
        G = fundamental_solution(A, t0, grid)
    f = _as_vector_fn(rhs, A.dim)
    nodes, h = grid.nodes, grid.step
    integral = _piecewise_cumulative(
        lambda i, t: G.inverse_samples[i] @ f(t), nodes, h, breakpoints
    )
    values = np.einsum("kij,kj->ki", G.samples, u0[None, :] + integral)
    breaks = {lo for lo, _ in _segments(nodes, h, breakpoints)[1:]}
    if _starts_at_break(nodes, h, breakpoints):
        breaks.add(0)
    derivs = np.empty_like(values)
    for i, t in enumerate(nodes):
        tf = t + 1e-9 * h if i in breaks else t
        derivs[i] = f(tf) - A(t) @ values[i]
    return Trajectory(grid, values, derivs)


def control_residual(G: FundamentalSolution, ell: ControlMatrix, T: float) -> np.ndarray:
    """``I - int_0^T G^-1(s) ell(s) ds``; zero iff ``ell`` stops the flow at ``T``."""
    if T > G.grid.t_end + _NODE_TOL * G.grid.step:
        raise InputError(f"T={T} lies beyond the grid end {G.grid.t_end}")
    k = G.grid.index_of(T)
    nodes, h = G.grid.nodes[: k + 1], G.grid.step
    vals = _segment_samples(ell, nodes, h, 0, k, True, False) if k > 0 else np.zeros((1, G.dim, G.dim))
    integrand = np.einsum("kij,kjl->kil", G.inverse_samples[: k + 1], vals)
    return np.eye(G.dim) - (simpson(integrand, h) if k > 0 else 0.0)


def scale_control_ansatz(G: FundamentalSolution, shape: MatrixFunction, T: float) -> ControlMatrix:
    """Complete ``shape`` to a stopping control ``ell = shape M^-1``.

    ``M = int_0^T G^-1 shape ds``; a reciprocal condition number below
    ``RCOND_MIN`` raises :class:`DegenerateAnsatzError`.
    """
    k = G.grid.index_of(T)
    nodes, h = G.grid.nodes[: k + 1], G.grid.step
    vals = _segment_samples(shape, nodes, h, 0, k, True, False)
    M = simpson(np.einsum("kij,kjl->kil", G.inverse_samples[: k + 1], vals), h)
    norm = np.linalg.norm(M, 2)
    if norm == 0 or 1.0 / np.linalg.cond(M) < RCOND_MIN:
        raise DegenerateAnsatzError(f"normalization matrix is singular: {M!r}")
    Minv = np.linalg.inv(M)
    return ControlMatrix(G.dim, T, lambda t: shape(t) @ Minv)


def forcing_control_residual(G, f, ellf, T, tail_tol=1e-12):
    """``int_0^T G^-1 (f - ell_f) ds``; zero iff ``ell_f`` cancels the forcing.

    ``ell_f`` must coincide with ``f`` on grid nodes after ``T``.
    """
    k = G.grid.index_of(T)
    nodes, h = G.grid.nodes, G.grid.step
    ff = _as_vector_fn(f, G.dim)
    lf = _as_vector_fn(ellf, G.dim)
    for t in nodes[k + 1 :]:
        a, b = ff(t), lf(t)
        if np.any(np.abs(a - b) > tail_tol * (1.0 + np.abs(a))):
            raise ContractError(f"ell_f differs from f after T at t={t}")
    if k == 0:
        return np.zeros(G.dim)
    diff = _segment_samples(lambda t: ff(t) - lf(t), nodes, h, 0, k, True, False)
    return simpson(np.einsum("kij,kj->ki", G.inverse_samples[: k + 1], diff), h)


def no_memory_deviation(A, rhs, u0, t0, t1, grid, breakpoints=()):
    """Sup-norm gap on ``[t1, t_end]`` between one solve and a restart at ``t1``."""
    if not t0 < t1:
        raise InputError("t1 must exceed t0")
    i1 = grid.index_of(t1)
    full = solve_ivp(A, rhs, u0, t0, grid, breakpoints=breakpoints)
    sub = grid.restrict(t1)
    later = [b for b in breakpoints if b >= sub.t_start - _NODE_TOL * grid.step]
    restart = solve_ivp(A, rhs, full.values[i1], sub.t_start, sub, breakpoints=later)
    return float(np.max(np.abs(full.values[i1:] - restart.values)))


def stopping_check(traj: Trajectory, T: float, tol: float) -> StopReport:
    """Sup of ``|u|`` and ``|u'|`` on the nodes in ``[T, t_end]``."""
    if T > traj.grid.t_end:
        raise InputError(f"T={T} lies beyond the trajectory end {traj.grid.t_end}")
    mask = traj.grid.nodes >= T - _NODE_TOL * traj.grid.step
    m = max(np.max(np.abs(traj.values[mask])), np.max(np.abs(traj.derivatives[mask])))
    return StopReport(float(m), bool(m <= tol), tol, T)


def semigroup_defect(G: FundamentalSolution, t: float, t1: float) -> float:
    """``|| G(t,t1) G(t1,t0) - G(t,t0) ||`` for nodes ``t0 <= t1 <= t``."""
    return float(np.max(np.abs(G.propagator(t, t1) @ G.at(t1) - G.at(t))))
