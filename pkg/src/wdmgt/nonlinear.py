"""Nonlinear JMGT evolution, its Duhamel representation and the moment-driven profile.

The equation is

    tau psi_ttt + psi_tt - Lap psi - (delta+tau) Lap psi_t + gamma psi_t = d/dt N

with N = (B/2A) psi_t^2 + |grad psi|^2 (Kuznetsov) or (1 + B/2A) psi_t^2
(Westervelt). Since psi_tt is a state component, d/dt N is explicit.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BlowUpDetected, MissingTrajectory, ShapeMismatch
from .linear import gaussian_symbol, get_propagator
from .model import ModelParams
from .spectral import Field, NormSpec, SpectralGrid, inverse, sobolev_norms_batch, transform


class NonlinearityKind(enum.Enum):
    KUZNETSOV = "kuznetsov"
    WESTERVELT = "westervelt"


@dataclass(frozen=True)
class NonlinearState:
    psi: Field
    psi_t: Field
    psi_tt: Field
    t: float

    @property
    def grid(self) -> SpectralGrid:
        return self.psi.grid

    def coeffs(self) -> np.ndarray:
        return np.stack([self.psi.coeffs, self.psi_t.coeffs, self.psi_tt.coeffs])

    @classmethod
    def from_coeffs(cls, grid: SpectralGrid, u: np.ndarray, t: float) -> "NonlinearState":
        return cls(Field(grid, u[0]), Field(grid, u[1]), Field(grid, u[2]), float(t))


# pointwise products ------------------------------------------------------

def _phys(grid: SpectralGrid, c: np.ndarray) -> np.ndarray:
    return inverse(Field(grid, c * grid.dealias_mask))


def _grad_phys(grid: SpectralGrid, c: np.ndarray) -> list[np.ndarray]:
    c = c * grid.dealias_mask
    return [inverse(Field(grid, 1j * xi * c)) for xi in grid.xi]


def _to_spectral(grid: SpectralGrid, values: np.ndarray) -> np.ndarray:
    return transform(grid, values).coeffs * grid.dealias_mask


def evaluate_nonlinearity(psi_t: Field, grad_psi: Sequence[Field], kind: NonlinearityKind,
                          b_over_2a: float) -> Field:
    """N(psi_t, grad psi), formed pointwise and dealiased with the 2/3 rule."""
    grid = psi_t.grid
    v = _phys(grid, psi_t.coeffs)
    if kind is NonlinearityKind.WESTERVELT:
        vals = (1.0 + b_over_2a) * v * v
    else:
        if len(grad_psi) != grid.dim:
            raise ShapeMismatch("gradient must have one component per dimension")
        vals = b_over_2a * v * v + sum(_phys(grid, g.coeffs) ** 2 for g in grad_psi)
    return Field(grid, _to_spectral(grid, vals))


def _nonlinearity_coeffs(grid, u, kind, b):
    """Spectrum of N for the state u = (psi, psi_t, psi_tt)."""
    v = _phys(grid, u[1])
    if kind is NonlinearityKind.WESTERVELT:
        vals = (1.0 + b) * v * v
    else:
        vals = b * v * v + sum(g * g for g in _grad_phys(grid, u[0]))
    return _to_spectral(grid, vals)


def _dt_nonlinearity_coeffs(grid, u, kind, b):
    """Spectrum of d/dt N = 2b psi_t psi_tt + 2 grad psi . grad psi_t (Kuznetsov)."""
    v, a = _phys(grid, u[1]), _phys(grid, u[2])
    if kind is NonlinearityKind.WESTERVELT:
        vals = 2.0 * (1.0 + b) * v * a
    else:
        vals = 2.0 * b * v * a
        for gp, gv in zip(_grad_phys(grid, u[0]), _grad_phys(grid, u[1])):
            vals = vals + 2.0 * gp * gv
    return _to_spectral(grid, vals)


def rhs(state: NonlinearState, params: ModelParams, kind: NonlinearityKind = NonlinearityKind.KUZNETSOV,
        nonlinear_scale: float = 1.0) -> tuple[Field, Field, Field]:
    """(psi_t, psi_tt, psi_ttt) for the given state."""
    grid = state.grid
    u = state.coeffs()
    r2 = grid.xi_mag ** 2
    lin = -u[2] - r2 * u[0] - (params.gamma + (params.delta + params.tau) * r2) * u[1]
    forcing = nonlinear_scale * _dt_nonlinearity_coeffs(grid, u, kind, params.b_over_2a) if nonlinear_scale else 0.0
    third = (lin + forcing) / params.tau
    return Field(grid, u[1]), Field(grid, u[2]), Field(grid, third)


# time integration --------------------------------------------------------

@dataclass
class Trajectory:
    grid: SpectralGrid
    params: ModelParams
    kind: NonlinearityKind
    times: np.ndarray
    states: np.ndarray          # (K, 3, *grid.shape)
    nonlinear_scale: float = 1.0

    def __len__(self):
        return len(self.times)

    def state(self, k: int) -> NonlinearState:
        return NonlinearState.from_coeffs(self.grid, self.states[k], self.times[k])

    def final(self) -> NonlinearState:
        return self.state(len(self) - 1)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise MissingTrajectory(f"trajectory has no sample at t={t:g}")
        return k

    def norms(self, j: int, spec: NormSpec) -> np.ndarray:
        return sobolev_norms_batch(self.states[:, j], self.grid, spec)


def _data_array(data) -> tuple[SpectralGrid, np.ndarray]:
    if isinstance(data, NonlinearState):
        return data.grid, data.coeffs()
    if len(data) != 3:
        raise ShapeMismatch("data must be a triple (psi0, psi1, psi2)")
    grid = data[0].grid
    if any(f.grid != grid for f in data):
        raise ShapeMismatch("data fields live on different grids")
    return grid, np.stack([f.coeffs for f in data])


def integrate(data, params: ModelParams, kind: NonlinearityKind = NonlinearityKind.KUZNETSOV,
              T: float = 1.0, dt: float = 1e-2, sample_every: int = 1,
              nonlinear_scale: float = 1.0, guard: float = 1e6) -> Trajectory:
    """Lawson (integrating-factor) RK4 with the exact linear propagator.

    ``dt`` is adjusted down so that an integer number of steps lands on ``T``.
    Samples are stored every ``sample_every`` steps and at ``T``.
    """
    params.require_simulable()
    if dt <= 0 or T < 0:
        raise ValueError("need dt > 0 and T >= 0")
    grid, u = _data_array(data)
    grid.check_no_wrap(params, T)
    steps = max(1, math.ceil(T / dt - 1e-9)) if T > 0 else 0
    h = T / steps if steps else dt
    prop = get_propagator(grid, params)
    E_full = prop.lattice(h)                     # (3, 3, *shape), [m, l]
    E_half = prop.lattice(h / 2)
    col_full, col_half = E_full[:, 2], E_half[:, 2]
    b, tau = params.b_over_2a, params.tau

    def apply(E, x):
        return np.einsum("ml...,l...->m...", E, x)

    def force(x):
        if not nonlinear_scale:
            return np.zeros(grid.shape, dtype=complex)
        return nonlinear_scale * _dt_nonlinearity_coeffs(grid, x, kind, b) / tau

    norm0 = float(np.sqrt(np.sum(np.abs(u) ** 2)))
    times, states = [0.0], [u.copy()]
    for k in range(1, steps + 1):
        Eu, Eu_half = apply(E_full, u), apply(E_half, u)
        g1 = force(u)
        g2 = force(Eu_half + (h / 2) * col_half * g1)
        g3 = force(Eu_half + (h / 2) * _lift(g2, grid))
        g4 = force(Eu + h * col_half * g3)
        u = Eu + (h / 6) * (col_full * g1 + 2 * col_half * (g2 + g3) + _lift(g4, grid))
        if norm0 > 0:
            ratio = float(np.sqrt(np.sum(np.abs(u) ** 2))) / norm0
            if not np.isfinite(ratio) or ratio > guard:
                raise BlowUpDetected(f"state norm grew by {ratio:.3e} at t={k * h:g}", t=k * h, ratio=ratio)
        if k % sample_every == 0 or k == steps:
            times.append(k * h)
            states.append(u.copy())
    return Trajectory(grid, params, kind, np.array(times), np.stack(states), nonlinear_scale)


def _lift(g: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """(0, 0, g) as a state-shaped array."""
    out = np.zeros((3,) + grid.shape, dtype=complex)
    out[2] = g
    return out


# Duhamel representation ----------------------------------------------------

@dataclass(frozen=True)
class DuhamelResult:
    """State at T rebuilt from the mild-solution formulas.

    ``psi_tt`` uses the split representation at T/2; ``psi_tt_direct`` the
    unsplit one carrying the local term N(T).
    """

    psi: Field
    psi_t: Field
    psi_tt: Field
    psi_tt_direct: Field
    t: float

    def as_state(self) -> NonlinearState:
        return NonlinearState(self.psi, self.psi_t, self.psi_tt, self.t)


def _simpson_weights(n: int, h: float) -> np.ndarray:
    if n < 2 or n % 2:
        raise ValueError("composite Simpson needs an even number of intervals")
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 3


def duhamel_mild_solution(data, params: ModelParams, kind: NonlinearityKind = NonlinearityKind.KUZNETSOV,
                          T: float = 1.0, quad_dt: float = 1e-3,
                          trajectory: Trajectory | None = None) -> DuhamelResult:
    """Linear propagation plus (1/tau) int_0^T K_2(T - eta) * d/dt N(eta) d eta.

    The time convolution is integrated by parts, so only N (and, on
    [T/2, T] for the split second derivative, d/dt N) is needed at the
    quadrature nodes eta_i = i * quad_dt, which ``trajectory`` must contain.
    """
    if trajectory is None:
        raise MissingTrajectory("a trajectory supplying N at the quadrature nodes is required")
    grid, u0 = _data_array(data)
    if trajectory.grid != grid:
        raise ShapeMismatch("trajectory and data grids differ")
    n = int(round(T / quad_dt))
    if not math.isclose(n * quad_dt, T, rel_tol=1e-9) or n % 4:
        raise ValueError("T / quad_dt must be an integer divisible by 4")
    h = T / n
    nodes = h * np.arange(n + 1)
    idx = [trajectory.index_of(float(e)) for e in nodes]
    scale, b, tau = trajectory.nonlinear_scale, params.b_over_2a, params.tau

    prop = get_propagator(grid, params)
    inv = prop.index
    table = prop.table

    def k2(t, m):
        return table.evaluate(float(t), orders=m + 1)[:, m, 2][inv]

    def N_at(i):
        return scale * _nonlinearity_coeffs(grid, trajectory.states[idx[i]], kind, b)

    N0 = N_at(0)
    w_full = _simpson_weights(n, h)
    w_half = _simpson_weights(n // 2, h)
    half = n // 2

    acc0 = -k2(T, 0) * N0
    acc1 = -k2(T, 1) * N0
    acc2_direct = -k2(T, 2) * N0
    acc2_split = -k2(T, 2) * N0
    for i in range(n + 1):
        Ni = N0 if i == 0 else N_at(i)
        K = table.evaluate(float(T - nodes[i]), orders=4)[:, :, 2][inv]   # (*shape, 4)
        K = np.moveaxis(K, -1, 0)
        acc0 = acc0 + w_full[i] * K[1] * Ni
        acc1 = acc1 + w_full[i] * K[2] * Ni
        acc2_direct = acc2_direct + w_full[i] * K[3] * Ni
        if i <= half:
            acc2_split = acc2_split + w_half[i] * K[3] * Ni
        if i >= half:
            dN = scale * _dt_nonlinearity_coeffs(grid, trajectory.states[idx[i]], kind, b)
            acc2_split = acc2_split + w_half[i - half] * K[2] * dN
        if i == half:
            acc2_split = acc2_split + k2(T - nodes[i], 2) * Ni
        if i == n:
            acc2_direct = acc2_direct + Ni          # d^2 K_2(0) = 1

    lin = prop.apply(T, u0)
    mk = lambda c: Field(grid, c)
    return DuhamelResult(mk(lin[0] + acc0 / tau), mk(lin[1] + acc1 / tau), mk(lin[2] + acc2_split / tau),
                         mk(lin[2] + acc2_direct / tau), float(T))


# moment and profile ----------------------------------------------------------

def _mass(grid: SpectralGrid, values: np.ndarray) -> float:
    return float(np.sum(values) * grid.cell_volume)


def nonlinear_data_mass(data, params: ModelParams, kind: NonlinearityKind = NonlinearityKind.KUZNETSOV) -> float:
    """Mass of N(psi1, grad psi0)."""
    grid, u = _data_array(data)
    v = inverse(Field(grid, u[1]))
    if kind is NonlinearityKind.WESTERVELT:
        vals = (1.0 + params.b_over_2a) * v * v
    else:
        vals = params.b_over_2a * v * v + sum(inverse(Field(grid, 1j * xi * u[0])) ** 2 for xi in grid.xi)
    return _mass(grid, vals)


def moment_M(data, params: ModelParams, kind: NonlinearityKind = NonlinearityKind.KUZNETSOV,
             convention: str = "exact") -> float:
    """Mass driving the nonlinear Gaussian profile.

    ``"exact"`` returns P(gamma psi0 + psi1 + tau psi2) - P(N(psi1, grad psi0)),
    which equals gamma times the limit of the solution's mass for any tau.
    ``"tau-weighted"`` multiplies the nonlinear mass by tau instead; the two
    coincide at tau = 1.
    """
    grid, u = _data_array(data)
    comb = params.gamma * u[0] + u[1] + params.tau * u[2]
    p_lin = float(comb.flat[0].real)
    p_non = nonlinear_data_mass(data, params, kind)
    if convention == "exact":
        return p_lin - p_non
    if convention == "tau-weighted":
        return p_lin - params.tau * p_non
    raise ValueError(f"unknown convention {convention!r}")


def nonlinear_profile(grid: SpectralGrid, params: ModelParams, M: float, t: float, j: int = 0,
                      convention: str = "derivative") -> Field:
    """Spectrum of the j-th time derivative of G(t, .) M."""
    if t <= 0:
        raise ValueError("profile requires t > 0")
    return Field(grid, gaussian_symbol(params, t, grid.xi_mag, j, convention) * M)


# time-weighted solution norm ------------------------------------------------

@dataclass(frozen=True)
class SolutionSpaceNorm:
    """sup_t sum_{j, sigma} (1+t)^{(n+2 sigma+4+2j)/4} ||d_t^j psi||_{H^{sigma+2-j}}."""

    value: float
    s: float
    times: np.ndarray
    series: np.ndarray          # summed weighted norm at each sample time
    components: dict


def solution_space_norm(traj: Trajectory, s: float) -> SolutionSpaceNorm:
    n = traj.grid.dim
    if not s > max(n / 2 - 1, 0):
        raise ValueError(f"s must exceed max(n/2 - 1, 0) = {max(n / 2 - 1, 0)}")
    t = traj.times
    total = np.zeros_like(t)
    comps = {}
    for j in range(3):
        for sigma in (j - 2, s):
            w = (1 + t) ** ((n + 2 * sigma + 4 + 2 * j) / 4)
            vals = w * traj.norms(j, NormSpec.hdot(sigma + 2 - j))
            comps[(j, sigma)] = vals
            total = total + vals
    running = np.maximum.accumulate(total)
    return SolutionSpaceNorm(float(running[-1]), float(s), t, total, comps)


def write_series_csv(path, traj: Trajectory, s: float, M: float) -> None:
    """Norm series: t, j, sigma, norm, weighted_norm, M_value."""
    n = traj.grid.dim
    rows = []
    for j in range(3):
        for sigma in (j - 2, s):
            norms = traj.norms(j, NormSpec.hdot(sigma + 2 - j))
            w = (1 + traj.times) ** ((n + 2 * sigma + 4 + 2 * j) / 4)
            rows += [(t, j, sigma, v, wv) for t, v, wv in zip(traj.times, norms, w * norms)]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "j", "sigma", "norm", "weighted_norm", "M_value"])
        for t, j, sigma, v, wv in rows:
            out.writerow([repr(float(t)), j, repr(float(sigma)), repr(float(v)), repr(float(wv)), repr(float(M))])
