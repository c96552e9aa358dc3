"""Exact per-mode evolution of the linear weakly damped MGT equation.

Every kernel derivative is a second divided difference over the three
characteristic roots,

    d^m/dt^m K_l(t) = [lam1, lam2, lam3] p_l(lam) lam^m exp(lam t),

with p_2 = 1, p_1(lam_j) = -(sum of the other two roots) and p_0(lam_j) =
product of the other two roots. Well separated roots use the Lagrange form
(real trigonometric form for a conjugate pair); close roots use the
matrix-function form of the divided difference.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

from .charroots import RootTriple, RootStructure, solve_characteristic_batch
from .errors import DegenerateUnresolved, RegimeError, ShapeMismatch, ZoneViolation
from .model import CutoffPartition, ModelParams
from .spectral import Field, SpectralGrid

#: root pairs closer than this (relative to max |lam|) use the confluent route
CONFLUENT_RTOL = 1e-3

_PAIRS = ((1, 2), (0, 2), (0, 1))  # "other two" roots for j = 0, 1, 2


def _lagrange_coeffs(roots: np.ndarray) -> np.ndarray:
    """c[..., j, l] = p_l(lam_j) / prod_{k != j}(lam_j - lam_k)."""
    lam = roots
    c = np.empty(lam.shape[:-1] + (3, 3), dtype=complex)
    for j, (a, b) in enumerate(_PAIRS):
        den = (lam[..., j] - lam[..., a]) * (lam[..., j] - lam[..., b])
        c[..., j, 0] = lam[..., a] * lam[..., b] / den
        c[..., j, 1] = -(lam[..., a] + lam[..., b]) / den
        c[..., j, 2] = 1.0 / den
    return c


def _confluent_single(roots: np.ndarray, t: float, orders: int) -> np.ndarray:
    """(orders, 3) kernel derivatives from f(T)[0, 2] with T bidiagonal."""
    T = np.diag(roots.astype(complex)) + np.diag(np.ones(2), 1)
    E = expm(t * T)
    s = roots.sum()
    e2 = roots[0] * roots[1] + roots[0] * roots[2] + roots[1] * roots[2]
    eye = np.eye(3)
    polys = (T @ T - s * T + e2 * eye, T - s * eye, eye)
    out = np.empty((orders, 3))
    Tm = eye.astype(complex)
    for m in range(orders):
        for l, P in enumerate(polys):
            out[m, l] = (P @ Tm @ E)[0, 2].real
        Tm = Tm @ T
    if not np.all(np.isfinite(out)):
        raise DegenerateUnresolved("confluent kernel evaluation produced non-finite values")
    return out


class KernelTable:
    """Kernels for a fixed set of root triples, evaluated at any t >= 0."""

    def __init__(self, roots: np.ndarray, structure: np.ndarray):
        self.roots = np.asarray(roots, dtype=complex)
        self.structure = np.asarray(structure)
        lam = self.roots
        gaps = np.stack([np.abs(lam[:, a] - lam[:, b]) for a, b in _PAIRS], -1).min(-1)
        scale = np.maximum(np.abs(lam).max(-1), np.finfo(float).tiny)
        self.confluent = gaps < CONFLUENT_RTOL * scale
        self.pair = (self.structure != RootStructure.THREE_REAL) & ~self.confluent
        with np.errstate(divide="ignore", invalid="ignore"):
            self.coeffs = _lagrange_coeffs(lam)

    def __len__(self):
        return self.roots.shape[0]

    def evaluate(self, t: float, orders: int = 3) -> np.ndarray:
        """Array (M, orders, 3): entry [i, m, l] is d^m K_l / dt^m at mode i."""
        if t < 0:
            raise ValueError("t must be non-negative")
        lam, c = self.roots, self.coeffs
        out = np.empty((len(self), orders, 3))
        pair, real = self.pair, ~self.pair & ~self.confluent

        if np.any(real):
            lr = lam[real].real
            e = np.exp(lr * t)
            cr = c[real].real
            for m in range(orders):
                out[real, m, :] = np.einsum("ij,ijl->il", lr ** m * e, cr)

        if np.any(pair):
            l1 = lam[pair, 0].real
            l2 = lam[pair, 1]
            e1 = np.exp(l1 * t)
            damp = np.exp(l2.real * t)
            cs, sn = np.cos(l2.imag * t), np.sin(l2.imag * t)
            c1 = c[pair, 0, :].real
            c2 = c[pair, 1, :]
            for m in range(orders):
                w = c2 * (l2 ** m)[:, None]
                osc = 2 * damp[:, None] * (w.real * cs[:, None] - w.imag * sn[:, None])
                out[pair, m, :] = (l1 ** m * e1)[:, None] * c1 + osc

        for i in np.flatnonzero(self.confluent):
            out[i] = _confluent_single(lam[i], t, orders)
        return out


@dataclass(frozen=True)
class KernelValues:
    """Kernel values at one (t, |xi|); ``dk[m, l]`` is the m-th time derivative of K_l."""

    t: float
    dk: np.ndarray

    @property
    def k0(self) -> float:
        return float(self.dk[0, 0])

    @property
    def k1(self) -> float:
        return float(self.dk[0, 1])

    @property
    def k2(self) -> float:
        return float(self.dk[0, 2])


def kernel_values(roots: RootTriple, t: float) -> KernelValues:
    """K_0, K_1, K_2 and their first three time derivatives at one frequency."""
    lam = np.array([roots.roots])
    table = KernelTable(lam, np.array([int(roots.structure)]))
    return KernelValues(float(t), table.evaluate(t, orders=4)[0])


def mode_ode_residual(kv: KernelValues, params: ModelParams, xi_mag: float) -> float:
    """max_l |tau K''' + K'' + (gamma + (delta+tau)r^2) K' + r^2 K| / term scale."""
    r2 = xi_mag ** 2
    coef = np.array([r2, params.gamma + (params.delta + params.tau) * r2, 1.0, params.tau])
    terms = coef[:, None] * kv.dk
    return float(np.max(np.abs(terms.sum(0)) / np.maximum(np.abs(terms).max(0), 1e-300)))


class LinearPropagator:
    """Kernel tables over the distinct radii of a grid."""

    def __init__(self, grid: SpectralGrid, params: ModelParams):
        params.require_simulable()
        self.grid = grid
        self.params = params
        self.radii, self.index = grid.radial
        batch = solve_characteristic_batch(params, self.radii)
        self.table = KernelTable(batch.roots, batch.structure)
        self._cache: dict[tuple[float, int], np.ndarray] = {}

    def matrix(self, t: float, orders: int = 3) -> np.ndarray:
        """(M, orders, 3) kernel derivatives per distinct radius, memoised by t."""
        key = (float(t), orders)
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = self.table.evaluate(float(t), orders)
        return self._cache[key]

    def lattice(self, t: float, orders: int = 3) -> np.ndarray:
        """Kernel derivatives expanded onto the lattice, shape (orders, 3, *grid.shape)."""
        return np.moveaxis(self.matrix(t, orders)[self.index], (-2, -1), (0, 1))

    def apply(self, t: float, data: np.ndarray, orders: int = 3) -> np.ndarray:
        """Evolve coefficient triples ``data`` (3, *shape) -> (orders, *shape)."""
        K = self.matrix(t, orders)[self.index]          # (*shape, orders, 3)
        return np.einsum("...ml,l...->m...", K, data)


@functools.lru_cache(maxsize=16)
def get_propagator(grid: SpectralGrid, params: ModelParams) -> LinearPropagator:
    return LinearPropagator(grid, params)


@dataclass(frozen=True)
class LinearState:
    phi: Field
    phi_t: Field
    phi_tt: Field
    t: float

    @property
    def grid(self) -> SpectralGrid:
        return self.phi.grid

    def coeffs(self) -> np.ndarray:
        return np.stack([self.phi.coeffs, self.phi_t.coeffs, self.phi_tt.coeffs])

    def derivative(self, j: int) -> Field:
        return (self.phi, self.phi_t, self.phi_tt)[j]


def _data_coeffs(data: Sequence[Field]) -> tuple[SpectralGrid, np.ndarray]:
    if len(data) != 3:
        raise ShapeMismatch("data must be a triple (phi0, phi1, phi2)")
    grid = data[0].grid
    for f in data[1:]:
        if f.grid != grid:
            raise ShapeMismatch("data fields live on different grids")
    return grid, np.stack([f.coeffs for f in data])


def propagate_linear(data: Sequence[Field] | LinearState, params: ModelParams, t: float) -> LinearState:
    """Exact solution (phi, phi_t, phi_tt) at time ``t`` (or ``t`` later for a state)."""
    t0 = 0.0
    if isinstance(data, LinearState):
        t0, data = data.t, (data.phi, data.phi_t, data.phi_tt)
    grid, c = _data_coeffs(data)
    out = get_propagator(grid, params).apply(t, c)
    return LinearState(Field(grid, out[0]), Field(grid, out[1]), Field(grid, out[2]), t0 + float(t))


def linear_trajectory(data: Sequence[Field], params: ModelParams, times) -> list[LinearState]:
    grid, c = _data_coeffs(data)
    prop = get_propagator(grid, params)
    states = []
    for t in np.asarray(times, dtype=float):
        out = prop.apply(float(t), c)
        states.append(LinearState(Field(grid, out[0]), Field(grid, out[1]), Field(grid, out[2]), float(t)))
    return states


@dataclass(frozen=True)
class CombinedData:
    """``phi0_comb = gamma phi0 + phi1 + tau phi2`` drives the Gaussian profile;
    ``phi1_comb = phi0 / tau + phi1`` is the coefficient of sin(|xi| t)/|xi| in
    the large-frequency critical-case kernels.
    """

    phi0_comb: Field
    phi1_comb: Field

    @classmethod
    def from_data(cls, data: Sequence[Field], params: ModelParams) -> "CombinedData":
        f0, f1, f2 = data
        tau = params.tau
        return cls(f0 * params.gamma + f1 + f2 * tau, f0 * (1.0 / tau) + f1)


def gaussian_symbol(params: ModelParams, t: float, xi_mag, j: int = 0, convention: str = "derivative"):
    """Symbol of the j-th time derivative of the Gaussian profile kernel.

    ``"derivative"`` gives d^j/dt^j of (1/gamma) exp(-|xi|^2 t/gamma), i.e.
    (-|xi|^2/gamma)^j times it; ``"laplacian"`` gives |xi|^(2j) times it.
    """
    g = params.gamma
    base = np.exp(-np.asarray(xi_mag) ** 2 * t / g) / g
    if convention == "derivative":
        return (-np.asarray(xi_mag) ** 2 / g) ** j * base
    if convention == "laplacian":
        return np.asarray(xi_mag) ** (2 * j) * base
    raise ValueError(f"unknown convention {convention!r}")


def subcritical_profile(data: Sequence[Field], params: ModelParams, t: float, j: int = 0,
                        point_mass: bool = False, convention: str = "derivative") -> Field:
    """Gaussian large-time profile of the j-th time derivative.

    With ``point_mass`` the symbol multiplies the constant spectrum equal to
    the mass of the combined data, i.e. the profile G(t, .) P.
    """
    if t <= 0:
        raise ValueError("profile requires t > 0")
    comb = CombinedData.from_data(data, params).phi0_comb
    grid = comb.grid
    sym = gaussian_symbol(params, t, grid.xi_mag, j, convention)
    src = np.full(grid.shape, comb.coeffs.flat[0].real) if point_mass else comb.coeffs
    return Field(grid, sym * src)


def critical_profile(data: Sequence[Field], params: ModelParams, t: float, j: int = 0,
                     cutoffs: CutoffPartition | None = None,
                     convention: str = "derivative") -> Field:
    """Two-zone profile: Gaussian part on small |xi|, damped waves on large |xi|.

    Time derivatives act on the sine and cosine factors only.
    """
    params.require_critical()
    cutoffs = cutoffs or CutoffPartition()
    comb = CombinedData.from_data(data, params)
    grid = comb.phi0_comb.grid
    r = grid.xi_mag
    inner = cutoffs.chi_int(r) * gaussian_symbol(params, max(t, 0.0), r, j, convention) * comb.phi0_comb.coeffs
    with np.errstate(divide="ignore", invalid="ignore"):
        rs = np.where(r > 0, r, 1.0)
        damp = np.exp(-params.gamma / (2 * params.tau ** 2) * t / rs ** 2)
        shift = j * np.pi / 2
        d_sin = rs ** j * np.sin(rs * t + shift)   # d^j/dt^j sin(|xi| t)
        d_cos = rs ** j * np.cos(rs * t + shift)
        outer_sym = d_sin / rs * comb.phi1_comb.coeffs - d_cos / rs ** 2 * data[2].coeffs
    chi = cutoffs.chi_ext(r)
    outer = np.where(chi > 0, chi * damp * outer_sym, 0.0)
    return Field(grid, inner + outer)


# pointwise estimates -------------------------------------------------------

ESTIMATES = ("low-kernel", "low-profile", "high-damped", "high-critical", "high-critical-profile", "middle")


@dataclass(frozen=True)
class BoundReport:
    estimate: str
    ratio: float
    c: float
    t_at_max: float
    xi_at_max: float


def _zone_check(estimate, xs, params, cutoffs):
    lo, hi = xs.min(), xs.max()
    if estimate.startswith("low"):
        ok = hi <= cutoffs.eps0 and lo > 0
    elif estimate.startswith("high"):
        ok = lo >= cutoffs.n0
    else:
        ok = lo >= cutoffs.inner_ratio * cutoffs.eps0 and hi <= cutoffs.outer_ratio * cutoffs.n0
    if not ok:
        raise ZoneViolation(f"frequency samples [{lo:g}, {hi:g}] fall outside the zone of {estimate}")
    if estimate == "high-damped" and not params.is_subcritical:
        raise RegimeError("high-damped applies to delta > 0")
    if estimate.startswith("high-critical") and not params.is_critical:
        raise RegimeError(f"{estimate} applies to delta = 0")


def _default_c(estimate, roots, xs, params):
    re = roots.real
    if estimate.startswith("low"):
        c_par = np.min(-re[:, 0] / xs ** 2)
        c_exp = np.min(-re[:, 1:])
        return 0.5 * min(c_par, c_exp)
    if estimate.startswith("high-critical"):
        return 0.5 * np.min(-re[:, 1] * xs ** 2)
    return 0.5 * np.min(-re)


def pointwise_bound_check(params: ModelParams, estimate: str, t_samples, xi_samples, j: int = 0,
                          c: float | None = None, data=None,
                          cutoffs: CutoffPartition | None = None,
                          convention: str = "derivative") -> BoundReport:
    """sup over (t, |xi|) samples of |LHS| / RHS for one pointwise estimate.

    ``data`` is an optional triple of Fourier data magnitudes (phi0, phi1,
    phi2); when omitted the supremum is also taken over data, which for these
    linear-in-data bounds reduces to the worst single kernel.
    """
    if estimate not in ESTIMATES:
        raise ValueError(f"unknown estimate {estimate!r}; choose from {ESTIMATES}")
    if not 0 <= j <= 3:
        raise ValueError("j must lie in 0..3")
    cutoffs = cutoffs or CutoffPartition()
    ts = np.asarray(t_samples, dtype=float).ravel()
    xs = np.asarray(xi_samples, dtype=float).ravel()
    _zone_check(estimate, xs, params, cutoffs)
    batch = solve_characteristic_batch(params, xs)
    if c is None:
        c = float(_default_c(estimate, batch.roots, xs, params))
    table = KernelTable(batch.roots, batch.structure)
    tau, g = params.tau, params.gamma

    ratio, arg = -np.inf, (np.nan, np.nan)
    for t in ts:
        K = table.evaluate(t, orders=j + 1)[:, j, :]          # (M, 3)
        if estimate == "low-profile":
            prof = gaussian_symbol(params, t, xs, j, convention)
            K = K - prof[:, None] * np.array([g, 1.0, tau])
        elif estimate == "high-critical-profile":
            damp = np.exp(-g / (2 * tau ** 2) * t / xs ** 2)
            dsin = xs ** j * np.sin(xs * t + j * np.pi / 2)
            dcos = xs ** j * np.cos(xs * t + j * np.pi / 2)
            lead = np.stack([dsin / (tau * xs), dsin / xs, -dcos / xs ** 2], -1)
            K = K - damp[:, None] * lead

        if estimate == "low-kernel":
            rhs = (xs ** (2 * j) * np.exp(-c * xs ** 2 * t) + np.exp(-c * t))[:, None] * np.ones(3)
        elif estimate == "low-profile":
            rhs = (xs ** (2 * j + 2) * np.exp(-c * xs ** 2 * t) + np.exp(-c * t))[:, None] * np.ones(3)
        elif estimate == "middle":
            rhs = np.exp(-c * t) * np.ones((xs.size, 3))
        else:
            w = np.stack([xs ** max(j - 1, 0), xs ** (j - 1.0), xs ** (j - 2.0)], -1)
            if estimate == "high-damped":
                decay = np.full(xs.shape, np.exp(-c * t))
            else:
                decay = np.exp(-c * t / xs ** 2)
            rhs = decay[:, None] * w
            if estimate == "high-critical-profile":
                rhs = rhs / xs[:, None]

        if data is None:
            r = np.abs(K) / rhs
            per_mode = r.max(-1)
        else:
            d = np.abs(np.asarray(data, dtype=complex))
            per_mode = np.abs(K @ np.asarray(data, dtype=complex)) / (rhs * d).sum(-1)
        k = int(np.argmax(per_mode))
        if per_mode[k] > ratio:
            ratio, arg = float(per_mode[k]), (float(t), float(xs[k]))
    return BoundReport(estimate, ratio, float(c), *arg)


# energy identity (critical case) -----------------------------------------

def _l2sq(grid: SpectralGrid, coeffs) -> float:
    return float(np.sum(np.abs(coeffs) ** 2) * grid.cell_measure / (2 * np.pi) ** grid.dim)


def energy(state: LinearState, params: ModelParams) -> tuple[float, float]:
    """(E, ||phi_t||^2) with E = ||tau phi_tt + phi_t||^2 + ||grad(tau phi_t + phi)||^2 + gamma tau ||phi_t||^2."""
    grid, tau = state.grid, params.tau
    p, pt, ptt = state.phi.coeffs, state.phi_t.coeffs, state.phi_tt.coeffs
    a = _l2sq(grid, tau * ptt + pt)
    b = _l2sq(grid, grid.xi_mag * (tau * pt + p))
    v = _l2sq(grid, pt)
    return a + b + params.gamma * tau * v, v


@dataclass(frozen=True)
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    residual: float
    monotone: bool


def energy_dissipation_check(trajectory: Iterable[LinearState], params: ModelParams) -> EnergyReport:
    """Centred-difference check of dE/dt = -2 gamma ||phi_t||^2 along a uniform trajectory.

    ``trajectory`` may be a generator; states are consumed one at a time.
    """
    params.require_critical()
    rows = np.array([(s.t, *energy(s, params)) for s in trajectory])
    if len(rows) < 3:
        raise ValueError("need at least three samples")
    times, E, V = rows[:, 0], rows[:, 1], rows[:, 2]
    dt = np.diff(times)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("trajectory must be sampled at uniform dt")
    dEdt = (E[2:] - E[:-2]) / (2 * dt[0])
    scale = max(E[0], np.finfo(float).tiny)
    resid = float(np.max(np.abs(dEdt + 2 * params.gamma * V[1:-1])) / scale) if E[0] > 0 else 0.0
    monotone = bool(np.all(np.diff(E) <= 1e-14 * scale))
    return EnergyReport(times, E, 2 * params.gamma * V, resid, monotone)
