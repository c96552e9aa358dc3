"""Periodic grids, scaled DFTs and Fourier-side norms.

Fourier convention: ``fhat(xi) = int exp(-i x.xi) f(x) dx``, approximated on
the box ``[-L/2, L/2)^n`` by the DFT scaled with the cell volume ``(L/N)^n``.
Parseval then reads ``||f||_2 = (2 pi)^(-n/2) ||fhat||_2``, the discrete
frequency sum carrying the cell measure ``(2 pi / L)^n``.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import BoxTooSmall, InvalidParameter, InvalidSymbol, NormUndefined, ShapeMismatch

SNAPSHOT_MAGIC = b"MGTF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdQ")  # magic, version, dim, N, L, reserved -> 32 bytes


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform periodic grid of ``points`` nodes per axis on a box of side ``box_length``."""

    dim: int
    box_length: float
    points: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise InvalidParameter(f"dim must be 1, 2 or 3, got {self.dim}")
        if not self.box_length > 0:
            raise InvalidParameter(f"box_length must be positive, got {self.box_length}")
        n = self.points
        if n < 16 or n & (n - 1):
            raise InvalidParameter(f"points must be a power of two >= 16, got {n}")
        object.__setattr__(self, "box_length", float(self.box_length))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def dx(self) -> float:
        return self.box_length / self.points

    @property
    def dxi(self) -> float:
        return 2 * math.pi / self.box_length

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.dim

    @property
    def cell_measure(self) -> float:
        """Frequency-lattice cell measure (2 pi / L)^n."""
        return self.dxi ** self.dim

    @cached_property
    def x1d(self) -> np.ndarray:
        return -self.box_length / 2 + self.dx * np.arange(self.points)

    @cached_property
    def k1d(self) -> np.ndarray:
        return np.fft.fftfreq(self.points, 1.0 / self.points).astype(np.int64)

    @cached_property
    def xi1d(self) -> np.ndarray:
        return self.dxi * self.k1d

    @cached_property
    def x(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.x1d] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def xi(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.xi1d] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def k2(self) -> np.ndarray:
        """Integer squared wavenumber sum_a k_a^2 on the full lattice."""
        ks = np.meshgrid(*([self.k1d] * self.dim), indexing="ij", sparse=True)
        return sum(k * k for k in ks) + np.zeros(self.shape, dtype=np.int64)

    @cached_property
    def xi_mag(self) -> np.ndarray:
        return self.dxi * np.sqrt(self.k2.astype(float))

    @cached_property
    def radial(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct |xi| values and the inverse index mapping lattice -> radius."""
        uk, inv = np.unique(self.k2.ravel(), return_inverse=True)
        return self.dxi * np.sqrt(uk.astype(float)), inv.reshape(self.shape)

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(i xi_k L/2) = (-1)^k shifts the DFT origin to x = -L/2
        s = np.where(self.k1d % 2 == 0, 1.0, -1.0)
        out = np.ones(self.shape)
        for a in range(self.dim):
            idx = [None] * self.dim
            idx[a] = slice(None)
            out = out * s[tuple(idx)]
        return out

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on lattice points whose index along some axis is the Nyquist index."""
        ny = self.k1d == -(self.points // 2)
        m = np.zeros(self.shape, dtype=bool)
        for a in range(self.dim):
            idx = [None] * self.dim
            idx[a] = slice(None)
            m = m | ny[tuple(idx)]
        return m

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep modes with |k_a| <= N/3 on every axis."""
        keep = np.abs(self.k1d) <= self.points // 3
        m = np.ones(self.shape, dtype=bool)
        for a in range(self.dim):
            idx = [None] * self.dim
            idx[a] = slice(None)
            m = m & keep[tuple(idx)]
        return m

    def no_wrap_ok(self, params, t: float) -> bool:
        """Diffusion width plus wave radius must stay below L/4.

        With delta > 0 the wave front is damped like exp(-delta t/(2 tau (delta+tau)));
        it stops counting once attenuated below 1e-8.
        """
        width = math.sqrt(4.0 * t / params.gamma)
        active = t
        if params.delta > 0:
            rate = params.delta / (2 * params.tau * (params.delta + params.tau))
            active = min(t, math.log(1e8) / rate)
        radius = active * math.sqrt(max(params.delta, 0.0) / params.tau + 1.0)
        return width + radius < self.box_length / 4

    def check_no_wrap(self, params, t: float) -> bool:
        ok = self.no_wrap_ok(params, t)
        if not ok:
            warnings.warn(
                f"no-wrap budget exceeded at t={t:g} on box L={self.box_length:g}; "
                "periodic images may contaminate decay measurements",
                RuntimeWarning, stacklevel=2)
        return ok


class Field:
    """Immutable spectral coefficients of a scalar field on a :class:`SpectralGrid`."""

    __slots__ = ("grid", "coeffs")

    def __init__(self, grid: SpectralGrid, coeffs):
        c = np.array(coeffs, dtype=complex)
        if c.shape != grid.shape:
            raise ShapeMismatch(f"coefficient shape {c.shape} does not match grid {grid.shape}")
        c.setflags(write=False)
        self.grid = grid
        self.coeffs = c

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    def to_physical(self) -> np.ndarray:
        return inverse(self)

    def _check(self, other):
        if isinstance(other, Field) and other.grid != self.grid:
            raise ShapeMismatch("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return Field(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return Field(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, a):
        if isinstance(a, Field):
            return NotImplemented
        return Field(self.grid, self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.coeffs)

    def conjugate_symmetry_error(self) -> float:
        """Max relative deviation from fhat(-xi) = conj(fhat(xi)), Nyquist modes excluded."""
        c = self.coeffs
        flipped = c
        for a in range(self.grid.dim):
            flipped = np.roll(np.flip(flipped, axis=a), 1, axis=a)
        diff = np.abs(c - np.conj(flipped))
        diff[self.grid.nyquist_mask] = 0.0
        scale = np.max(np.abs(c))
        return float(diff.max() / scale) if scale > 0 else 0.0

    def __repr__(self):
        return f"Field(dim={self.grid.dim}, N={self.grid.points}, L={self.grid.box_length})"


def transform(grid: SpectralGrid, samples) -> Field:
    """Physical samples on ``grid`` -> spectral :class:`Field`."""
    f = np.asarray(samples)
    if f.shape != grid.shape:
        raise ShapeMismatch(f"sample shape {f.shape} does not match grid {grid.shape}")
    return Field(grid, grid.cell_volume * grid._phase * np.fft.fftn(f))


def inverse(field: Field, real: bool = True) -> np.ndarray:
    g = field.grid
    f = np.fft.ifftn(field.coeffs * g._phase) / g.cell_volume
    return f.real if real else f


@dataclass(frozen=True)
class NormSpec:
    """Which norm to take. ``space`` is ``"hdot"``, ``"h"`` or ``"lp"``.

    ``j`` and ``sigma`` record the time-derivative index and profile order
    the norm belongs to; they do not change the value.
    """

    space: str = "hdot"
    order: float = 0.0
    p: float = 2.0
    j: int = 0
    sigma: float | None = None

    def __post_init__(self):
        if self.space not in ("hdot", "h", "lp"):
            raise InvalidParameter(f"unknown norm space {self.space!r}")
        if self.space == "lp" and not (self.p >= 1):
            raise InvalidParameter("Lp norm needs p >= 1")

    @classmethod
    def hdot(cls, s, j=0, sigma=None):
        return cls("hdot", float(s), j=j, sigma=sigma)

    @classmethod
    def h(cls, s):
        return cls("h", float(s))

    @classmethod
    def lp(cls, p):
        return cls("lp", p=float(p))

    @property
    def label(self) -> str:
        if self.space == "lp":
            return "Linf" if math.isinf(self.p) else f"L{self.p:g}"
        return f"{'Hdot' if self.space == 'hdot' else 'H'}{self.order:g}"


def _unit_sphere_area(n):
    return {1: 2.0, 2: 2 * math.pi, 3: 4 * math.pi}[n]


def sobolev_weight(grid: SpectralGrid, spec: NormSpec) -> np.ndarray:
    """Squared weight |xi|^(2s) or <xi>^(2s) on the lattice.

    For negative homogeneous orders the origin carries the cell average of
    |xi|^(2s) over a ball of one cell volume (integrable when s > -n/2).
    """
    r2 = grid.xi_mag ** 2
    s = spec.order
    if spec.space == "h":
        return (1.0 + r2) ** s
    if s >= 0:
        return r2 ** s
    w = np.empty_like(r2)
    nz = r2 > 0
    w[nz] = r2[nz] ** s
    n = grid.dim
    if 2 * s + n > 0:
        vol = grid.cell_measure
        rho = (vol * n / _unit_sphere_area(n)) ** (1.0 / n)
        w[~nz] = _unit_sphere_area(n) * rho ** (2 * s + n) / (2 * s + n) / vol
    else:
        w[~nz] = np.inf
    return w


def sobolev_norm(field: Field, spec: NormSpec) -> float:
    g = field.grid
    if spec.space == "lp":
        f = np.abs(inverse(field))
        if math.isinf(spec.p):
            return float(f.max())
        return float((np.sum(f ** spec.p) * g.cell_volume) ** (1.0 / spec.p))
    w2 = sobolev_weight(g, spec)
    c2 = np.abs(field.coeffs) ** 2
    if spec.space == "hdot" and spec.order <= -g.dim / 2 and c2.flat[0] > 0:
        raise NormUndefined(
            f"Hdot^{spec.order:g} norm diverges at xi=0 for a field with nonzero mean "
            f"(requires s > -n/2 = {-g.dim / 2:g})")
    if not np.isfinite(w2.flat[0]):
        w2 = w2.copy()
        w2.flat[0] = 0.0
    total = np.sum(w2 * c2) * g.cell_measure
    return float(math.sqrt(total) / (2 * math.pi) ** (g.dim / 2))


def sobolev_norms_batch(coeffs: np.ndarray, grid: SpectralGrid, spec: NormSpec) -> np.ndarray:
    """Homogeneous/inhomogeneous norms of a stack of coefficient arrays (leading axis = time)."""
    w2 = sobolev_weight(grid, spec)
    if not np.isfinite(w2.flat[0]):
        w2 = w2.copy()
        w2.flat[0] = 0.0
    axes = tuple(range(1, coeffs.ndim))
    total = np.sum(w2 * np.abs(coeffs) ** 2, axis=axes) * grid.cell_measure
    return np.sqrt(total) / (2 * math.pi) ** (grid.dim / 2)


def moment(field: Field) -> float:
    """Zeroth moment int f dx, i.e. fhat(0)."""
    return float(field.coeffs.flat[0].real)


def _symbol_values(grid, symbol):
    if callable(symbol):
        vals = np.asarray(symbol(grid.xi_mag))
    else:
        vals = np.asarray(symbol)
    if vals.shape != grid.shape:
        vals = np.broadcast_to(vals, grid.shape)
    if not np.all(np.isfinite(vals)):
        raise InvalidSymbol("multiplier symbol is NaN or infinite at some lattice point")
    return vals


def apply_multiplier(field: Field, symbol: Callable | np.ndarray, odd: bool = False) -> Field:
    """Pointwise product with ``symbol`` (callable of |xi| or a lattice array).

    ``odd=True`` zeroes the Nyquist modes, as required for odd symbols.
    """
    vals = _symbol_values(field.grid, symbol)
    out = field.coeffs * vals
    if odd:
        out = np.where(field.grid.nyquist_mask, 0.0, out)
    return Field(field.grid, out)


def gradient(field: Field) -> list[Field]:
    g = field.grid
    return [apply_multiplier(field, 1j * np.broadcast_to(xa, g.shape), odd=True) for xa in g.xi]


def synthesize_gaussian(grid: SpectralGrid, amplitude: float = 1.0, width: float = 1.0,
                        center: Sequence[float] | float = 0.0) -> Field:
    """Field ``a exp(-|x - c|^2 / (2 w^2))``; the box must hold it to 1e-12 of the peak."""
    if not width > 0:
        raise InvalidParameter("Gaussian width must be positive")
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    margin = grid.box_length / 2 - np.max(np.abs(c))
    if margin <= 0 or margin ** 2 / (2 * width ** 2) < math.log(1e12):
        raise BoxTooSmall(
            f"Gaussian of width {width:g} centred at {tuple(c)} is not below 1e-12 of its "
            f"peak at the boundary of a box of length {grid.box_length:g}")
    r2 = sum((xa - ca) ** 2 for xa, ca in zip(grid.x, c))
    return transform(grid, amplitude * np.exp(-r2 / (2 * width ** 2)))


def write_snapshot(path, field: Field) -> Path:
    """Binary snapshot: 32-byte header then little-endian float64 physical samples."""
    g = field.grid
    path = Path(path)
    samples = np.ascontiguousarray(inverse(field), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.dim, g.points, g.box_length, 0))
        fh.write(samples.tobytes(order="C"))
    return path


def read_snapshot(path) -> Field:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ShapeMismatch(f"{path}: truncated snapshot header")
        magic, version, dim, n, length, _ = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise ShapeMismatch(f"{path}: bad magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise ShapeMismatch(f"{path}: unsupported snapshot version {version}")
        grid = SpectralGrid(dim, length, n)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n ** dim:
        raise ShapeMismatch(f"{path}: expected {n ** dim} samples, found {data.size}")
    return transform(grid, data.reshape(grid.shape))
