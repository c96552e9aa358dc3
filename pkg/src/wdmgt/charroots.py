"""Roots of the per-frequency characteristic cubic.

    tau*lam^3 + lam^2 + (gamma + (delta + tau)|xi|^2) lam + |xi|^2 = 0

Seeds come from the trigonometric (three real roots) or Cardano (one real
root) closed forms and are polished by Newton steps on the unscaled cubic.
Everything is vectorised over |xi| and, where useful, over parameters.
"""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BranchCollision, FitUnstable, NonConvergence, WrongZone
from .model import CutoffPartition, GammaRegime, ModelParams

NEAR_DEGENERATE_RTOL = 1e-6
RESIDUAL_TOL = 1e-10
_NEWTON_STEPS = 4


class RootStructure(enum.IntEnum):
    ONE_REAL_PLUS_CONJUGATE_PAIR = 0
    THREE_REAL = 1
    NEAR_DEGENERATE = 2

    @property
    def label(self):
        return {0: "OneRealPlusConjugatePair", 1: "ThreeReal", 2: "NearDegenerate"}[int(self)]


@dataclass(frozen=True)
class RootTriple:
    lambda1: complex
    lambda2: complex
    lambda3: complex
    structure: RootStructure
    degeneracy_margin: float
    xi_mag: float = float("nan")

    @property
    def roots(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3])

    def __iter__(self):
        return iter((self.lambda1, self.lambda2, self.lambda3))


@dataclass
class RootBatch:
    """Vectorised roots: ``roots[..., k]`` is lambda_{k+1}."""

    roots: np.ndarray
    disc: np.ndarray
    structure: np.ndarray
    margin: np.ndarray
    coeffs: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]

    def residual(self) -> np.ndarray:
        """Scaled cubic residual |P(lam)| / max(1, tau |lam|^3) per root."""
        a, b, c, d = (np.asarray(x)[..., None] for x in self.coeffs)
        lam = self.roots
        val = ((a * lam + b) * lam + c) * lam + d
        return np.abs(val) / np.maximum(1.0, a * np.abs(lam) ** 3)

    def backward_error(self) -> np.ndarray:
        """|P(lam)| relative to the sum of the absolute term sizes.

        Sizes below the normal range are floored there: subnormal terms
        carry too few bits for a relative measure.
        """
        a, b, c, d = (np.asarray(x)[..., None] for x in self.coeffs)
        lam = self.roots
        m = np.abs(lam)
        val = ((a * lam + b) * lam + c) * lam + d
        size = ((np.abs(a) * m + np.abs(b)) * m + np.abs(c)) * m + np.abs(d)
        return np.abs(val) / np.maximum(size, np.finfo(float).tiny)

    def triple(self, idx=()) -> RootTriple:
        r = self.roots[idx]
        return RootTriple(complex(r[0]), complex(r[1]), complex(r[2]),
                          RootStructure(int(self.structure[idx])), float(self.margin[idx]))


def cubic_coefficients(tau, delta, gamma, xi_mag):
    """(a, b, c, d) of a*lam^3 + b*lam^2 + c*lam + d, broadcast over inputs."""
    r2 = np.asarray(xi_mag, dtype=float) ** 2
    tau, delta, gamma = (np.asarray(v, dtype=float) for v in (tau, delta, gamma))
    a = tau + 0.0 * r2
    b = np.ones_like(a)
    c = gamma + (delta + tau) * r2
    d = r2 + 0.0 * a
    return np.broadcast_arrays(a, b, c, d)


def standard_discriminant(a, b, c, d):
    return 18 * a * b * c * d - 4 * b ** 3 * d + b * b * c * c - 4 * a * c ** 3 - 27 * a * a * d * d


def _newton(a, b, c, d, lam, steps=_NEWTON_STEPS):
    for _ in range(steps):
        p = ((a * lam + b) * lam + c) * lam + d
        dp = (3 * a * lam + 2 * b) * lam + c
        ok = dp != 0
        step = np.where(ok, p / np.where(ok, dp, 1.0), 0.0)
        new = lam - step
        pn = ((a * new + b) * new + c) * new + d
        lam = np.where(np.abs(pn) <= np.abs(p), new, lam)
    return lam


def solve_cubic_batch(a, b, c, d) -> RootBatch:
    """Roots of a*lam^3 + b*lam^2 + c*lam + d with real coefficients (a > 0)."""
    a, b, c, d = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, c, d)))
    shape = a.shape
    a, b, c, d = (x.ravel() for x in (a, b, c, d))
    disc = standard_discriminant(a, b, c, d)
    A2, A1, A0 = b / a, c / a, d / a
    p = A1 - A2 * A2 / 3
    q = 2 * A2 ** 3 / 27 - A2 * A1 / 3 + A0
    shift = -A2 / 3
    roots = np.empty((a.size, 3), dtype=complex)

    three = disc > 0
    if np.any(three):
        pp, qq = p[three], q[three]
        m = 2 * np.sqrt(-pp / 3)
        arg = np.clip(3 * qq / (pp * m), -1.0, 1.0)
        theta = np.arccos(arg) / 3
        ys = np.stack([m * np.cos(theta - 2 * np.pi * k / 3) for k in range(3)], axis=-1)
        lam = ys + shift[three, None]
        aa, bb, cc, dd = (x[three, None] for x in (a, b, c, d))
        lam = _newton(aa, bb, cc, dd, lam)
        lam = -np.sort(-lam, axis=-1)  # descending: lambda1 closest to zero
        roots[three] = lam

    one = ~three
    if np.any(one):
        pp, qq = p[one], q[one]
        D = np.maximum((qq / 2) ** 2 + (pp / 3) ** 3, 0.0)
        sq = np.sqrt(D)
        u = np.cbrt(-qq / 2 - np.copysign(sq, qq))
        v = np.where(u != 0, -pp / (3 * np.where(u != 0, u, 1.0)), 0.0)
        r1 = u + v + shift[one]
        aa, bb, cc, dd = (x[one] for x in (a, b, c, d))
        r1 = _newton(aa, bb, cc, dd, r1)
        s = -A2[one] - r1
        prod = A1[one] - r1 * s
        half = s / 2
        im = np.sqrt(np.maximum(prod - half * half, 0.0))
        lam2 = _newton(aa, bb, cc, dd, half + 1j * im)
        lam2 = lam2.real + 1j * np.abs(lam2.imag)
        roots[one, 0] = r1
        roots[one, 1] = lam2
        roots[one, 2] = np.conj(lam2)

    # constant term zero: lambda = 0 is an exact root
    zero = d == 0
    if np.any(zero):
        idx = np.argmin(np.abs(roots[zero]), axis=-1)
        sub = roots[zero]
        sub[np.arange(sub.shape[0]), idx] = 0.0
        roots[zero] = sub

    diffs = np.stack([np.abs(roots[:, i] - roots[:, j]) for i, j in ((0, 1), (0, 2), (1, 2))], -1)
    margin = diffs.min(axis=-1)
    scale = np.abs(roots).max(axis=-1)
    structure = np.where(three, RootStructure.THREE_REAL, RootStructure.ONE_REAL_PLUS_CONJUGATE_PAIR)
    structure = np.where(margin < NEAR_DEGENERATE_RTOL * scale, RootStructure.NEAR_DEGENERATE,
                         structure).astype(np.int8)

    batch = RootBatch(roots.reshape(shape + (3,)), disc.reshape(shape), structure.reshape(shape),
                      margin.reshape(shape), tuple(x.reshape(shape) for x in (a, b, c, d)))
    berr = batch.backward_error()
    if not np.all(np.isfinite(berr)) or np.any(berr > 1e-12):
        raise NonConvergence(f"cubic roots failed to converge (backward error {np.nanmax(berr):.3e})")
    return batch


def solve_characteristic_batch(params: ModelParams, xi_mag) -> RootBatch:
    return solve_cubic_batch(*cubic_coefficients(params.tau, params.delta, params.gamma, xi_mag))


def solve_characteristic(params: ModelParams, xi_mag: float) -> RootTriple:
    """Roots at a single frequency, ordered lambda1 (real branch), lambda2, lambda3."""
    if xi_mag < 0:
        raise ValueError("xi_mag must be non-negative")
    b = solve_characteristic_batch(params, np.array(float(xi_mag)))
    t = b.triple()
    return RootTriple(t.lambda1, t.lambda2, t.lambda3, t.structure, t.degeneracy_margin, float(xi_mag))


@dataclass(frozen=True)
class DiscriminantReport:
    xi_mag: float
    disc_std: float
    sign_class: RootStructure
    paper_leading_term: float | None
    zone: str


def discriminant(params: ModelParams, xi_mag: float,
                 cutoffs: CutoffPartition | None = None) -> DiscriminantReport:
    """Standard discriminant and its structure class.

    The leading-order values quoted for the small and large zones equal
    ``-3 * disc_std`` to leading order; they are returned for comparison.
    """
    cutoffs = cutoffs or CutoffPartition()
    a, b, c, d = cubic_coefficients(params.tau, params.delta, params.gamma, xi_mag)
    disc = float(standard_discriminant(a, b, c, d))
    cls = RootStructure.THREE_REAL if disc > 0 else RootStructure.ONE_REAL_PLUS_CONJUGATE_PAIR
    zone = cutoffs.zone(xi_mag)
    tau, g, dl = params.tau, params.gamma, params.delta
    if zone == "int":
        lead = -3 * g * g * (1 - 4 * g * tau)
    elif zone == "ext":
        lead = 12 * tau * (dl + tau) ** 3 * xi_mag ** 6
    else:
        lead = None
    return DiscriminantReport(float(xi_mag), disc, cls, lead, zone)


def asymptotic_roots_small(params: ModelParams, xi_mag: float,
                           cutoffs: CutoffPartition | None = None) -> RootTriple:
    """Leading-order small-frequency roots, oscillatory or overdamped by the sign of 1 - 4 gamma tau."""
    cutoffs = cutoffs or CutoffPartition()
    if xi_mag > cutoffs.eps0:
        raise WrongZone(f"|xi|={xi_mag} exceeds eps0={cutoffs.eps0}")
    tau, g = params.tau, params.gamma
    l1 = -xi_mag ** 2 / g
    if params.regime.gamma_regime is GammaRegime.OSCILLATORY:
        w = math.sqrt(4 * g * tau - 1) / (2 * tau)
        l2, l3 = complex(-1 / (2 * tau), w), complex(-1 / (2 * tau), -w)
        st = RootStructure.ONE_REAL_PLUS_CONJUGATE_PAIR
    else:
        w = math.sqrt(1 - 4 * g * tau) / (2 * tau)
        l2, l3 = complex(-1 / (2 * tau) + w), complex(-1 / (2 * tau) - w)
        st = RootStructure.THREE_REAL
    rs = [complex(l1), l2, l3]
    margin = min(abs(x - y) for x, y in itertools.combinations(rs, 2))
    return RootTriple(rs[0], l2, l3, st, margin, float(xi_mag))


def asymptotic_roots_large(params: ModelParams, xi_mag: float,
                           cutoffs: CutoffPartition | None = None) -> RootTriple:
    """Leading Laurent terms of the large-frequency roots for delta > 0 or delta = 0."""
    cutoffs = cutoffs or CutoffPartition()
    if xi_mag < cutoffs.n0:
        raise WrongZone(f"|xi|={xi_mag} is below N0={cutoffs.n0}")
    tau, g, dl, r = params.tau, params.gamma, params.delta, float(xi_mag)
    if dl > 0:
        l1 = -1 / (dl + tau)
        re = -dl / (2 * tau * (dl + tau))
        im = math.sqrt(dl / tau + 1) * r
    elif dl == 0:
        l1 = -1 / tau
        re = -g / (2 * tau * tau) / r ** 2
        im = r + g / (2 * tau) / r
    else:
        raise WrongZone("no large-frequency expansion is provided for delta < 0")
    l2 = complex(re, im)
    rs = [complex(l1), l2, l2.conjugate()]
    margin = min(abs(x - y) for x, y in itertools.combinations(rs, 2))
    return RootTriple(rs[0], rs[1], rs[2], RootStructure.ONE_REAL_PLUS_CONJUGATE_PAIR, margin, r)


_DEFAULT_SAMPLES = {"small": (1e-3, 1e-1), "large": (10.0, 300.0)}


def expansion_order_check(params: ModelParams, zone: str, branch: str, component: str = "abs",
                          xi_range: tuple[float, float] | None = None, samples: int = 25,
                          cutoffs: CutoffPartition | None = None) -> float:
    """Log-log slope of |exact - expansion| against |xi| for one expansion claim.

    ``zone`` is ``"small"`` or ``"large"``; ``branch`` is ``"lambda1"`` or
    ``"lambda23"``; ``component`` picks ``"real"``, ``"imag"`` or ``"abs"``
    of the complex remainder.
    """
    cutoffs = cutoffs or CutoffPartition()
    lo, hi = xi_range or _DEFAULT_SAMPLES[zone]
    xs = np.geomspace(lo, hi, samples)
    approx_fn = asymptotic_roots_small if zone == "small" else asymptotic_roots_large
    exact = solve_characteristic_batch(params, xs).roots
    errs = []
    for k, x in enumerate(xs):
        ap = approx_fn(params, float(x), cutoffs)
        if branch == "lambda1":
            target = ap.lambda1
        elif branch == "lambda23":
            target = ap.lambda2
        else:
            raise ValueError(f"unknown branch {branch!r}")
        ex = exact[k][np.argmin(np.abs(exact[k] - target))]
        diff = ex - target
        errs.append({"real": abs(diff.real), "imag": abs(diff.imag), "abs": abs(diff)}[component])
    errs = np.array(errs)
    scale = np.abs(exact).max(axis=-1)
    if np.any(errs <= 1e3 * np.finfo(float).eps * scale):
        raise FitUnstable("expansion remainder is at rounding level; no order can be fitted")
    slope, _ = np.polyfit(np.log(xs), np.log(errs), 1)
    return float(slope)


def spectral_abscissa_scan(params: ModelParams, xi_samples) -> tuple[float, float]:
    """Max over samples and roots of Re lambda, and the |xi| attaining it."""
    xs = np.asarray(xi_samples, dtype=float)
    re = solve_characteristic_batch(params, xs).roots.real.max(axis=-1)
    k = int(np.argmax(re))
    return float(re[k]), float(xs[k])


@dataclass
class RootBranches:
    xi: np.ndarray
    branches: np.ndarray          # (len(xi), 3), column k is lambda_{k+1}
    max_jump: np.ndarray          # largest single-step displacement per branch
    collisions: list[int]         # path indices where two roots were within the margin


def track_roots(params: ModelParams, xi_path: Sequence[float],
                allow_collisions: bool = False) -> RootBranches:
    """Follow the three roots continuously along an increasing |xi| path.

    Each step takes the assignment (over the six permutations) with least
    total displacement. Near-coalescence points raise :class:`BranchCollision`
    unless ``allow_collisions`` is set, in which case they are only listed.
    """
    xs = np.asarray(xi_path, dtype=float)
    if xs.ndim != 1 or xs.size == 0:
        raise ValueError("xi_path must be a non-empty 1-D sequence")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xi_path must be strictly increasing")
    batch = solve_characteristic_batch(params, xs)
    raw = batch.roots
    out = np.empty_like(raw)
    out[0] = raw[0]
    perms = [list(p) for p in itertools.permutations(range(3))]
    collisions = []
    for k in range(len(xs)):
        if batch.structure[k] == RootStructure.NEAR_DEGENERATE:
            collisions.append(k)
            if not allow_collisions:
                raise BranchCollision(
                    f"roots within the degeneracy margin at |xi|={xs[k]:g}", index=k,
                    branches=out[:k])
        if k == 0:
            continue
        cand = raw[k]
        costs = [np.abs(cand[p] - out[k - 1]).sum() for p in perms]
        out[k] = cand[perms[int(np.argmin(costs))]]
    jumps = np.abs(np.diff(out, axis=0)).max(axis=0) if len(xs) > 1 else np.zeros(3)
    return RootBranches(xs, out, jumps, collisions)


def export_sweep_csv(path, params: ModelParams, xi) -> None:
    """Root sweep CSV: xi, re/im of each root, disc_std, structure, residual."""
    xs = np.asarray(xi, dtype=float)
    batch = solve_characteristic_batch(params, xs)
    res = batch.residual().max(axis=-1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "re1", "im1", "re2", "im2", "re3", "im3", "disc_std", "structure",
                    "residual"])
        for k, x in enumerate(xs):
            r = batch.roots[k]
            w.writerow([repr(float(x))] + [repr(float(v)) for z in r for v in (z.real, z.imag)]
                       + [repr(float(batch.disc[k])), RootStructure(int(batch.structure[k])).label,
                          repr(float(res[k]))])
