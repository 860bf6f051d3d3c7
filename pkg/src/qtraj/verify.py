"""Markov-generator diagnostics: exact discrete generators, limit
generators, residual-decay scans, martingale residuals.

The discrete generator of the chain at state rho is evaluated exactly
from the branch enumeration,

    A_n f(rho) = n * sum_branches prob_b (f(rho_b) - f(rho)),

with test functions f restricted to polynomials of degree <= 2 in the
Bloch coordinates (closed-form gradient and Hessian, so scans measure
the chain and not finite-difference noise).

Limit generators (qubit, weight p):

* jump kind (diagonal B, before & after):
      A^j f = Df(Lp) + [f(j1) - f - Df(j1 - rho)] p Tr[C rho C†]
                     + [f(j2) - f - Df(j2 - rho)] (1-p) Tr[C† rho C],
  with jump targets j1 = C rho C†/Tr, j2 = C† rho C/Tr.  The p, (1-p)
  intensity weights are what the chain converges to (measured O(1/n)
  residual decay); ``display_variant=True`` drops them — the unweighted
  form is kept for comparison and carries an O(1) residual floor.

* diffusive kind (symmetric non-diagonal B, before & after):
      A^d f = Df(Lp) + 1/2 D²f(F1, F1) + 1/2 D²f(F2, F2),
      F1 = sqrt(p)   (C'rho + rho C'† - Tr[rho(C'+C'†)] rho), C' = -iC,
      F2 = sqrt(1-p) (C''rho + rho C''† - Tr[..] rho),       C'' = -iC†.
  The -i quadrature is forced by the interaction unitary exp(-iH/n):
  the measured branch kick of the symmetric observable is the
  imaginary quadrature of C (for the dipole model the real-C fields
  are the same family up to a Bloch z-rotation).  ``display_variant``
  selects the real-C fields with magnitudes sqrt(1-(1-p)^2),
  sqrt(1-p^2); they are kept for comparison and do not match the chain.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .algebra import bloch_vector, dagger
from .continuous import lindblad_rhs
from .discrete import step_distribution
from .model import build_unitary_blocks

MONOMIALS = ("1", "x", "y", "z", "xx", "yy", "zz", "xy", "xz", "yz")


@dataclass(frozen=True)
class TestFunction:
    """Real polynomial of degree <= 2 in the Bloch coordinates.

    coeffs follow MONOMIALS order; evaluation, gradient and Hessian
    are exact and mutually consistent by construction.
    """

    __test__ = False  # not a pytest case despite the Test* name

    coeffs: np.ndarray
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (10,):
            raise ValueError("need 10 monomial coefficients")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def monomial(cls, name):
        if name not in MONOMIALS:
            raise ValueError(f"unknown monomial {name!r}; pick from {MONOMIALS}")
        c = np.zeros(10)
        c[MONOMIALS.index(name)] = 1.0
        return cls(coeffs=c, name=name)

    def value(self, rho):
        b = bloch_vector(rho)
        x, y, z = b[..., 0], b[..., 1], b[..., 2]
        c = self.coeffs
        return (
            c[0]
            + c[1] * x
            + c[2] * y
            + c[3] * z
            + c[4] * x * x
            + c[5] * y * y
            + c[6] * z * z
            + c[7] * x * y
            + c[8] * x * z
            + c[9] * y * z
        )

    def gradient(self, rho):
        b = bloch_vector(rho)
        x, y, z = b[..., 0], b[..., 1], b[..., 2]
        c = self.coeffs
        gx = c[1] + 2.0 * c[4] * x + c[7] * y + c[8] * z
        gy = c[2] + 2.0 * c[5] * y + c[7] * x + c[9] * z
        gz = c[3] + 2.0 * c[6] * z + c[8] * x + c[9] * y
        return np.stack([gx, gy, gz], axis=-1)

    def hessian(self):
        c = self.coeffs
        return np.array(
            [
                [2.0 * c[4], c[7], c[8]],
                [c[7], 2.0 * c[5], c[9]],
                [c[8], c[9], 2.0 * c[6]],
            ]
        )

    def derivative(self, rho, direction):
        """D_rho f applied to a Hermitian direction (matrix form)."""
        return np.sum(self.gradient(rho) * bloch_vector(direction), axis=-1)

    def second_derivative(self, rho, dir_a, dir_b):
        a = bloch_vector(dir_a)
        b = bloch_vector(dir_b)
        return np.einsum("...i,ij,...j->...", a, self.hessian(), b)


def discrete_generator(f, rho, p, setup, blocks, n):
    """A_n f(rho) by exact enumeration of the one-step law."""
    total = 0.0
    f0 = f.value(rho)
    for prob, state, _ in step_distribution(rho, p, setup, blocks):
        total += prob * (f.value(state) - f0)
    return n * total


def _tr(M):
    return np.trace(M, axis1=-2, axis2=-1)


def _field(x_op, rho):
    """X rho + rho X† - Tr[rho (X + X†)] rho (traceless, Hermitian)."""
    s = x_op @ rho + rho @ dagger(x_op)
    return s - _tr(s).real[..., None, None] * rho


def diffusive_limit_fields(rho, params, display_variant=False):
    c = params.c
    p = params.p
    if display_variant:
        return (
            np.sqrt(1.0 - (1.0 - p) ** 2) * _field(c, rho),
            np.sqrt(1.0 - p**2) * _field(dagger(c), rho),
        )
    return (
        np.sqrt(p) * _field(-1j * c, rho),
        np.sqrt(1.0 - p) * _field(-1j * dagger(c), rho),
    )


def limit_generator(f, rho, kind, params, display_variant=False):
    """A^j or A^d at a state (or batch); see the module docstring."""
    drift = f.derivative(rho, lindblad_rhs(rho, params))
    if kind == "diffusive":
        f1, f2 = diffusive_limit_fields(rho, params, display_variant)
        return (
            drift
            + 0.5 * f.second_derivative(rho, f1, f1)
            + 0.5 * f.second_derivative(rho, f2, f2)
        )
    if kind != "jump":
        raise ValueError(f"unknown generator kind {kind!r}")
    c = params.c
    cd = dagger(c)
    w1, w2 = (1.0, 1.0) if display_variant else (params.p, 1.0 - params.p)
    out = np.asarray(drift, dtype=float).copy()
    f0 = f.value(rho)
    for weight, raw in ((w1, c @ rho @ cd), (w2, cd @ rho @ c)):
        tr = _tr(raw).real
        live = tr >= 1e-14
        if np.ndim(tr) == 0:
            if live:
                target = raw / tr
                out += (
                    f.value(target) - f0 - f.derivative(rho, target - rho)
                ) * weight * tr
        else:
            t = np.where(live, tr, 1.0)
            target = raw / t[..., None, None]
            contrib = (
                f.value(target) - f0 - f.derivative(rho, target - rho)
            ) * weight * tr
            out += np.where(live, contrib, 0.0)
    return out


def bloch_grid(spacing=0.2, radius=0.9):
    """Bloch-ball lattice states: spacing-0.2 cube intersected with a ball."""
    axis = np.arange(-1.0, 1.0 + 1e-9, spacing)
    pts = [
        (x, y, z)
        for x in axis
        for y in axis
        for z in axis
        if x * x + y * y + z * z <= radius**2 + 1e-12
    ]
    return np.array(pts)


def bloch_grid_25():
    """A fixed 25-state grid: 5x5 in (x, z) with spacing 0.2, at y = 0.2."""
    vals = np.arange(-0.4, 0.401, 0.2)
    return np.array([(x, 0.2, z) for x in vals for z in vals])


@dataclass
class ScanResult:
    """Sup-residual per n and the fitted log-log slope."""

    n_values: list
    residuals: list
    slope: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "sup_residual", "slope_estimate"])
            for n, r in zip(self.n_values, self.residuals):
                w.writerow([n, repr(float(r)), repr(float(self.slope))])


def generator_residual_scan(
    functions, grid_bloch, setup, params, n_values, kind, display_variant=False
):
    """sup over the grid and test functions of |A_n f - A^kind f| per n.

    The grid must hold at least 25 Bloch points; the blocks are rebuilt
    exactly at each n.  The slope is the least-squares fit of
    log(residual) against log(n).
    """
    from .algebra import rho_from_bloch

    grid_bloch = np.asarray(grid_bloch)
    if grid_bloch.shape[0] < 25:
        raise ValueError("need a grid of at least 25 states")
    states = [rho_from_bloch(b) for b in grid_bloch]
    residuals = []
    for n in n_values:
        params_n = replace(params, n=int(n))
        blocks = build_unitary_blocks(params_n)
        worst = 0.0
        for rho in states:
            dist = step_distribution(rho, params.p, setup, blocks)
            for f in functions:
                f0 = f.value(rho)
                a_n = float(n) * sum(
                    prob * (f.value(state) - f0) for prob, state, _ in dist
                )
                a_lim = float(limit_generator(f, rho, kind, params, display_variant))
                worst = max(worst, abs(a_n - a_lim))
        residuals.append(worst)
    if len(n_values) > 1:
        logs_n = np.log(np.asarray(n_values, dtype=float))
        logs_r = np.log(np.maximum(residuals, 1e-300))
        slope = float(np.polyfit(logs_n, logs_r, 1)[0])
    else:
        slope = float("nan")
    return ScanResult(n_values=list(n_values), residuals=residuals, slope=slope)


@dataclass
class MartingaleWindows:
    """Per-window martingale residual means, standard errors, z-scores."""

    window_edges: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray

    @property
    def z_scores(self):
        return self.means / np.where(self.stderrs > 0, self.stderrs, np.inf)


def martingale_residual(states, dt, f, kind, params, windows=5, display_variant=False):
    """E[f(rho_{t+s}) - f(rho_t) - int A f(rho_u) du] over path windows.

    ``states`` is a stored ensemble (paths, steps+1, 2, 2) on a uniform
    dt grid.  The integral is the left Riemann sum, so the estimate
    carries an O(dt) discretization bias on top of the O(n^{-1/2})
    generator bias when applied to discrete-chain ensembles.
    """
    states = np.asarray(states)
    n_paths, n_times = states.shape[:2]
    if n_paths < 2:
        raise ValueError("need an ensemble of at least 2 paths")
    gen_vals = np.empty((n_paths, n_times))
    for t in range(n_times):
        gen_vals[:, t] = limit_generator(
            f, states[:, t], kind, params, display_variant
        )
    f_vals = f.value(states)
    edges = np.linspace(0, n_times - 1, windows + 1).astype(int)
    means = np.empty(windows)
    stderrs = np.empty(windows)
    for w in range(windows):
        a, b = edges[w], edges[w + 1]
        resid = (
            f_vals[:, b]
            - f_vals[:, a]
            - dt * gen_vals[:, a:b].sum(axis=1)
        )
        means[w] = resid.mean()
        stderrs[w] = resid.std(ddof=1) / np.sqrt(n_paths)
    return MartingaleWindows(
        window_edges=edges * dt, means=means, stderrs=stderrs
    )


def collect_jump_paths(rho0, params, config, paths):
    """Store full state paths of the jump SDE (moderate sizes only)."""
    from .continuous import (
        jump_intensities,
        jump_propagator,
        jump_targets,
    )
    from .unraveling import _thin_masks

    steps = config.steps
    out = np.empty((paths, steps + 1, 2, 2), dtype=complex)
    prop = jump_propagator(params, config.dt)
    prop_d = dagger(prop)
    parents = np.random.SeedSequence(config.seed).spawn(paths)
    gen_pairs = [
        [np.random.Generator(np.random.Philox(c)) for c in par.spawn(2)]
        for par in parents
    ]
    states = np.broadcast_to(rho0, (paths, 2, 2)).copy().astype(complex)
    out[:, 0] = states
    for k in range(steps):
        u1 = np.stack([g1.random(3) for g1, _ in gen_pairs], axis=0)
        u2 = np.stack([g2.random(3) for _, g2 in gen_pairs], axis=0)
        lam1, lam2 = jump_intensities(states, params)
        raw1, t1, raw2, t2 = jump_targets(states, params)
        do1, do2 = _thin_masks(lam1, lam2, u1, u2, config.dt, t1, t2)
        drift = ~(do1 | do2)
        new = np.empty_like(states)
        if np.any(drift):
            raw = prop @ states[drift] @ prop_d
            tr = np.trace(raw, axis1=-2, axis2=-1).real
            new[drift] = raw / tr[:, None, None]
        if np.any(do1):
            new[do1] = raw1[do1] / t1[do1, None, None]
        if np.any(do2):
            new[do2] = raw2[do2] / t2[do2, None, None]
        states = new
        out[:, k + 1] = states
    return out


def collect_chain_paths(rho0, params, setup, steps, paths, seed):
    """Store full state paths of the discrete chain (vectorized)."""
    from .discrete import _apply_branches, _branch_probabilities, _kraus_maps
    from .ensembles import spawn_generators

    blocks = build_unitary_blocks(params)
    templates = _kraus_maps(params.p, setup, blocks)
    gens = spawn_generators(seed, paths)
    states = np.broadcast_to(rho0, (paths, 2, 2)).copy().astype(complex)
    out = np.empty((paths, steps + 1, 2, 2), dtype=complex)
    out[:, 0] = states
    for k in range(steps):
        u = np.array([g.random() for g in gens])
        probs = _branch_probabilities(states, templates)
        cum = np.cumsum(probs, axis=1)
        choice = np.sum(cum <= u[:, None], axis=1)
        np.clip(choice, 0, len(templates) - 1, out=choice)
        states = _apply_branches(states, choice, templates)
        out[:, k + 1] = states
    return out
