"""Physical model: Hamiltonians, thermal weight, interaction unitary blocks.

One repeated-interaction round couples the d-level system to a fresh
environment qubit for a time 1/n under

    H_tot = H0 (x) I + I (x) diag(gamma0, gamma1)
            + sqrt(n) (C (x) |e1><e0| + C† (x) |e0><e1|),

and the round unitary is U(n) = exp(-i H_tot / n).  In the joint basis
{e0e0, e1e0, e0e1, e1e1} (system index fast, environment slow) U(n)
splits into four d x d blocks defined operationally by

    U(n) (x (x) e_b) = sum_a (L[a][b] x) (x) e_a,

which is the only block convention used anywhere in this package.  The
blocks are exact (no series truncation); their small-coupling behaviour
L[0][0] = I + O(1/n), L[1][0] = -iC/sqrt(n) + O(n^{-3/2}), ... is a
measured property, never an input.

The environment qubit is thermal with ground-state weight

    p = e^{-beta gamma0} / (e^{-beta gamma0} + e^{-beta gamma1}).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .algebra import dagger, frobenius, herm_defect, herm_expm

LOWER = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |e0><e1|


def gibbs_p(beta, gamma0, gamma1):
    """Ground-state weight of the two-level Gibbs state, overflow-safe.

    p = e^{-beta gamma0} / (e^{-beta gamma0} + e^{-beta gamma1}); the
    max energy shift keeps the exponentials bounded for large beta.
    """
    if beta <= 0.0:
        raise ValueError("beta must be strictly positive")
    shift = min(beta * gamma0, beta * gamma1)
    w0 = np.exp(-(beta * gamma0 - shift))
    w1 = np.exp(-(beta * gamma1 - shift))
    return float(w0 / (w0 + w1))


@dataclass(frozen=True)
class ModelParams:
    """System Hamiltonian, coupling, environment energies, weight, step rate.

    ``p`` is the resolved environment ground-state weight; use
    :meth:`from_beta` to derive it from an inverse temperature.  ``n``
    is the number of interaction rounds per unit time.
    """

    h0: np.ndarray
    c: np.ndarray
    gamma0: float
    gamma1: float
    p: float
    n: int
    beta: float | None = field(default=None, compare=False)

    def __post_init__(self):
        h0 = np.asarray(self.h0, dtype=complex)
        c = np.asarray(self.c, dtype=complex)
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "c", c)
        d = h0.shape[0]
        if h0.shape != (d, d) or c.shape != (d, d) or d < 2:
            raise ValueError("h0 and c must be square d x d matrices with d >= 2")
        if herm_defect(h0) > 1e-12:
            raise ValueError("h0 must be Hermitian")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError("p must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("n must be a positive integer")

    @classmethod
    def from_beta(cls, h0, c, gamma0, gamma1, beta, n):
        p = gibbs_p(beta, gamma0, gamma1)
        return cls(h0=h0, c=c, gamma0=gamma0, gamma1=gamma1, p=p, n=n, beta=beta)

    @property
    def dim(self):
        return self.h0.shape[0]


def dipole_default(p, n=100):
    """Dipole interaction model: H0 = 0, C = |e0><e1|, gamma = (0, 1).

    C lowers the system (C e1 = e0, C e0 = 0), which makes the jump
    targets C rho C†/Tr = |e0><e0| (emission) and C† rho C/Tr =
    |e1><e1| (absorption) exact for every state.
    """
    return ModelParams(
        h0=np.zeros((2, 2), dtype=complex),
        c=LOWER.copy(),
        gamma0=0.0,
        gamma1=1.0,
        p=p,
        n=n,
    )


def build_total_hamiltonian(params):
    """Assemble H_tot on H (x) E in the system-fast joint basis."""
    d = params.dim
    eye_s = np.eye(d, dtype=complex)
    eye_e = np.eye(2, dtype=complex)
    h_env = np.diag([params.gamma0, params.gamma1]).astype(complex)
    raise_e = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)  # |e1><e0|

    def kron_se(sys_op, env_op):
        # system index fast => environment factor goes first in np.kron
        return np.kron(env_op, sys_op)

    h = kron_se(params.h0, eye_e) + kron_se(eye_s, h_env)
    h += np.sqrt(params.n) * (
        kron_se(params.c, raise_e) + kron_se(dagger(params.c), dagger(raise_e))
    )
    return h


@dataclass(frozen=True)
class UnitaryBlocks:
    """The four d x d blocks L[a][b] of U(n), indexed (after, before)."""

    L: np.ndarray  # shape (2, 2, d, d)

    def __getitem__(self, ab):
        a, b = ab
        return self.L[a, b]

    @property
    def dim(self):
        return self.L.shape[-1]

    def unitarity_defect(self):
        """max_{b,b'} || sum_a L[a][b]† L[a][b'] - delta_{bb'} I ||_F."""
        d = self.dim
        worst = 0.0
        for b in range(2):
            for bp in range(2):
                s = sum(dagger(self.L[a, b]) @ self.L[a, bp] for a in range(2))
                target = np.eye(d) if b == bp else np.zeros((d, d))
                worst = max(worst, float(frobenius(s - target)))
        return worst


def build_unitary_blocks(params):
    """Exact U(n) = exp(-i H_tot / n) split into its environment blocks."""
    d = params.dim
    u = herm_expm(build_total_hamiltonian(params), 1.0 / params.n)
    L = np.empty((2, 2, d, d), dtype=complex)
    for a in range(2):
        for b in range(2):
            L[a, b] = u[a * d : (a + 1) * d, b * d : (b + 1) * d]
    return UnitaryBlocks(L=L)


@dataclass(frozen=True)
class Observable:
    """Two-outcome environment observable B = a0 Q0 + a1 Q1."""

    eigenvalue0: float
    eigenvalue1: float
    q0: np.ndarray
    q1: np.ndarray

    def __post_init__(self):
        q0 = np.asarray(self.q0, dtype=complex)
        q1 = np.asarray(self.q1, dtype=complex)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "q1", q1)
        if self.eigenvalue0 == self.eigenvalue1:
            raise ValueError("eigenvalues must be distinct")
        for q in (q0, q1):
            if frobenius(q @ q - q) > 1e-12 or herm_defect(q) > 1e-12:
                raise ValueError("Q_i must be Hermitian projectors")
        if frobenius(q0 + q1 - np.eye(2)) > 1e-12:
            raise ValueError("Q0 + Q1 must resolve the identity")

    @property
    def projectors(self):
        return (self.q0, self.q1)

    def is_diagonal(self, tol=1e-12):
        return abs(self.q0[0, 1]) <= tol and abs(self.q1[0, 1]) <= tol


def diagonal_observable(eigenvalue0=0.0, eigenvalue1=1.0):
    """B diagonal in {e0, e1}: Q_j = |e_j><e_j|."""
    return Observable(
        eigenvalue0=eigenvalue0,
        eigenvalue1=eigenvalue1,
        q0=np.diag([1.0, 0.0]).astype(complex),
        q1=np.diag([0.0, 1.0]).astype(complex),
    )


def symmetric_observable(eigenvalue0=0.0, eigenvalue1=1.0):
    """The symmetric non-diagonal B with projectors onto (e0 +/- e1)/sqrt(2)."""
    plus = np.full((2, 2), 0.5, dtype=complex)
    minus = np.array([[0.5, -0.5], [-0.5, 0.5]], dtype=complex)
    return Observable(
        eigenvalue0=eigenvalue0, eigenvalue1=eigenvalue1, q0=plus, q1=minus
    )


def _matrix_to_pairs(m):
    return [[float(z.real), float(z.imag)] for z in np.asarray(m, complex).ravel()]


def _pairs_to_matrix(pairs):
    flat = np.array([complex(re, im) for re, im in pairs])
    d = int(round(np.sqrt(flat.size)))
    if d * d != flat.size:
        raise ValueError("matrix entry list has non-square length")
    return flat.reshape(d, d)


def params_to_json(params):
    """Serialize ModelParams to the documented JSON layout."""
    doc = {
        "h0": _matrix_to_pairs(params.h0),
        "c": _matrix_to_pairs(params.c),
        "gamma0": params.gamma0,
        "gamma1": params.gamma1,
        "n": params.n,
    }
    if params.beta is not None:
        doc["beta"] = params.beta
    else:
        doc["p"] = params.p
    return json.dumps(doc, sort_keys=True)


def params_from_json(doc):
    """Build ModelParams from a JSON string or already-parsed dict.

    Exactly one of ``beta`` (inverse temperature) or ``p`` (direct
    weight) must be present.
    """
    if isinstance(doc, str):
        doc = json.loads(doc)
    h0 = _pairs_to_matrix(doc["h0"])
    c = _pairs_to_matrix(doc["c"])
    gamma0 = float(doc["gamma0"])
    gamma1 = float(doc["gamma1"])
    n = int(doc["n"])
    if ("beta" in doc) == ("p" in doc):
        raise ValueError("specify exactly one of 'beta' or 'p'")
    if "beta" in doc:
        return ModelParams.from_beta(h0, c, gamma0, gamma1, float(doc["beta"]), n)
    return ModelParams(h0=h0, c=c, gamma0=gamma0, gamma1=gamma1, p=float(doc["p"]), n=n)
