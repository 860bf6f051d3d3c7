"""Small dense complex-matrix kernel.

Everything in this package lives on 2x2 (system) and 4x4 (system x
environment) complex matrices, so the kernel favours exactness and
closed forms over generality: the unitary exponential is computed by
Hermitian eigendecomposition (unitary to rounding), the 2x2 general
exponential by the trace/determinant closed form, and state repair by
eigenvalue clipping.

States are plain ``numpy`` arrays.  A density matrix is Hermitian
(Frobenius defect <= 1e-12), unit trace (|Tr - 1| <= 1e-12) and
positive (min eigenvalue >= -1e-10); ``assert_density_matrix`` checks
exactly that contract.
"""

from __future__ import annotations

import numpy as np

HERM_TOL = 1e-12
TRACE_TOL = 1e-12
POS_TOL = 1e-10


class DivergenceError(RuntimeError):
    """An integrator produced a state outside the repairable region.

    Carries the step (and optionally path) index at which the
    precondition of ``project_to_state`` failed.
    """

    def __init__(self, message, step=None, path=None):
        super().__init__(message)
        self.step = step
        self.path = path


def dagger(M):
    return M.conj().swapaxes(-1, -2)


def frobenius(M):
    """Frobenius norm, over the last two axes for batched input."""
    return np.sqrt(np.sum(np.abs(M) ** 2, axis=(-2, -1)))


def herm_defect(M):
    return frobenius(M - dagger(M))


def is_density_matrix(rho, herm_tol=HERM_TOL, trace_tol=TRACE_TOL, pos_tol=POS_TOL):
    if herm_defect(rho) > herm_tol:
        return False
    if abs(np.trace(rho) - 1.0) > trace_tol:
        return False
    w = np.linalg.eigvalsh(0.5 * (rho + dagger(rho)))
    return w.min() >= -pos_tol


def assert_density_matrix(rho, herm_tol=HERM_TOL, trace_tol=TRACE_TOL, pos_tol=POS_TOL):
    if herm_defect(rho) > herm_tol:
        raise ValueError(f"not Hermitian: defect {herm_defect(rho):.3e}")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"trace {tr} is not 1")
    w = np.linalg.eigvalsh(0.5 * (rho + dagger(rho)))
    if w.min() < -pos_tol:
        raise ValueError(f"negative eigenvalue {w.min():.3e}")


def partial_trace_env(M, dim_h, dim_e):
    """Partial trace over the environment factor of H (x) E.

    The joint basis is ordered system-fast, environment-slow:
    ``|i (x) a>`` sits at index ``i + dim_h * a``.  The result N is the
    unique operator with Tr[N X] = Tr[M (X (x) I_E)] for every system
    operator X, i.e. N_ij = sum_a M[(i,a),(j,a)].
    """
    M = np.asarray(M)
    if M.shape != (dim_h * dim_e, dim_h * dim_e):
        raise ValueError(
            f"expected a {dim_h * dim_e}x{dim_h * dim_e} matrix, got {M.shape}"
        )
    blocks = M.reshape(dim_e, dim_h, dim_e, dim_h)
    return np.einsum("aiaj->ij", blocks)


def herm_expm(H, t=1.0):
    """exp(-i t H) for Hermitian H, by eigendecomposition.

    Diagonalize H = V w V†, exponentiate the phases, rotate back.  The
    result is unitary up to rounding regardless of ||t H||.
    """
    H = np.asarray(H, dtype=complex)
    defect = herm_defect(H)
    if defect > 1e-10:
        raise ValueError(f"herm_expm needs a Hermitian matrix (defect {defect:.3e})")
    w, V = np.linalg.eigh(0.5 * (H + dagger(H)))
    return (V * np.exp(-1j * t * w)) @ dagger(V)


def expm2(M):
    """Closed-form exponential of (batched) general complex 2x2 matrices.

    With s = tr(M)/2 and N = M - s I (traceless), N^2 = -det(N) I, so
    e^M = e^s (cosh q I + sinh(q)/q N) with q = sqrt(-det N).  The
    q -> 0 limit is handled by series.  Used by the stochastic
    exponential integrators, where M is built per path and per step.
    """
    M = np.asarray(M, dtype=complex)
    s = 0.5 * (M[..., 0, 0] + M[..., 1, 1])
    N = M.copy()
    N[..., 0, 0] -= s
    N[..., 1, 1] -= s
    detN = N[..., 0, 0] * N[..., 1, 1] - N[..., 0, 1] * N[..., 1, 0]
    q = np.sqrt(-detN + 0j)
    small = np.abs(q) < 1e-6
    qs = np.where(small, 1.0, q)
    # q^2 = -det N, so cosh q = 1 - det/2 + ..., sinh(q)/q = 1 - det/6 + ...
    sinch = np.where(small, 1.0 - detN / 6.0, np.sinh(qs) / qs)
    cosh = np.where(small, 1.0 - detN / 2.0, np.cosh(qs))
    out = sinch[..., None, None] * N
    out[..., 0, 0] += cosh
    out[..., 1, 1] += cosh
    return np.exp(s)[..., None, None] * out


SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def bloch_vector(M):
    """Pauli components (Tr[sigma_i M]) of a Hermitian 2x2 (batch).

    For a density matrix this is the Bloch vector; for a traceless
    Hermitian direction it is the corresponding tangent vector.
    """
    x = (M[..., 0, 1] + M[..., 1, 0]).real
    y = (1j * (M[..., 0, 1] - M[..., 1, 0])).real
    z = (M[..., 0, 0] - M[..., 1, 1]).real
    return np.stack([x, y, z], axis=-1)


def rho_from_bloch(b):
    """Qubit state (I + x sx + y sy + z sz)/2 from Bloch coordinates."""
    b = np.asarray(b, dtype=float)
    return 0.5 * (
        np.eye(2, dtype=complex)
        + b[..., 0, None, None] * SIGMA_X
        + b[..., 1, None, None] * SIGMA_Y
        + b[..., 2, None, None] * SIGMA_Z
    )


def project_to_state(M, step=None, path=None):
    """Repair an almost-valid state: Hermitize, clip, renormalize.

    Returns ``(rho, repair)`` where ``repair`` is the Frobenius
    distance moved.  Intended for numerical repair after inexact SDE
    steps only: if the input is further than 0.1 from Hermitian or its
    trace is further than 0.1 from 1, the integrator has diverged and a
    :class:`DivergenceError` carrying ``step`` is raised.
    """
    M = np.asarray(M, dtype=complex)
    if (
        not (np.all(np.isfinite(M.real)) and np.all(np.isfinite(M.imag)))
        or herm_defect(M) > 0.1
        or abs(np.trace(M) - 1.0) > 0.1
    ):
        raise DivergenceError(
            f"state left the repairable region at step {step}", step=step, path=path
        )
    H = 0.5 * (M + dagger(M))
    w, V = np.linalg.eigh(H)
    w_clipped = np.clip(w, 0.0, None)
    tr = w_clipped.sum()
    if tr <= 0.0:
        raise DivergenceError(
            f"state collapsed to zero trace at step {step}", step=step, path=path
        )
    rho = (V * (w_clipped / tr)) @ dagger(V)
    return rho, float(frobenius(rho - M))


def project_to_state_batch(M, step=None):
    """Vectorized 2x2 ``project_to_state`` for ensemble integrators.

    Uses the closed-form 2x2 spectral decomposition; the negative
    eigenvalue (if any) is removed via the resolvent identity
    P_- = (rho - lam_+ I)/(lam_- - lam_+).  Returns the repaired batch
    and per-path repair magnitudes.
    """
    finite = np.all(np.isfinite(M.real) & np.isfinite(M.imag), axis=(-2, -1))
    if not np.all(finite):
        bad = int(np.argmin(finite))
        raise DivergenceError(
            f"non-finite state at step {step}", step=step, path=bad
        )
    H = 0.5 * (M + dagger(M))
    if np.max(frobenius(H - M)) > 0.1:
        bad = int(np.argmax(frobenius(H - M)))
        raise DivergenceError(
            f"state left the repairable region at step {step}", step=step, path=bad
        )
    tr = H[..., 0, 0].real + H[..., 1, 1].real
    if np.max(np.abs(tr - 1.0)) > 0.1:
        bad = int(np.argmax(np.abs(tr - 1.0)))
        raise DivergenceError(
            f"trace drifted beyond repair at step {step}", step=step, path=bad
        )
    # eigenvalues of a 2x2 Hermitian matrix
    half_tr = 0.5 * tr
    det = (H[..., 0, 0].real * H[..., 1, 1].real) - np.abs(H[..., 0, 1]) ** 2
    gap = np.sqrt(np.maximum(half_tr**2 - det, 0.0))
    lam_minus = half_tr - gap
    lam_plus = half_tr + gap
    out = H.copy()
    needs_clip = lam_minus < 0.0
    if np.any(needs_clip):
        idx = np.nonzero(needs_clip)
        sub = H[idx]
        lp = lam_plus[idx]
        lm = lam_minus[idx]
        eye = np.eye(2, dtype=complex)
        p_minus = (sub - lp[..., None, None] * eye) / (lm - lp)[..., None, None]
        out[idx] = sub - lm[..., None, None] * p_minus
    new_tr = out[..., 0, 0].real + out[..., 1, 1].real
    out = out / new_tr[..., None, None]
    repair = frobenius(out - M)
    return out, repair
