"""Pure-state stochastic Schrödinger equations and wave-function averaging.

A before&after trajectory started in a pure state stays pure: with
Q_j = |theta_j><theta_j| the outcome (i, j) updates

    psi' = M_ij psi / ||M_ij psi||,   M_ij = sum_a <theta_j, e_a> L[a][i],

drawn with probability p_i ||M_ij psi||^2, and |psi'><psi'| coincides
with the density branch state.  The continuous limits inherit this:

* jump SSE: intensities p mu and (1-p) nu with mu = <psi, C†C psi>,
  nu = <psi, CC† psi>; jumps psi -> C psi/sqrt(mu) (emission) and
  psi -> C† psi/sqrt(nu) (absorption); between jumps the normalized
  flow of the linear semigroup e^{tG}, G = -iH0 - p C†C/2 - (1-p)CC†/2.
  (Equivalently d psi = [G + (p mu + (1-p) nu)/2] psi dt, the unique
  drift whose projector flow matches the density drift T and whose
  ensemble mean solves the Lindblad equation; at p = 1 it is the
  standard Monte Carlo wave-function drift.)

* diffusive SSE: d psi = D psi dt + sqrt(p) (C - kappa) psi dW1
  + sqrt(1-p) (C† - zeta) psi dW2, renormalized each step, with
  kappa = Re<psi, C psi>, zeta = Re<psi, C† psi> and the drift matrix
  D(kappa, zeta) shared with the continuous module.

Both unravel the heat-bath master equation: the projector ensemble
mean solves d E = Lp(E) dt.  The coupled runners drive the vector and
density recursions with identical noise; with the exponential scheme
the two discretizations agree to rounding, with Euler–Maruyama on the
density side the pathwise gap scales like O(sqrt(dt)) (measured in the
tests, never assumed).
"""

from __future__ import annotations

import numpy as np

from .algebra import dagger, expm2, frobenius, project_to_state_batch
from .continuous import (
    diffusive_drift_matrix,
    diffusive_two_noise_step,
    exponential_multiplier,
    exponential_multiplier_kz,
    jump_propagator,
    noise_magnitudes,
    thinning_decision,
)
from .discrete import _kraus_maps
from .ensembles import (
    DEFAULT_CHUNK,
    CheckpointRecorder,
    checkpoint_steps,
    chunk_ranges,
    spawn_generators,
)


def projector(psi):
    """|psi><psi| for a vector or batch of vectors."""
    return psi[..., :, None] * psi[..., None, :].conj()


def normalize(psi):
    return psi / np.linalg.norm(psi, axis=-1, keepdims=True)


def discrete_pure_step(psi, outcome, p, setup, blocks):
    """Apply one recorded outcome (i, j) to a pure state.

    Raises ValueError if the outcome has probability ~0 at psi (the
    Kraus image has norm below 1e-7, i.e. squared norm 1e-14).
    """
    templates = {label: kraus for label, _, kraus in _kraus_maps(p, setup, blocks)}
    kraus = templates[outcome]
    if len(kraus) != 1 or kraus[0][0] != 1.0:
        raise ValueError("pure-state update needs a rank-one branch map")
    out = kraus[0][1] @ psi
    norm = np.linalg.norm(out)
    if norm < 1e-7:
        raise ValueError(f"outcome {outcome} is impossible at this state")
    return out / norm


def pure_outcome_probabilities(psi, p, setup, blocks):
    """p_i ||M_ij psi||^2 for every branch label, in fixed label order."""
    out = []
    for label, weight, kraus in _kraus_maps(p, setup, blocks):
        if len(kraus) == 1:
            out.append((label, weight * np.linalg.norm(kraus[0][1] @ psi) ** 2))
        else:
            rho = projector(psi)
            tr = sum(
                coef * np.trace(m @ rho @ dagger(m)).real for coef, m in kraus
            )
            out.append((label, weight * tr))
    return out


def _mu_nu(psi, params):
    c = params.c
    cpsi = psi @ c.T if psi.ndim > 1 else c @ psi
    cdpsi = psi @ c.conj() if psi.ndim > 1 else dagger(c) @ psi
    mu = np.sum(np.abs(cpsi) ** 2, axis=-1)
    nu = np.sum(np.abs(cdpsi) ** 2, axis=-1)
    return mu, nu, cpsi, cdpsi


def _kappa_zeta_vec(psi, params):
    c = params.c
    kappa = np.einsum("...i,ij,...j->...", psi.conj(), c, psi).real
    zeta = np.einsum("...i,ij,...j->...", psi.conj(), dagger(c), psi).real
    return kappa, zeta


def sse_jump_step(psi, params, drivers, dt, propagator=None):
    """One thinning step of the jump SSE; returns (psi', dN1, dN2)."""
    if propagator is None:
        propagator = jump_propagator(params, dt)
    mu, nu, cpsi, cdpsi = _mu_nu(psi, params)
    lam1 = params.p * mu
    lam2 = (1.0 - params.p) * nu
    u1, u2 = drivers.step_uniforms()
    which = thinning_decision(lam1, lam2, u1, u2, dt)
    if which == 1 and mu >= 1e-14:
        return cpsi / np.sqrt(mu), 1, 0
    if which == 2 and nu >= 1e-14:
        return cdpsi / np.sqrt(nu), 0, 1
    return normalize(propagator @ psi), 0, 0


def sse_diffusive_step(psi, params, dW1, dW2, dt, scheme="euler_maruyama"):
    """One diffusive SSE step, unit norm on exit.

    Euler: psi + D psi dt + q1 (C-kappa) psi dW1 + q2 (C†-zeta) psi dW2,
    renormalized.  The exponential scheme applies e^M with the shared
    stochastic-exponential multiplier instead.
    """
    kappa, zeta = _kappa_zeta_vec(psi, params)
    if scheme == "exponential":
        m = exponential_multiplier_kz(params, kappa, zeta, dW1, dW2, dt)
        if psi.ndim > 1:
            return normalize(np.einsum("pij,pj->pi", expm2(m), psi))
        return normalize(expm2(m) @ psi)
    c = params.c
    cd = dagger(c)
    q1, q2 = noise_magnitudes(params.p, "unraveling")
    drift = diffusive_drift_matrix(params, kappa, zeta)
    if psi.ndim > 1:
        dpsi = np.einsum("pij,pj->pi", drift, psi) * dt
        k = kappa[:, None]
        z = zeta[:, None]
        dpsi += (psi @ c.T - k * psi) * (q1 * np.asarray(dW1)[:, None])
        dpsi += (psi @ cd.T - z * psi) * (q2 * np.asarray(dW2)[:, None])
    else:
        dpsi = drift @ psi * dt
        dpsi += q1 * dW1 * (c @ psi - kappa * psi)
        dpsi += q2 * dW2 * (cd @ psi - zeta * psi)
    return normalize(psi + dpsi)


def mc_wavefunction_mean(psi_paths):
    """Mean projector path and entrywise standard errors.

    ``psi_paths`` has shape (paths, T+1, d); needs at least 2 paths.
    The standard error combines the real and imaginary spreads
    entrywise: sqrt(se_re^2 + se_im^2).
    """
    psi_paths = np.asarray(psi_paths)
    n = psi_paths.shape[0]
    if n < 2:
        raise ValueError("need at least 2 paths to average")
    projs = projector(psi_paths)
    mean = projs.mean(axis=0)
    var_re = projs.real.var(axis=0, ddof=1) / n
    var_im = projs.imag.var(axis=0, ddof=1) / n
    return mean, np.sqrt(var_re + var_im)


# --- ensembles ----------------------------------------------------------


def sse_diffusive_ensemble(
    psi0,
    params,
    config,
    paths,
    checkpoints=10,
    chunk=DEFAULT_CHUNK,
    time_block=256,
):
    """Diffusive SSE ensemble; Bloch moments of the projector path."""
    steps = config.steps
    ck = checkpoint_steps(steps, checkpoints)
    recorder = CheckpointRecorder(ck, [s * config.dt for s in ck])
    sqrt_dt = np.sqrt(config.dt)
    scheme = config.scheme if config.scheme != "rk4_ode" else "euler_maruyama"
    for lo, hi in chunk_ranges(paths, chunk):
        m = hi - lo
        gens = spawn_generators(config.seed, m, start=lo)
        psis = np.broadcast_to(psi0, (m, 2)).copy().astype(complex)
        recorder.start_chunk(m)
        step = 0
        while step < steps:
            block = min(time_block, steps - step)
            noise = np.stack([g.standard_normal((block, 2)) for g in gens], axis=0)
            for k in range(block):
                dw = noise[:, k, :] * sqrt_dt
                psis = sse_diffusive_step(
                    psis, params, dw[:, 0], dw[:, 1], config.dt, scheme
                )
                step += 1
                recorder.record(step, projector(psis))
        recorder.finish_chunk()
    return recorder.result(paths, config.seed)


def sse_jump_ensemble(
    psi0,
    params,
    config,
    paths,
    checkpoints=10,
    chunk=DEFAULT_CHUNK,
    time_block=128,
):
    """Jump SSE ensemble; exact inter-jump drift, shared thinning layout."""
    steps = config.steps
    dt = config.dt
    ck = checkpoint_steps(steps, checkpoints)
    recorder = CheckpointRecorder(ck, [s * dt for s in ck])
    prop = jump_propagator(params, dt)
    for lo, hi in chunk_ranges(paths, chunk):
        m = hi - lo
        parents = np.random.SeedSequence(config.seed).spawn(lo + m)[lo:]
        gen_pairs = [
            [np.random.Generator(np.random.Philox(c)) for c in par.spawn(2)]
            for par in parents
        ]
        psis = np.broadcast_to(psi0, (m, 2)).copy().astype(complex)
        n1 = np.zeros(m)
        n2 = np.zeros(m)
        recorder.start_chunk(m)
        step = 0
        while step < steps:
            block = min(time_block, steps - step)
            u_ch1 = np.stack([g1.random((block, 3)) for g1, _ in gen_pairs], axis=0)
            u_ch2 = np.stack([g2.random((block, 3)) for _, g2 in gen_pairs], axis=0)
            for k in range(block):
                mu, nu, cpsi, cdpsi = _mu_nu(psis, params)
                lam1 = params.p * mu
                lam2 = (1.0 - params.p) * nu
                big1 = 1.5 * (lam1 + 1.0)
                big2 = 1.5 * (lam2 + 1.0)
                acc1 = (u_ch1[:, k, 0] < -np.expm1(-big1 * dt)) & (
                    u_ch1[:, k, 1] * big1 < lam1
                )
                acc2 = (u_ch2[:, k, 0] < -np.expm1(-big2 * dt)) & (
                    u_ch2[:, k, 1] * big2 < lam2
                )
                both = acc1 & acc2
                first_wins = u_ch1[:, k, 2] <= u_ch2[:, k, 2]
                do1 = acc1 & (~both | first_wins) & (mu >= 1e-14)
                do2 = acc2 & ~(acc1 & (~both | first_wins)) & (nu >= 1e-14)
                drift = ~(do1 | do2)
                new = np.empty_like(psis)
                if np.any(drift):
                    new[drift] = normalize(psis[drift] @ prop.T)
                if np.any(do1):
                    new[do1] = cpsi[do1] / np.sqrt(mu[do1])[:, None]
                if np.any(do2):
                    new[do2] = cdpsi[do2] / np.sqrt(nu[do2])[:, None]
                psis = new
                n1 += do1
                n2 += do2
                step += 1
                recorder.record(step, projector(psis))
        recorder.finish_chunk(n1, n2)
    return recorder.result(paths, config.seed)


# --- coupled vector/density runners -------------------------------------


def coupled_diffusive_gap(
    psi0,
    params,
    dt,
    T,
    seed,
    paths=100,
    scheme="exponential",
    chunk=DEFAULT_CHUNK,
    time_block=256,
):
    """Drive SSE and density SDE with identical noise; sup projector gap.

    Also returns the largest purity defect |Tr[(|psi><psi|)^2] - 1|
    along the vector paths.  The density route never sees a state
    vector: it runs its own matrix recursion from projector(psi0).
    """
    steps = int(round(T / dt))
    sqrt_dt = np.sqrt(dt)
    max_gap = 0.0
    max_purity_defect = 0.0
    for lo, hi in chunk_ranges(paths, chunk):
        m = hi - lo
        gens = spawn_generators(seed, m, start=lo)
        psis = np.broadcast_to(psi0, (m, 2)).copy().astype(complex)
        rhos = np.broadcast_to(projector(psi0), (m, 2, 2)).copy().astype(complex)
        step = 0
        while step < steps:
            block = min(time_block, steps - step)
            noise = np.stack([g.standard_normal((block, 2)) for g in gens], axis=0)
            for k in range(block):
                dw1 = noise[:, k, 0] * sqrt_dt
                dw2 = noise[:, k, 1] * sqrt_dt
                psis = sse_diffusive_step(psis, params, dw1, dw2, dt, scheme)
                if scheme == "exponential":
                    e = expm2(exponential_multiplier(rhos, params, dw1, dw2, dt))
                    raw = e @ rhos @ dagger(e)
                    tr = np.trace(raw, axis1=-2, axis2=-1).real
                    rhos = raw / tr[:, None, None]
                else:
                    rhos = rhos + diffusive_two_noise_step(
                        rhos, params, dw1, dw2, dt, "unraveling"
                    )
                    rhos, _ = project_to_state_batch(rhos, step=step)
                projs = projector(psis)
                max_gap = max(max_gap, float(frobenius(projs - rhos).max()))
                purity = np.einsum("pij,pji->p", projs, projs).real
                max_purity_defect = max(
                    max_purity_defect, float(np.abs(purity - 1.0).max())
                )
                step += 1
    return {"max_gap": max_gap, "max_purity_defect": max_purity_defect}


def coupled_jump_gap(
    psi0,
    params,
    dt,
    T,
    seed,
    paths=100,
    chunk=DEFAULT_CHUNK,
    time_block=128,
):
    """Jump SSE vs jump SDE under identical thinning streams.

    Both recursions take their accept decisions from their own state's
    intensities; with exact inter-jump drift the projector gap stays at
    rounding level.  Returns the sup gap, the sup purity defect, the
    total counts of each side, and where recorded jumps landed.
    """
    from .continuous import jump_intensities, jump_targets

    steps = int(round(T / dt))
    prop = jump_propagator(params, dt)
    prop_d = dagger(prop)
    max_gap = 0.0
    max_purity_defect = 0.0
    counts_vec = np.zeros(2)
    counts_den = np.zeros(2)
    landing_defect = 0.0
    ground = np.diag([1.0, 0.0]).astype(complex)
    excited = np.diag([0.0, 1.0]).astype(complex)
    for lo, hi in chunk_ranges(paths, chunk):
        m = hi - lo
        parents = np.random.SeedSequence(seed).spawn(lo + m)[lo:]
        gen_pairs = [
            [np.random.Generator(np.random.Philox(c)) for c in par.spawn(2)]
            for par in parents
        ]
        psis = np.broadcast_to(psi0, (m, 2)).copy().astype(complex)
        rhos = np.broadcast_to(projector(psi0), (m, 2, 2)).copy().astype(complex)
        step = 0
        while step < steps:
            block = min(time_block, steps - step)
            u_ch1 = np.stack([g1.random((block, 3)) for g1, _ in gen_pairs], axis=0)
            u_ch2 = np.stack([g2.random((block, 3)) for _, g2 in gen_pairs], axis=0)
            for k in range(block):
                # vector side
                mu, nu, cpsi, cdpsi = _mu_nu(psis, params)
                lam1v = params.p * mu
                lam2v = (1.0 - params.p) * nu
                do1v, do2v = _thin_masks(
                    lam1v, lam2v, u_ch1[:, k], u_ch2[:, k], dt, mu, nu
                )
                new_psi = np.empty_like(psis)
                driftv = ~(do1v | do2v)
                if np.any(driftv):
                    new_psi[driftv] = normalize(psis[driftv] @ prop.T)
                if np.any(do1v):
                    new_psi[do1v] = cpsi[do1v] / np.sqrt(mu[do1v])[:, None]
                if np.any(do2v):
                    new_psi[do2v] = cdpsi[do2v] / np.sqrt(nu[do2v])[:, None]
                psis = new_psi
                counts_vec += [do1v.sum(), do2v.sum()]
                # density side (independent recursion)
                lam1d, lam2d = jump_intensities(rhos, params)
                raw1, t1, raw2, t2 = jump_targets(rhos, params)
                do1d, do2d = _thin_masks(
                    lam1d, lam2d, u_ch1[:, k], u_ch2[:, k], dt, t1, t2
                )
                new_rho = np.empty_like(rhos)
                driftd = ~(do1d | do2d)
                if np.any(driftd):
                    raw = prop @ rhos[driftd] @ prop_d
                    tr = np.trace(raw, axis1=-2, axis2=-1).real
                    new_rho[driftd] = raw / tr[:, None, None]
                if np.any(do1d):
                    new_rho[do1d] = raw1[do1d] / t1[do1d, None, None]
                    landing_defect = max(
                        landing_defect,
                        float(frobenius(new_rho[do1d] - ground).max()),
                    )
                if np.any(do2d):
                    new_rho[do2d] = raw2[do2d] / t2[do2d, None, None]
                    landing_defect = max(
                        landing_defect,
                        float(frobenius(new_rho[do2d] - excited).max()),
                    )
                rhos = new_rho
                counts_den += [do1d.sum(), do2d.sum()]
                projs = projector(psis)
                max_gap = max(max_gap, float(frobenius(projs - rhos).max()))
                purity = np.einsum("pij,pji->p", projs, projs).real
                max_purity_defect = max(
                    max_purity_defect, float(np.abs(purity - 1.0).max())
                )
                step += 1
    return {
        "max_gap": max_gap,
        "max_purity_defect": max_purity_defect,
        "counts_vector": counts_vec,
        "counts_density": counts_den,
        "dipole_landing_defect": landing_defect,
    }


def _thin_masks(lam1, lam2, u1, u2, dt, tr1, tr2):
    """Vectorized thinning_decision, suppressing zero-trace targets."""
    big1 = 1.5 * (lam1 + 1.0)
    big2 = 1.5 * (lam2 + 1.0)
    acc1 = (u1[:, 0] < -np.expm1(-big1 * dt)) & (u1[:, 1] * big1 < lam1)
    acc2 = (u2[:, 0] < -np.expm1(-big2 * dt)) & (u2[:, 1] * big2 < lam2)
    both = acc1 & acc2
    first_wins = u1[:, 2] <= u2[:, 2]
    do1 = acc1 & (~both | first_wins) & (tr1 >= 1e-14)
    do2 = acc2 & ~(acc1 & (~both | first_wins)) & (tr2 >= 1e-14)
    return do1, do2
