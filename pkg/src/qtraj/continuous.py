"""Integrators for the continuous-time limit equations.

With coupling C, free Hamiltonian H0 and ground-state weight p, the
measurement-free limit is the heat-bath Lindblad equation

    d rho = Lp(rho) dt,
    Lp(rho) = p   (-i[H0,rho] - 1/2 {C†C, rho} + C rho C†)
            + (1-p)(-i[H0,rho] - 1/2 {CC†, rho} + C† rho C).

Measured limits implemented here:

* two-noise diffusive (before & after, non-diagonal B):
      d rho = Lp dt + Q(rho) dW1 + W(rho) dW2,
      Q = q1 (C rho + rho C† - Tr[rho(C+C†)] rho),
      W = q2 (C† rho + rho C - Tr[rho(C†+C)] rho).
  Default magnitudes q1 = sqrt(p), q2 = sqrt(1-p) — the unique ones
  under which the equation preserves pure states and is unraveled by
  the stochastic Schrödinger equation (see the unraveling module); the
  ensemble mean solves the Lindblad equation for any magnitudes, and
  convention="display" selects q1 = sqrt(1-(1-p)^2), q2 = sqrt(1-p^2)
  for comparison.

* one-noise diffusive (after only, non-diagonal B):
      d rho = Lp dt + G(rho) dW,
      G = -(p(C rho + rho C†) + (1-p)(C† rho + rho C))
          + Tr[p(C rho + rho C†) + (1-p)(C† rho + rho C)] rho.

* two-counting-process jump (before & after, diagonal B): between
  jumps the state follows d rho = T(rho) dt with

      T(rho) = Lp(rho) + p(-C rho C† + Tr[C rho C†] rho)
                       + (1-p)(-C† rho C + Tr[C† rho C] rho),

  and jumps replace rho by C rho C†/Tr (emission, intensity
  p Tr[C rho C†]) or C† rho C/Tr (absorption, intensity
  (1-p) Tr[C† rho C]).  Jumps are realized by thinning two independent
  uniform streams against the instantaneous intensities; the drift is
  advanced exactly, rho -> e^{G dt} rho e^{G† dt}/Tr with the constant
  G = -iH0 - p C†C/2 - (1-p) CC†/2, which solves the T-ODE in closed
  form (so between-jump segments are exact, not Euler).

Schemes: "euler_maruyama" adds the plain increment and (by default)
repairs the state each step; "exponential" conjugates by the 2x2
stochastic exponential e^M, M = (D - A²/2 - B²/2)dt + A dW1 + B dW2,
which is positivity-preserving and pathwise-identical to the
unraveling for pure initial states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import DivergenceError, dagger, expm2, project_to_state_batch
from .ensembles import (
    DEFAULT_CHUNK,
    CheckpointRecorder,
    checkpoint_steps,
    chunk_ranges,
)

SCHEMES = ("euler_maruyama", "exponential", "rk4_ode")
CONVENTIONS = ("unraveling", "display")


@dataclass(frozen=True)
class SdeConfig:
    """Step size, horizon, seed and scheme of one integration run."""

    dt: float
    T: float
    seed: int = 0
    renormalize: bool = True
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        if not (0.0 < self.dt <= self.T):
            raise ValueError("need 0 < dt <= T")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def steps(self):
        return int(round(self.T / self.dt))


def _tr(M):
    return np.trace(M, axis1=-2, axis2=-1)


def lindblad_rhs(rho, params):
    """Lp(rho); traceless and Hermiticity-preserving, batch-friendly."""
    c = params.c
    cd = dagger(c)
    h0 = params.h0
    p = params.p

    def dissipator(x, xd):
        xr = x @ rho
        return xr @ xd - 0.5 * (xd @ xr + rho @ (xd @ x))

    comm = -1j * (h0 @ rho - rho @ h0)
    return p * (comm + dissipator(c, cd)) + (1.0 - p) * (comm + dissipator(cd, c))


def integrate_lindblad(rho0, params, config):
    """Classical RK4 on d rho/dt = Lp(rho); returns (times, states)."""
    steps = config.steps
    d = rho0.shape[0]
    states = np.empty((steps + 1, d, d), dtype=complex)
    states[0] = rho0
    dt = config.dt
    rho = rho0.astype(complex)
    for k in range(steps):
        k1 = lindblad_rhs(rho, params)
        k2 = lindblad_rhs(rho + 0.5 * dt * k1, params)
        k3 = lindblad_rhs(rho + 0.5 * dt * k2, params)
        k4 = lindblad_rhs(rho + dt * k3, params)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[k + 1] = rho
    return np.arange(steps + 1) * dt, states


def lindblad_fixed_point(params):
    """diag(p, 1-p), the stationary state of the dipole-type models."""
    return np.diag([params.p, 1.0 - params.p]).astype(complex)


def noise_magnitudes(p, convention="unraveling"):
    if convention == "unraveling":
        return np.sqrt(p), np.sqrt(1.0 - p)
    if convention == "display":
        return np.sqrt(1.0 - (1.0 - p) ** 2), np.sqrt(1.0 - p**2)
    raise ValueError(f"unknown convention {convention!r}")


def two_noise_operators(rho, params, convention="unraveling"):
    """The diffusion fields (Q(rho), W(rho)); both exactly traceless."""
    c = params.c
    cd = dagger(c)
    q1, q2 = noise_magnitudes(params.p, convention)
    s1 = c @ rho + rho @ cd
    s2 = cd @ rho + rho @ c
    # Tr[s1] = Tr[s2] = Tr[rho (C + C†)] for Hermitian rho
    t = _tr(s1).real[..., None, None]
    return q1 * (s1 - t * rho), q2 * (s2 - t * rho)


def diffusive_two_noise_step(rho, params, dW1, dW2, dt, convention="unraveling"):
    """Euler–Maruyama increment Lp dt + Q dW1 + W dW2 (not applied)."""
    q_op, w_op = two_noise_operators(rho, params, convention)
    if np.ndim(dW1):
        dW1 = np.asarray(dW1)[..., None, None]
        dW2 = np.asarray(dW2)[..., None, None]
    return lindblad_rhs(rho, params) * dt + q_op * dW1 + w_op * dW2


def one_noise_operator(rho, params):
    """The after-only diffusion field G(rho) of the Gibbs-model limit."""
    c = params.c
    cd = dagger(c)
    p = params.p
    s = p * (c @ rho + rho @ cd) + (1.0 - p) * (cd @ rho + rho @ c)
    return -s + _tr(s).real[..., None, None] * rho


def diffusive_one_noise_step(rho, params, dW, dt):
    """Euler–Maruyama increment Lp dt + G dW (not applied)."""
    if np.ndim(dW):
        dW = np.asarray(dW)[..., None, None]
    return lindblad_rhs(rho, params) * dt + one_noise_operator(rho, params) * dW


def _kappa_zeta(rho, params):
    kappa = _tr(params.c @ rho).real
    zeta = _tr(dagger(params.c) @ rho).real
    return kappa, zeta


def diffusive_drift_matrix(params, kappa, zeta):
    """D(kappa, zeta) = -iH0 - p(C†C - 2kC + k²)/2 - (1-p)(CC† - 2zC† + z²)/2.

    The common drift multiplier of the diffusive SSE and of the
    exponential density scheme; kappa = Re Tr[C rho] (= Re <psi, C psi>
    on pure states), zeta likewise for C†.
    """
    c = params.c
    cd = dagger(c)
    p = params.p
    k = np.asarray(kappa)[..., None, None]
    z = np.asarray(zeta)[..., None, None]
    eye = np.eye(params.dim, dtype=complex)
    out = -1j * params.h0 - 0.5 * p * (cd @ c - 2.0 * k * c + k**2 * eye)
    out = out - 0.5 * (1.0 - p) * (c @ cd - 2.0 * z * cd + z**2 * eye)
    return out


def unraveling_drift_matrix(rho, params):
    kappa, zeta = _kappa_zeta(rho, params)
    return diffusive_drift_matrix(params, kappa, zeta)


def exponential_multiplier_kz(params, kappa, zeta, dW1, dW2, dt):
    """M = (D - A²/2 - B²/2) dt + A dW1 + B dW2 with A = sqrt(p)(C-k), ...

    e^M conjugation is a weak-order-1 positivity-preserving step of the
    two-noise diffusive equation (unraveling convention only: for other
    magnitudes no drift makes the conjugation consistent), and e^M psi
    is the matching SSE step; sharing M is what makes the coupled
    projector comparison exact to rounding.
    """
    c = params.c
    cd = dagger(c)
    q1, q2 = noise_magnitudes(params.p, "unraveling")
    eye = np.eye(params.dim, dtype=complex)
    a_op = q1 * (c - np.asarray(kappa)[..., None, None] * eye)
    b_op = q2 * (cd - np.asarray(zeta)[..., None, None] * eye)
    drift = diffusive_drift_matrix(params, kappa, zeta)
    drift = drift - 0.5 * (a_op @ a_op + b_op @ b_op)
    if np.ndim(dW1):
        dW1 = np.asarray(dW1)[..., None, None]
        dW2 = np.asarray(dW2)[..., None, None]
    return drift * dt + a_op * dW1 + b_op * dW2


def exponential_multiplier(rho, params, dW1, dW2, dt):
    kappa, zeta = _kappa_zeta(rho, params)
    return exponential_multiplier_kz(params, kappa, zeta, dW1, dW2, dt)


def exponential_two_noise_step(rho, params, dW1, dW2, dt):
    """rho -> e^M rho e^M† / Tr; exact projector image of the SSE step."""
    e = expm2(exponential_multiplier(rho, params, dW1, dW2, dt))
    raw = e @ rho @ dagger(e)
    return raw / _tr(raw).real[..., None, None]


# --- two-counting-process jump family ----------------------------------


def jump_drift_generator(params):
    """G = -iH0 - p C†C/2 - (1-p) CC†/2; e^{tG}-conjugation solves the T-ODE."""
    c = params.c
    cd = dagger(c)
    return -1j * params.h0 - 0.5 * params.p * (cd @ c) - 0.5 * (1.0 - params.p) * (
        c @ cd
    )


def jump_drift_rhs(rho, params):
    """T(rho): the inter-jump drift of the two-counting SDE."""
    c = params.c
    cd = dagger(c)
    p = params.p
    crc = c @ rho @ cd
    cdrc = cd @ rho @ c
    t1 = _tr(crc).real[..., None, None]
    t2 = _tr(cdrc).real[..., None, None]
    return (
        lindblad_rhs(rho, params)
        + p * (t1 * rho - crc)
        + (1.0 - p) * (t2 * rho - cdrc)
    )


def jump_propagator(params, dt):
    """e^{G dt} (2x2 closed form), precomputed once per run."""
    return expm2(jump_drift_generator(params) * dt)


def jump_intensities(rho, params):
    """(p Tr[C rho C†], (1-p) Tr[C† rho C]): emission and absorption rates."""
    c = params.c
    cd = dagger(c)
    lam1 = params.p * _tr(c @ rho @ cd).real
    lam2 = (1.0 - params.p) * _tr(cd @ rho @ c).real
    return lam1, lam2


def jump_targets(rho, params):
    """Post-jump states C rho C†/Tr and C† rho C/Tr with their traces."""
    c = params.c
    cd = dagger(c)
    raw1 = c @ rho @ cd
    raw2 = cd @ rho @ c
    return raw1, _tr(raw1).real, raw2, _tr(raw2).real


class JumpDrivers:
    """Two independent seed-deterministic uniform streams for thinning.

    Per step and channel three uniforms are consumed (candidate test,
    mark, in-step time), in channel order 1 then 2; ensemble drivers
    consume the identical layout, so scalar and vectorized paths match.
    """

    def __init__(self, seed_sequence):
        if not isinstance(seed_sequence, np.random.SeedSequence):
            seed_sequence = np.random.SeedSequence(seed_sequence)
        ch1, ch2 = seed_sequence.spawn(2)
        self.gen1 = np.random.Generator(np.random.Philox(ch1))
        self.gen2 = np.random.Generator(np.random.Philox(ch2))

    def step_uniforms(self):
        return self.gen1.random(3), self.gen2.random(3)


def thinning_decision(lam1, lam2, u1, u2, dt):
    """Accept at most one jump this step; ties resolved by in-step time.

    Candidate points arrive with probability 1 - exp(-Lambda dt) where
    Lambda = 1.5 (lambda + 1) bounds the instantaneous intensity; a
    candidate is accepted iff its mark, uniform on [0, Lambda], falls
    below lambda.  Returns (+1 emission, +2 absorption, 0 none).
    """
    big1 = 1.5 * (lam1 + 1.0)
    big2 = 1.5 * (lam2 + 1.0)
    acc1 = (u1[0] < -np.expm1(-big1 * dt)) and (u1[1] * big1 < lam1)
    acc2 = (u2[0] < -np.expm1(-big2 * dt)) and (u2[1] * big2 < lam2)
    if acc1 and acc2:
        return 1 if u1[2] <= u2[2] else 2
    if acc1:
        return 1
    if acc2:
        return 2
    return 0


def jump_two_noise_step(rho, params, drivers, dt, propagator=None):
    """One thinning step of the two-counting jump SDE.

    Decision from the pre-step intensities; on acceptance the state is
    replaced by the jump target (suppressed if its trace < 1e-14),
    otherwise the exact drift propagator advances it.
    """
    if propagator is None:
        propagator = jump_propagator(params, dt)
    lam1, lam2 = jump_intensities(rho, params)
    if max(lam1, lam2) * dt > 0.1:
        raise ValueError("dt too coarse to resolve the jump intensities")
    u1, u2 = drivers.step_uniforms()
    which = thinning_decision(lam1, lam2, u1, u2, dt)
    raw1, t1, raw2, t2 = jump_targets(rho, params)
    if which == 1 and t1 >= 1e-14:
        return raw1 / t1, 1, 0
    if which == 2 and t2 >= 1e-14:
        return raw2 / t2, 0, 1
    raw = propagator @ rho @ dagger(propagator)
    return raw / _tr(raw).real, 0, 0


# --- ensemble drivers ---------------------------------------------------


def diffusive_ensemble(
    rho0,
    params,
    config,
    paths,
    checkpoints=10,
    convention="unraveling",
    family="two_noise",
    chunk=DEFAULT_CHUNK,
    time_block=256,
):
    """Ensemble of diffusive SDE paths (two_noise or one_noise family).

    Path k draws its Gaussian increments from the spawned stream k as
    (steps, n_channels) blocks.  Euler–Maruyama steps are followed by
    state repair when config.renormalize is set; the exponential scheme
    needs only trace renormalization (done inside the step).
    """
    from .ensembles import spawn_generators

    if config.scheme == "exponential" and family != "two_noise":
        raise ValueError("the exponential scheme covers the two-noise family only")
    steps = config.steps
    n_chan = 2 if family == "two_noise" else 1
    ck = checkpoint_steps(steps, checkpoints)
    recorder = CheckpointRecorder(ck, [s * config.dt for s in ck])
    sqrt_dt = np.sqrt(config.dt)
    repair_max = 0.0
    for lo, hi in chunk_ranges(paths, chunk):
        m = hi - lo
        gens = spawn_generators(config.seed, m, start=lo)
        states = np.broadcast_to(rho0, (m, 2, 2)).copy().astype(complex)
        recorder.start_chunk(m)
        step = 0
        while step < steps:
            block = min(time_block, steps - step)
            noise = np.stack(
                [g.standard_normal((block, n_chan)) for g in gens], axis=0
            )
            for k in range(block):
                dw = noise[:, k, :] * sqrt_dt
                if config.scheme == "exponential":
                    states = exponential_two_noise_step(
                        states, params, dw[:, 0], dw[:, 1], config.dt
                    )
                else:
                    if family == "two_noise":
                        inc = diffusive_two_noise_step(
                            states, params, dw[:, 0], dw[:, 1], config.dt, convention
                        )
                    else:
                        inc = diffusive_one_noise_step(
                            states, params, dw[:, 0], config.dt
                        )
                    states = states + inc
                    if config.renormalize:
                        states, rep = project_to_state_batch(states, step=step)
                        repair_max = max(repair_max, float(rep.max()))
                    elif not np.all(np.isfinite(states.real)):
                        bad = int(
                            np.argmin(
                                np.all(np.isfinite(states.real), axis=(-2, -1))
                            )
                        )
                        raise DivergenceError(
                            f"path diverged at step {step}", step=step, path=lo + bad
                        )
                step += 1
                recorder.record(step, states)
        recorder.finish_chunk()
    return recorder.result(paths, config.seed, repair_max=repair_max)


def jump_ensemble(
    rho0,
    params,
    config,
    paths,
    checkpoints=10,
    chunk=DEFAULT_CHUNK,
    time_block=128,
):
    """Ensemble of two-counting jump paths with exact inter-jump drift.

    Also accumulates the pathwise compensator integrals
    int lambda_k(rho_s) ds, whose means must match the mean jump counts
    (the intensity identity used by the acceptance tests).
    """
    from .ensembles import spawn_generators

    steps = config.steps
    dt = config.dt
    ck = checkpoint_steps(steps, checkpoints)
    recorder = CheckpointRecorder(ck, [s * dt for s in ck])
    prop = jump_propagator(params, dt)
    prop_d = dagger(prop)
    comp1 = comp2 = 0.0
    for lo, hi in chunk_ranges(paths, chunk):
        m = hi - lo
        parents = np.random.SeedSequence(config.seed).spawn(lo + m)[lo:]
        gen_pairs = [
            [np.random.Generator(np.random.Philox(c)) for c in par.spawn(2)]
            for par in parents
        ]
        states = np.broadcast_to(rho0, (m, 2, 2)).copy().astype(complex)
        n1 = np.zeros(m)
        n2 = np.zeros(m)
        int1 = np.zeros(m)
        int2 = np.zeros(m)
        recorder.start_chunk(m)
        step = 0
        while step < steps:
            block = min(time_block, steps - step)
            u_ch1 = np.stack([g1.random((block, 3)) for g1, _ in gen_pairs], axis=0)
            u_ch2 = np.stack([g2.random((block, 3)) for _, g2 in gen_pairs], axis=0)
            for k in range(block):
                lam1, lam2 = jump_intensities(states, params)
                int1 += lam1 * dt
                int2 += lam2 * dt
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
                do1 = acc1 & (~both | first_wins)
                do2 = acc2 & ~do1
                raw1, t1, raw2, t2 = jump_targets(states, params)
                do1 &= t1 >= 1e-14
                do2 &= t2 >= 1e-14
                drift = ~(do1 | do2)
                new_states = np.empty_like(states)
                if np.any(drift):
                    raw = prop @ states[drift] @ prop_d
                    new_states[drift] = raw / _tr(raw).real[..., None, None]
                if np.any(do1):
                    new_states[do1] = raw1[do1] / t1[do1, None, None]
                if np.any(do2):
                    new_states[do2] = raw2[do2] / t2[do2, None, None]
                states = new_states
                n1 += do1
                n2 += do2
                step += 1
                recorder.record(step, states)
        recorder.finish_chunk(n1, n2)
        comp1 += int1.sum()
        comp2 += int2.sum()
    return recorder.result(
        paths,
        config.seed,
        intensity1_mean=comp1 / paths,
        intensity2_mean=comp2 / paths,
    )
