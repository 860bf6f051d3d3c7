"""Discrete quantum trajectories for the four measurement setups.

One interaction round with environment weight p splits into labelled
branches (i = outcome measured on the fresh environment unit before
the interaction, j = outcome measured after):

    no measurement   one branch,  L(rho) = p (L00 rho L00† + L10 rho L10†)
                                   + (1-p)(L01 rho L01† + L11 rho L11†)
    before only      R_i(rho) = sum_a L[a][i] rho L[a][i]†,
                     probabilities p, 1-p (trace preserving)
    after only       F_j(rho) = p G_0j(rho) + (1-p) G_1j(rho),
                     probabilities Tr F_j(rho)
    before & after   G_ij(rho) = M_ij rho M_ij†,
                     probabilities p_i Tr G_ij(rho)

with M_ij = sum_a <theta_j, e_a> L[a][i] for the rank-1 projectors
Q_j = |theta_j><theta_j| of the after-observable.  All maps are held as
weighted Kraus lists, so every probability and post-state is exact; the
sampler just draws from the resulting finite distribution.

Branches are always ordered lexicographically in (i, j); the sampler
accumulates probabilities in that fixed order, so a path is a pure
function of (seed, initial state).

Recorded noises (all centered by construction, before/before-after
setups; T_ij = Tr G_ij at the pre-step state):

    X    = (1_{i=1} - (1-p)) / sqrt(p(1-p))
    Y0   = (1_{(0,1)} - p T_01) / sqrt(p T_01 (1 - p T_01))
    Y1   = (1_{(1,0)} - (1-p) T_10) / sqrt((1-p) T_10 (1 - (1-p) T_10))

Degenerate normalizations (variance factor < 1e-14, e.g. p in {0,1})
are recorded as 0 and flagged.  With a diagonal after-observable the
branch (0,1) is an emission (counter N1), (1,0) an absorption (N2); a
single step can never record both.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .algebra import dagger
from .ensembles import (
    DEFAULT_CHUNK,
    CheckpointRecorder,
    checkpoint_steps,
    chunk_ranges,
    spawn_generators,
)
from .model import Observable

PROB_FLOOR = 1e-14
VAR_FLOOR = 1e-14

KIND_NONE = "none"
KIND_BEFORE = "before"
KIND_AFTER = "after"
KIND_BEFORE_AFTER = "before_after"
KINDS = (KIND_NONE, KIND_BEFORE, KIND_AFTER, KIND_BEFORE_AFTER)

EVENT_CONTINUOUS = "continuous"
EVENT_EMISSION = "emission"
EVENT_ABSORPTION = "absorption"


@dataclass(frozen=True)
class MeasurementSetup:
    """Which of the four experiments runs, and with which after-observable.

    The environment weight p lives on ModelParams; it is passed to the
    branch machinery alongside the setup.
    """

    kind: str
    observable: Observable | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown setup kind {self.kind!r}")
        needs_b = self.kind in (KIND_AFTER, KIND_BEFORE_AFTER)
        if needs_b and self.observable is None:
            raise ValueError(f"setup {self.kind!r} needs an observable")

    @property
    def measures_before(self):
        return self.kind in (KIND_BEFORE, KIND_BEFORE_AFTER)

    @property
    def measures_after(self):
        return self.kind in (KIND_AFTER, KIND_BEFORE_AFTER)


def no_measurement():
    return MeasurementSetup(kind=KIND_NONE)


def before_only():
    return MeasurementSetup(kind=KIND_BEFORE)


def after_only(observable):
    return MeasurementSetup(kind=KIND_AFTER, observable=observable)


def before_after(observable):
    return MeasurementSetup(kind=KIND_BEFORE_AFTER, observable=observable)


def projector_vector(q):
    """Unit vector theta with Q = |theta><theta| for a rank-1 projector."""
    w, v = np.linalg.eigh(q)
    return v[:, int(np.argmax(w))]


def kraus_vertex(blocks, theta, i):
    """M = sum_a conj(theta_a) L[a][i]: the Kraus factor of G_i,theta."""
    return sum(np.conj(theta[a]) * blocks[a, i] for a in range(2))


@dataclass(frozen=True)
class Branch:
    """One labelled outcome: rho -> sum_k coef_k M_k rho M_k† (unnormalized).

    ``label`` is (before, after) with None for an unmeasured side;
    ``trace`` is Tr[map(rho)] at the state the branch set was built at,
    and ``probability`` = weight * trace.
    """

    label: tuple
    weight: float
    kraus: tuple  # of (coef, matrix) pairs
    trace: float
    probability: float

    def apply(self, rho):
        out = np.zeros_like(rho)
        for coef, m in self.kraus:
            out += coef * (m @ rho @ dagger(m))
        return out


def _kraus_maps(p, setup, blocks):
    """(label, weight, kraus list) for each branch, in fixed label order."""
    L = blocks.L
    if setup.kind == KIND_NONE:
        kraus = (
            (p, L[0, 0]),
            (p, L[1, 0]),
            (1.0 - p, L[0, 1]),
            (1.0 - p, L[1, 1]),
        )
        return [((None, None), 1.0, kraus)]
    if setup.kind == KIND_BEFORE:
        return [
            ((i, None), p if i == 0 else 1.0 - p, ((1.0, L[0, i]), (1.0, L[1, i])))
            for i in range(2)
        ]
    thetas = [projector_vector(q) for q in setup.observable.projectors]
    vertices = {
        (i, j): kraus_vertex(blocks, thetas[j], i) for i in range(2) for j in range(2)
    }
    if setup.kind == KIND_AFTER:
        return [
            (
                (None, j),
                1.0,
                ((p, vertices[(0, j)]), (1.0 - p, vertices[(1, j)])),
            )
            for j in range(2)
        ]
    return [
        ((i, j), p if i == 0 else 1.0 - p, ((1.0, vertices[(i, j)]),))
        for i in range(2)
        for j in range(2)
    ]


def _branches_from_templates(rho, templates):
    out = []
    for label, weight, kraus in templates:
        tr = 0.0
        for coef, m in kraus:
            tr += coef * np.trace(m @ rho @ dagger(m)).real
        out.append(
            Branch(
                label=label,
                weight=weight,
                kraus=kraus,
                trace=tr,
                probability=weight * tr,
            )
        )
    return out


def branch_set(rho, p, setup, blocks):
    """The complete outcome decomposition of one step at state rho.

    Probabilities sum to 1 exactly (up to rounding) for every setup.
    """
    return _branches_from_templates(rho, _kraus_maps(p, setup, blocks))


def step_distribution(rho, p, setup, blocks):
    """Exact one-step law: list of (probability, normalized state, label).

    Branches with probability below 1e-14 keep the pre-step state as a
    placeholder (their normalization would be 0/0); they are never
    sampled.  This is the enumeration oracle used throughout testing.
    """
    out = []
    for br in branch_set(rho, p, setup, blocks):
        if br.probability < PROB_FLOOR:
            out.append((max(br.probability, 0.0), rho, br.label))
        else:
            raw = br.apply(rho)
            out.append((br.probability, raw / np.trace(raw).real, br.label))
    return out


def deterministic_master_step(rho, blocks, p):
    """The measurement-free channel L(rho); trace preserving, CP."""
    L = blocks.L
    return p * (
        L[0, 0] @ rho @ dagger(L[0, 0]) + L[1, 0] @ rho @ dagger(L[1, 0])
    ) + (1.0 - p) * (
        L[0, 1] @ rho @ dagger(L[0, 1]) + L[1, 1] @ rho @ dagger(L[1, 1])
    )


def sample_step(rho, p, setup, blocks, rng):
    """Draw one branch by inverse CDF (fixed lexicographic order)."""
    dist = step_distribution(rho, p, setup, blocks)
    u = rng.random()
    acc = 0.0
    for prob, state, label in dist:
        acc += prob
        if u < acc:
            return state, label
    return dist[-1][1], dist[-1][2]


def classify_event(label, setup):
    """Table-2 event class; only meaningful for before&after, diagonal B."""
    if (
        setup.kind == KIND_BEFORE_AFTER
        and setup.observable is not None
        and setup.observable.is_diagonal()
    ):
        if label == (0, 1):
            return EVENT_EMISSION
        if label == (1, 0):
            return EVENT_ABSORPTION
    return EVENT_CONTINUOUS


@dataclass
class TrajectoryRecord:
    """A sampled path: states, outcome labels, centered noises, counters.

    ``times[k]`` is k/n for chain records and k*dt for SDE records.
    Row k of the CSV carries state k together with the outcome, noises
    and event that produced it (blank at k = 0).
    """

    times: np.ndarray
    states: np.ndarray  # (K+1, d, d) complex
    outcomes: list
    X: np.ndarray
    Y0: np.ndarray
    Y1: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    events: list
    n: int | None = None
    dt: float | None = None
    x_degenerate: np.ndarray | None = None
    y0_degenerate: np.ndarray | None = None
    y1_degenerate: np.ndarray | None = None
    repairs: np.ndarray | None = None

    @property
    def steps(self):
        return len(self.states) - 1

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                [
                    "k",
                    "t",
                    "rho00_re",
                    "rho00_im",
                    "rho01_re",
                    "rho01_im",
                    "rho10_re",
                    "rho10_im",
                    "rho11_re",
                    "rho11_im",
                    "outcome_before",
                    "outcome_after",
                    "X",
                    "Y0",
                    "Y1",
                    "N1",
                    "N2",
                    "event",
                ]
            )
            for k in range(len(self.states)):
                s = self.states[k]
                row = [k, repr(float(self.times[k]))]
                for idx in ((0, 0), (0, 1), (1, 0), (1, 1)):
                    row += [repr(float(s[idx].real)), repr(float(s[idx].imag))]
                if k == 0:
                    row += ["", "", "", "", "", 0, 0, ""]
                else:
                    i, j = self.outcomes[k - 1]
                    row += [
                        "" if i is None else i,
                        "" if j is None else j,
                        repr(float(self.X[k - 1])),
                        repr(float(self.Y0[k - 1])),
                        repr(float(self.Y1[k - 1])),
                        int(self.N1[k]),
                        int(self.N2[k]),
                        self.events[k - 1],
                    ]
                w.writerow(row)


def _noise_x(label, p, setup, branches):
    """Centered before-noise (or after-only noise); (value, degenerate)."""
    if setup.kind == KIND_BEFORE_AFTER or setup.kind == KIND_BEFORE:
        var = p * (1.0 - p)
        if var < VAR_FLOOR:
            return 0.0, True
        return (float(label[0] == 1) - (1.0 - p)) / np.sqrt(var), False
    if setup.kind == KIND_AFTER:
        t0, t1 = branches[0].probability, branches[1].probability
        var = t0 * t1
        if var < VAR_FLOOR:
            return 0.0, True
        return (float(label[1] == 1) - t1) / np.sqrt(var), False
    return 0.0, False


def _noise_y(label, p, branches):
    """Centered after-noises Y0, Y1 for the before&after setup."""
    by_label = {br.label: br for br in branches}
    t01 = by_label[(0, 1)].trace
    t10 = by_label[(1, 0)].trace
    out = []
    for target, rate in (((0, 1), p * t01), ((1, 0), (1.0 - p) * t10)):
        var = rate * (1.0 - rate)
        if var < VAR_FLOOR:
            out.append((0.0, True))
        else:
            out.append(((float(label == target) - rate) / np.sqrt(var), False))
    return out


def simulate_path(rho0, p, setup, blocks, steps, rng, n=None):
    """Sample a trajectory of ``steps`` rounds from rho0.

    ``rng`` is a seeded numpy Generator consumed one uniform per step,
    so (seed, initial state) fully determines the record.  ``n``
    defaults to the blocks' rounds-per-unit-time and only sets the time
    column.
    """
    if n is None:
        n = 1
    d = rho0.shape[0]
    states = np.empty((steps + 1, d, d), dtype=complex)
    states[0] = rho0
    outcomes = []
    events = []
    X = np.zeros(steps)
    Y0 = np.zeros(steps)
    Y1 = np.zeros(steps)
    xf = np.zeros(steps, dtype=bool)
    y0f = np.zeros(steps, dtype=bool)
    y1f = np.zeros(steps, dtype=bool)
    N1 = np.zeros(steps + 1, dtype=np.int64)
    N2 = np.zeros(steps + 1, dtype=np.int64)
    rho = rho0
    templates = _kraus_maps(p, setup, blocks)
    for k in range(steps):
        branches = _branches_from_templates(rho, templates)
        u = rng.random()
        acc = 0.0
        chosen = None
        for br in branches:
            acc += max(br.probability, 0.0)
            if u < acc:
                chosen = br
                break
        if chosen is None:
            chosen = branches[-1]
        if chosen.probability < PROB_FLOOR:
            new_rho = rho
        else:
            raw = chosen.apply(rho)
            new_rho = raw / np.trace(raw).real
        X[k], xf[k] = _noise_x(chosen.label, p, setup, branches)
        if setup.kind == KIND_BEFORE_AFTER:
            (Y0[k], y0f[k]), (Y1[k], y1f[k]) = _noise_y(chosen.label, p, branches)
        event = classify_event(chosen.label, setup)
        N1[k + 1] = N1[k] + (event == EVENT_EMISSION)
        N2[k + 1] = N2[k] + (event == EVENT_ABSORPTION)
        outcomes.append(chosen.label)
        events.append(event)
        states[k + 1] = new_rho
        rho = new_rho
    return TrajectoryRecord(
        times=np.arange(steps + 1) / float(n),
        states=states,
        outcomes=outcomes,
        X=X,
        Y0=Y0,
        Y1=Y1,
        N1=N1,
        N2=N2,
        events=events,
        n=n,
        x_degenerate=xf,
        y0_degenerate=y0f,
        y1_degenerate=y1f,
    )


def _branch_probabilities(states, branch_templates):
    """(paths, branches) probabilities, states shaped (paths, 2, 2)."""
    probs = np.empty((states.shape[0], len(branch_templates)))
    for b, (_, weight, kraus) in enumerate(branch_templates):
        tr = np.zeros(states.shape[0])
        for coef, m in kraus:
            tr += coef * np.einsum(
                "ij,pjk,ki->p", m, states, dagger(m), optimize=True
            ).real
        probs[:, b] = weight * tr
    return np.maximum(probs, 0.0)


def _apply_branches(states, choice, branch_templates):
    """Normalized post-states for per-path chosen branch indices."""
    out = np.empty_like(states)
    for b, (_, _, kraus) in enumerate(branch_templates):
        mask = choice == b
        if not np.any(mask):
            continue
        sub = states[mask]
        raw = np.zeros_like(sub)
        for coef, m in kraus:
            raw += coef * np.einsum("ij,pjk,kl->pil", m, sub, dagger(m), optimize=True)
        tr = (raw[:, 0, 0] + raw[:, 1, 1]).real
        ok = tr > PROB_FLOOR
        raw[ok] /= tr[ok, None, None]
        raw[~ok] = sub[~ok]
        out[mask] = raw
    return out


def chain_ensemble(
    rho0,
    p,
    setup,
    blocks,
    steps,
    paths,
    seed,
    checkpoints=10,
    chunk=DEFAULT_CHUNK,
    time_block=256,
    n=None,
):
    """Vectorized ensemble of discrete chains; qubit system only.

    Each path consumes exactly one uniform per step from its own
    spawned stream, matching :func:`simulate_path` draw for draw, so a
    single path re-simulated with ``path_generator(seed, k)`` is
    bit-identical to ensemble slot k.  Returns checkpointed Bloch
    moments plus final emission/absorption counters (diagonal
    before&after setups).
    """
    if rho0.shape != (2, 2):
        raise ValueError("chain_ensemble is specialized to qubit systems")
    templates = _kraus_maps(p, setup, blocks)
    labels = [t[0] for t in templates]
    emit_idx = labels.index((0, 1)) if (0, 1) in labels else None
    absorb_idx = labels.index((1, 0)) if (1, 0) in labels else None
    count_events = (
        setup.kind == KIND_BEFORE_AFTER
        and setup.observable is not None
        and setup.observable.is_diagonal()
    )
    ck_steps = checkpoint_steps(steps, checkpoints)
    if n is None:
        n = 1
    recorder = CheckpointRecorder(ck_steps, [s / float(n) for s in ck_steps])
    for lo, hi in chunk_ranges(paths, chunk):
        m = hi - lo
        gens = spawn_generators(seed, m, start=lo)
        states = np.broadcast_to(rho0, (m, 2, 2)).copy()
        n1 = np.zeros(m)
        n2 = np.zeros(m)
        recorder.start_chunk(m)
        step = 0
        while step < steps:
            block = min(time_block, steps - step)
            uniforms = np.stack([g.random(block) for g in gens], axis=0)
            for k in range(block):
                probs = _branch_probabilities(states, templates)
                cum = np.cumsum(probs, axis=1)
                choice = np.sum(cum <= uniforms[:, k, None], axis=1)
                np.clip(choice, 0, len(templates) - 1, out=choice)
                states = _apply_branches(states, choice, templates)
                if count_events:
                    n1 += choice == emit_idx
                    n2 += choice == absorb_idx
                step += 1
                recorder.record(step, states)
        recorder.finish_chunk(n1 if count_events else None, n2 if count_events else None)
    return recorder.result(paths, seed)
