"""Seeded, chunked Monte Carlo ensembles.

Per-path randomness comes from ``SeedSequence(master).spawn(paths)``:
path k always sees the same Philox stream no matter how paths are
chunked or interleaved, so every ensemble statistic is reproducible
from (seed, paths) alone.  Paths advance in vectorized chunks of a few
thousand states to keep the per-step work in numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import bloch_vector

DEFAULT_CHUNK = 8192


def spawn_generators(seed, n_paths, start=0):
    """Philox generators for paths [start, start+n_paths)."""
    children = np.random.SeedSequence(seed).spawn(start + n_paths)[start:]
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def path_generator(seed, index):
    """The stream of a single path, identical to its ensemble slot."""
    return spawn_generators(seed, 1, start=index)[0]


def chunk_ranges(n_paths, chunk=DEFAULT_CHUNK):
    for lo in range(0, n_paths, chunk):
        yield lo, min(lo + chunk, n_paths)


@dataclass
class MomentAccumulator:
    """Streaming mean / standard-error over paths for vector observables."""

    shape: tuple
    count: int = 0
    _sum: np.ndarray = field(init=False)
    _sumsq: np.ndarray = field(init=False)

    def __post_init__(self):
        self._sum = np.zeros(self.shape)
        self._sumsq = np.zeros(self.shape)

    def add(self, values):
        values = np.asarray(values, dtype=float)
        self.count += values.shape[0]
        self._sum += values.sum(axis=0)
        self._sumsq += (values**2).sum(axis=0)

    @property
    def mean(self):
        return self._sum / self.count

    @property
    def stderr(self):
        m = self.mean
        var = np.maximum(self._sumsq / self.count - m**2, 0.0)
        if self.count > 1:
            var *= self.count / (self.count - 1.0)
        return np.sqrt(var / self.count)


@dataclass
class EnsembleResult:
    """Checkpointed ensemble statistics of a trajectory family.

    ``mean_bloch``/``stderr_bloch`` have shape (len(times), 3); the
    jump counters are final-time totals.  ``repair_max`` is the largest
    state repair any path needed (0 where no repair runs).
    """

    times: np.ndarray
    mean_bloch: np.ndarray
    stderr_bloch: np.ndarray
    paths: int
    seed: int
    n1_mean: float = 0.0
    n1_stderr: float = 0.0
    n2_mean: float = 0.0
    n2_stderr: float = 0.0
    repair_max: float = 0.0
    intensity1_mean: float = 0.0
    intensity2_mean: float = 0.0

    def summary_dict(self):
        return {
            "times": [float(t) for t in self.times],
            "mean_bloch": [[float(v) for v in row] for row in self.mean_bloch],
            "stderr_bloch": [[float(v) for v in row] for row in self.stderr_bloch],
            "paths": self.paths,
            "seed": self.seed,
            "jump_counts": {
                "N1_mean": float(self.n1_mean),
                "N1_stderr": float(self.n1_stderr),
                "N2_mean": float(self.n2_mean),
                "N2_stderr": float(self.n2_stderr),
            },
            "repair_max": float(self.repair_max),
        }


class CheckpointRecorder:
    """Collects Bloch moments at fixed step indices plus final counters."""

    def __init__(self, checkpoint_steps, times):
        self.steps = list(checkpoint_steps)
        self.times = np.asarray(times, dtype=float)
        self.bloch = MomentAccumulator((len(self.steps), 3))
        self.counts = MomentAccumulator((2,))
        self._lookup = {s: i for i, s in enumerate(self.steps)}

    def wants(self, step):
        return step in self._lookup

    def start_chunk(self, n_paths):
        self._chunk = np.zeros((n_paths, len(self.steps), 3))

    def record(self, step, states):
        idx = self._lookup.get(step)
        if idx is not None:
            self._chunk[:, idx, :] = bloch_vector(states)

    def finish_chunk(self, n1=None, n2=None):
        self.bloch.add(self._chunk)
        if n1 is not None:
            self.counts.add(np.stack([n1, n2], axis=-1))

    def result(self, paths, seed, repair_max=0.0, **extra):
        n1m, n2m = (self.counts.mean if self.counts.count else (0.0, 0.0))
        n1s, n2s = (self.counts.stderr if self.counts.count else (0.0, 0.0))
        return EnsembleResult(
            times=self.times,
            mean_bloch=self.bloch.mean,
            stderr_bloch=self.bloch.stderr,
            paths=paths,
            seed=seed,
            n1_mean=float(n1m),
            n1_stderr=float(n1s),
            n2_mean=float(n2m),
            n2_stderr=float(n2s),
            repair_max=repair_max,
            **extra,
        )


def checkpoint_steps(n_steps, how_many):
    """``how_many`` evenly spaced step indices ending at n_steps."""
    if how_many >= n_steps:
        return list(range(1, n_steps + 1))
    return [round(k * n_steps / how_many) for k in range(1, how_many + 1)]
