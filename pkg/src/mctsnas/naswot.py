"""Training-free architecture score from binary ReLU activation codes.

The kernel entry for inputs a, b is the number of ReLU units on which their
codes agree, ``N_A - hamming(c_a, c_b)``; the score is ``log|K|``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .arch import ArchState, MacroConfig, build_spec, expand
from .tensorfwd import ActivationCodes, forward, init_network

NEG_INF = float("-inf")
DET_TOL = 1e-300


@dataclass(frozen=True)
class HammingKernel:
    K: np.ndarray  # (n, n) float64, integer-valued
    n_units: int

    @property
    def n(self) -> int:
        return self.K.shape[0]


def hamming_kernel(codes: ActivationCodes | np.ndarray) -> HammingKernel:
    c = codes.codes if isinstance(codes, ActivationCodes) else np.asarray(codes)
    if c.ndim != 2 or c.shape[0] == 0:
        raise ValueError("need a non-empty (batch, N_A) code matrix")
    n_units = c.shape[1]
    # float32 dot products are exact below 2**24
    g = c.astype(np.float32 if n_units < 2 ** 24 else np.float64)
    gram = (g @ g.T).astype(np.float64)
    ones = np.diag(gram)
    # agreements = N_A - hamming = N_A - |a| - |b| + 2 a.b
    K = n_units - ones[:, None] - ones[None, :] + 2.0 * gram
    return HammingKernel(K, n_units)


def logabsdet(K: np.ndarray) -> float:
    """log|det K| via partial-pivot LU; NEG_INF when numerically singular."""
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    if n == 0 or not np.all(np.isfinite(K)):
        return NEG_INF
    with warnings.catch_warnings():
        # exact singularity is an expected outcome, handled by the sentinel below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, _ = scipy.linalg.lu_factor(K, check_finite=False)
    pivots = np.abs(np.diag(lu))
    scale = np.max(np.abs(K))
    # a pivot at rounding level means rank deficiency, even if the product of
    # the remaining pivots keeps |det| above DET_TOL
    if scale == 0 or pivots.min() <= n * np.finfo(np.float64).eps * scale:
        return NEG_INF
    value = float(np.sum(np.log(pivots)))
    if not math.isfinite(value) or value < math.log(DET_TOL):
        return NEG_INF
    return value


def naswot_score(kernel: HammingKernel | np.ndarray) -> float:
    K = kernel.K if isinstance(kernel, HammingKernel) else kernel
    return logabsdet(K)


class RewardNormalizer:
    """Running min-max map from raw scores to [0, 1]."""

    def __init__(self):
        self.min = math.inf
        self.max = -math.inf
        self.count = 0

    def update(self, raw: float) -> None:
        if not math.isfinite(raw):
            return
        self.min = min(self.min, raw)
        self.max = max(self.max, raw)
        self.count += 1

    def normalize(self, raw: float) -> float:
        if not math.isfinite(raw) or self.count == 0:
            return 0.0
        if self.max == self.min:
            return 0.5
        return min(1.0, max(0.0, (raw - self.min) / (self.max - self.min)))

    def to_dict(self) -> dict:
        if self.count == 0:
            return {"min": None, "max": None, "count": 0}
        return {"min": self.min, "max": self.max, "count": self.count}


def normalize_reward(raw: float, norm: RewardNormalizer) -> float:
    return norm.normalize(raw)


def init_seed(seed: int, decisions) -> np.random.SeedSequence:
    """Weight-init stream for a terminal state: a pure function of (seed, decisions)."""
    return np.random.SeedSequence(entropy=seed, spawn_key=(0x1417, *decisions))


@dataclass
class ScoreReport:
    raw: float
    n_units: int
    kernel: np.ndarray


class NaswotScorer:
    """Scores terminal states on a fixed minibatch.

    Results are memoized per decision sequence, which is sound because the
    initialization seed is derived from the decisions themselves.
    """

    def __init__(self, batch: np.ndarray, macro: MacroConfig | None = None, seed: int = 0):
        self.batch = np.asarray(batch, dtype=np.float32)
        self.macro = macro or MacroConfig()
        self.seed = seed
        self._cache: dict[tuple, float] = {}

    def report(self, spec, decisions=()) -> ScoreReport:
        h, w = self.batch.shape[2:]
        graph = expand(spec, (h, w))
        net = init_network(graph, seed=init_seed(self.seed, decisions))
        _, codes = forward(net, self.batch)
        kern = hamming_kernel(codes)
        return ScoreReport(naswot_score(kern), kern.n_units, kern.K)

    def __call__(self, state: ArchState) -> float:
        key = (state.extended, state.decisions)
        raw = self._cache.get(key)
        if raw is None:
            spec = build_spec(state, self.macro)
            raw = self.report(spec, state.decisions).raw
            self._cache[key] = raw
        return raw
