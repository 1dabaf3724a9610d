"""Linear process / sensor models, seeded noise streams, observability checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

# Singular values below RANK_RTOL * sigma_max count as zero in rank tests.
RANK_RTOL = 1e-9


def _as_matrix(m, name: str) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    return a


def _check_symmetric_psd(m: np.ndarray, name: str, strict: bool = False) -> None:
    if m.shape[0] != m.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-10):
        raise ConfigurationError(f"{name} must be symmetric")
    eig = np.linalg.eigvalsh(0.5 * (m + m.T))
    lo = -1e-10 * max(1.0, abs(eig[-1]))
    if strict and eig[0] <= 0:
        raise ConfigurationError(f"{name} must be positive definite (min eig {eig[0]:g})")
    if eig[0] < lo:
        raise ConfigurationError(f"{name} must be positive semidefinite (min eig {eig[0]:g})")


@dataclass
class ProcessModel:
    """Linear plant x(k+1) = A x(k) + w(k), w ~ N(0, Q), x(0) ~ N(x0_mean, P0)."""

    A: np.ndarray
    Q: np.ndarray
    x0_mean: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        self.A = _as_matrix(self.A, "A")
        self.Q = _as_matrix(self.Q, "Q")
        self.x0_mean = np.asarray(self.x0_mean, dtype=float).reshape(-1)
        self.P0 = _as_matrix(self.P0, "P0")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")
        if self.Q.shape != (n, n):
            raise ConfigurationError(f"Q shape {self.Q.shape} incompatible with n={n}")
        if self.x0_mean.shape != (n,):
            raise ConfigurationError(f"x0_mean length {self.x0_mean.shape[0]} != n={n}")
        if self.P0.shape != (n, n):
            raise ConfigurationError(f"P0 shape {self.P0.shape} incompatible with n={n}")
        _check_symmetric_psd(self.Q, "Q")
        _check_symmetric_psd(self.P0, "P0")

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass
class SensorModel:
    """Observation y_i(k) = C_i x(k) + v_i(k), v_i ~ N(0, R_i), R_i > 0."""

    C: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.C = _as_matrix(self.C, "C")
        self.R = _as_matrix(self.R, "R")
        p = self.C.shape[0]
        if self.R.shape != (p, p):
            raise ConfigurationError(f"R shape {self.R.shape} incompatible with p={p}")
        _check_symmetric_psd(self.R, "R", strict=True)

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def n(self) -> int:
        return self.C.shape[1]


# Stream-key constants for NoiseSource sub-streams.  Keyed derivation (rather
# than sequential spawning) keeps every stream stable when sensors or attack
# plans are added to a scenario.
STREAM_PROCESS = 0
STREAM_SENSOR = 1
STREAM_REFERENCE = 2
STREAM_ATTACK = 3
STREAM_INITIAL_STATE = 4


@dataclass
class NoiseSource:
    """Deterministic per-purpose random streams derived from one master seed."""

    seed: int
    _cache: dict = field(default_factory=dict, repr=False)

    def stream(self, *key: int) -> np.random.Generator:
        """Return the generator for a stream key, creating it on first use."""
        if key not in self._cache:
            self._cache[key] = np.random.default_rng(
                np.random.SeedSequence([int(self.seed), *map(int, key)])
            )
        return self._cache[key]

    def clone(self) -> "NoiseSource":
        """Fresh source with the same seed; all streams restart from scratch."""
        return NoiseSource(self.seed)

    def draw_initial_state(self, model: ProcessModel) -> np.ndarray:
        rng = self.stream(STREAM_INITIAL_STATE)
        return rng.multivariate_normal(model.x0_mean, model.P0, method="cholesky" if _is_pd(model.P0) else "svd")

    def draw_process_noise(self, model: ProcessModel) -> np.ndarray:
        rng = self.stream(STREAM_PROCESS)
        return rng.multivariate_normal(np.zeros(model.n), model.Q, method="cholesky" if _is_pd(model.Q) else "svd")

    def draw_measurement_noise(self, sensor: SensorModel, node: int) -> np.ndarray:
        rng = self.stream(STREAM_SENSOR, node)
        return rng.multivariate_normal(np.zeros(sensor.p), sensor.R, method="cholesky")


def _is_pd(m: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(m)
        return True
    except np.linalg.LinAlgError:
        return False


def step_process(model: ProcessModel, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One plant step: A @ x + w."""
    x = np.asarray(x, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if x.shape != (model.n,) or w.shape != (model.n,):
        raise ConfigurationError(
            f"state/noise dimension mismatch: x {x.shape}, w {w.shape}, n={model.n}"
        )
    return model.A @ x + w


def measure(sensor: SensorModel, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """One observation: C @ x + v."""
    x = np.asarray(x, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if x.shape != (sensor.n,) or v.shape != (sensor.p,):
        raise ConfigurationError(
            f"measurement dimension mismatch: x {x.shape}, v {v.shape}, "
            f"expected n={sensor.n}, p={sensor.p}"
        )
    return sensor.C @ x + v


def observability_rank(A: np.ndarray, C: np.ndarray) -> int:
    """Numeric rank of the stacked observability matrix [C; CA; ...; CA^(n-1)].

    Singular values below RANK_RTOL times the largest count as zero.
    """
    A = _as_matrix(A, "A")
    C = _as_matrix(C, "C")
    n = A.shape[0]
    if C.shape[1] != n:
        raise ConfigurationError(f"C has {C.shape[1]} columns, expected {n}")
    blocks = []
    block = C
    for _ in range(n):
        blocks.append(block)
        block = block @ A
    obs = np.vstack(blocks)
    s = np.linalg.svd(obs, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def is_collectively_observable(model, sensors, subset, total_nodes: int) -> bool:
    """True iff the subset is a strict majority and its stacked pair is observable.

    Nodes are 1-based; ``sensors[i-1]`` is node i's model.
    """
    if not sensors:
        raise ConfigurationError("sensor list is empty")
    subset = sorted(set(subset))
    if any(i < 1 or i > total_nodes for i in subset):
        raise ConfigurationError(f"subset {subset} not within 1..{total_nodes}")
    if len(subset) * 2 <= total_nodes:
        return False
    if not subset:
        return False
    stacked = np.vstack([sensors[i - 1].C for i in subset])
    return observability_rank(model.A, stacked) == model.n
