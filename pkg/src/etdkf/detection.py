"""k-NN KL-divergence estimation over innovation windows and the two detectors.

The estimator follows the nearest-neighbor relative-entropy form

    D(P_X || P_Z) ~= (m / n1) * sum_i log(dZ_k(i) / dX_k(i)) + log(n2 / (n1 - 1))

with dX_k(i) the k-th NN distance of X_i within X (query excluded) and dZ_k(i)
the k-th NN distance of X_i into Z. A Z sample coinciding exactly with the
query point is treated as the query itself and skipped once, so two pointwise
identical windows evaluate to exactly log(n2/(n1-1)). Distances are floored at
`epsilon_d` to keep the logarithms finite for duplicated samples (replayed
residuals produce those).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

H0 = "H0"
H1 = "H1"


@dataclass
class DetectorConfig:
    k_nn: int = 4
    window: int = 40          # w, innovation samples per window
    average: int = 10         # T, divergence values in the sliding mean
    delta: float = 0.5        # detection threshold
    epsilon_d: float = 1e-12  # distance floor
    reference: str = "shadow"  # "shadow" | "synthetic" | "calibrated"

    def __post_init__(self):
        if not 1 <= self.k_nn < self.window:
            raise ConfigurationError(
                f"need 1 <= k_nn < window, got k_nn={self.k_nn}, window={self.window}"
            )
        if self.average < 1:
            raise ConfigurationError(f"average window T must be >= 1, got {self.average}")
        baseline = np.log(self.window / (self.window - 1))
        if self.delta <= baseline:
            raise ConfigurationError(
                f"delta={self.delta} must exceed the identical-window baseline "
                f"log(w/(w-1))={baseline:.4g}"
            )
        if self.reference not in ("shadow", "synthetic", "calibrated"):
            raise ConfigurationError(f"unknown reference mode {self.reference!r}")


class InnovationWindow:
    """Fixed-capacity FIFO of p-dimensional residual samples."""

    def __init__(self, dim: int, capacity: int):
        self.dim = int(dim)
        self.capacity = int(capacity)
        self._buf = deque(maxlen=self.capacity)

    def push(self, sample) -> None:
        s = np.asarray(sample, dtype=float).reshape(-1)
        if s.shape != (self.dim,):
            raise ConfigurationError(f"sample dim {s.shape} != {self.dim}")
        self._buf.append(s)

    def __len__(self):
        return len(self._buf)

    @property
    def full(self) -> bool:
        return len(self._buf) == self.capacity

    def samples(self) -> np.ndarray:
        return np.array(self._buf, dtype=float).reshape(len(self._buf), self.dim)


def knn_distance(samples, index: int, k_nn: int, epsilon_d: float = 1e-12) -> float:
    """k-th smallest Euclidean distance from samples[index] to the others."""
    pts = np.asarray(samples, dtype=float)
    if len(pts) <= k_nn:
        raise ConfigurationError(f"need more than k_nn={k_nn} samples, got {len(pts)}")
    d = np.linalg.norm(np.delete(pts, index, axis=0) - pts[index], axis=1)
    return float(max(np.partition(d, k_nn - 1)[k_nn - 1], epsilon_d))


def estimate_kl(X, Z, k_nn: int, dim: int | None = None, epsilon_d: float = 1e-12) -> float:
    """k-NN relative-entropy estimate of D(P_X || P_Z) from two sample sets."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n1, m = X.shape
    n2 = Z.shape[0]
    if dim is not None and dim != m:
        raise ConfigurationError(f"declared dim {dim} != sample dim {m}")
    if Z.shape[1] != m:
        raise ConfigurationError(f"X dim {m} != Z dim {Z.shape[1]}")
    if n1 <= k_nn or n2 < k_nn:
        raise ConfigurationError(
            f"degenerate windows: n1={n1}, n2={n2} too small for k_nn={k_nn}"
        )

    # Within-X distances, query excluded via +inf on the diagonal.
    dxx = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
    np.fill_diagonal(dxx, np.inf)
    d_x = np.partition(dxx, k_nn - 1, axis=1)[:, k_nn - 1]

    # Cross distances into Z; drop one exact-zero match per query (coincident copy).
    dxz = np.linalg.norm(X[:, None, :] - Z[None, :, :], axis=2)
    zero_hit = dxz == 0.0
    has_zero = zero_hit.any(axis=1)
    if has_zero.any():
        first_zero = np.argmax(zero_hit, axis=1)
        dxz[has_zero, first_zero[has_zero]] = np.inf
    d_z = np.partition(dxz, k_nn - 1, axis=1)[:, k_nn - 1]

    d_x = np.maximum(d_x, epsilon_d)
    d_z = np.maximum(d_z, epsilon_d)
    return float(m / n1 * np.sum(np.log(d_z / d_x)) + np.log(n2 / (n1 - 1)))


def nominal_reference_window(omega, w: int, rng: np.random.Generator) -> np.ndarray:
    """w i.i.d. draws from N(0, Omega) for the synthetic H0 reference."""
    omega = np.asarray(omega, dtype=float)
    eig = np.linalg.eigvalsh(0.5 * (omega + omega.T))
    if eig[0] < -1e-10 * max(1.0, abs(eig[-1])):
        raise ConfigurationError(f"reference covariance not PSD (min eig {eig[0]:g})")
    try:
        L = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        # PSD but singular: fall back to an eigen square root.
        vals, vecs = np.linalg.eigh(0.5 * (omega + omega.T))
        L = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
    return rng.standard_normal((w, omega.shape[0])) @ L.T


def neighbor_innovation(y_i, C_j, x_pred_j) -> np.ndarray:
    """Per-channel residual: own measurement against the neighbor's predictive estimate."""
    return np.asarray(y_i, float) - np.asarray(C_j, float) @ np.asarray(x_pred_j, float)


def sliding_mean(values, T: int) -> float:
    """Mean of the last <=T entries; NaN when nothing is available."""
    tail = [v for v in values[-T:]]
    if not tail:
        return float("nan")
    return float(np.mean(tail))


def detect(value: float, delta: float) -> str:
    """H1 iff the averaged divergence strictly exceeds delta (NaN stays H0)."""
    return H1 if value > delta else H0


class DivergenceTracker:
    """Per-node (or per-edge) divergence series with the T-step sliding mean."""

    def __init__(self, config: DetectorConfig):
        self.config = config
        self.raw: list = []       # instantaneous estimates, one per step they exist
        self.phi_series: list = []  # (step, averaged value)
        self.flags: list = []

    def update(self, step: int, d_hat: float) -> float:
        self.raw.append(d_hat)
        value = sliding_mean(self.raw, self.config.average)
        self.phi_series.append((step, value))
        self.flags.append((step, detect(value, self.config.delta)))
        return value

    @property
    def latest(self) -> float:
        return self.phi_series[-1][1] if self.phi_series else float("nan")
