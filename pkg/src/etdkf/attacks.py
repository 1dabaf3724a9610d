"""Attack injection (false-data, channel, non-triggering, replay) and the
corrupted-filter moment recursions used to predict estimator degradation.

The signal side corrupts measurements and transmitted priors; nodes keep
running the nominal filter code on whatever they receive. The recursion side
(`AttackRecursion`) advances the corrupted error first and second moments,
including the three cross-covariance families between predictive and prior
errors, for deterministic attack signals and a given trigger schedule.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .filtering import kalman_gain, sym
from .graphs import Graph, neighbors

log = logging.getLogger(__name__)

_warned_fallbacks = set()


def _warn_fallback(reason: str, detail: str) -> None:
    # First occurrence per reason at warning level, the rest at debug, so a
    # permanently-degenerate sampler cannot flood the log.
    if reason in _warned_fallbacks:
        log.debug("%s; direct fallback", detail)
    else:
        _warned_fallbacks.add(reason)
        log.warning("%s; direct fallback", detail)


MEASUREMENT_INJECTION = "measurement_injection"
CHANNEL_INJECTION = "channel_injection"
NON_TRIGGERING = "non_triggering"
REPLAY = "replay"

ATTACK_KINDS = (MEASUREMENT_INJECTION, CHANNEL_INJECTION, NON_TRIGGERING, REPLAY)


@dataclass
class SignalSpec:
    """Deterministic attack waveform evaluated at simulation time t = k * dt.

    kind "constant": `value` (vector or scalar broadcast over channels);
    kind "sinusoid": offset + amplitude * sin(frequency * t), broadcast.
    """

    kind: str = "constant"
    value: object = 0.0
    offset: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0

    def evaluate(self, t: float, dim: int) -> np.ndarray:
        if self.kind == "constant":
            v = np.asarray(self.value, dtype=float).reshape(-1)
            if v.size == 1:
                return np.full(dim, v[0])
            if v.size != dim:
                raise ConfigurationError(f"constant signal dim {v.size} != {dim}")
            return v
        if self.kind == "sinusoid":
            return (self.offset + self.amplitude * np.sin(self.frequency * t)) * np.ones(dim)
        raise ConfigurationError(f"unknown signal kind {self.kind!r}")


@dataclass
class AttackPlan:
    """One attack: what is hit, from when, and with which signal class."""

    kind: str
    onset: int
    node: int | None = None        # for node-targeted kinds
    edge: tuple | None = None      # (j, i): channel j -> i
    signal: SignalSpec = field(default_factory=SignalSpec)
    phi: float = 0.0               # non-triggering residual budget, must be < alpha
    sampler: bool = False          # non-triggering: paper-sampler mode
    upsilon: object = None         # replay disruption (vector, or scalar norm)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigurationError(f"unknown attack kind {self.kind!r}")
        if self.onset < 0:
            raise ConfigurationError(f"onset must be >= 0, got {self.onset}")
        if self.kind == CHANNEL_INJECTION:
            if self.edge is None:
                raise ConfigurationError("channel_injection needs edge=(j, i)")
        elif self.node is None:
            raise ConfigurationError(f"{self.kind} needs a target node")

    def active(self, k: int) -> bool:
        return k >= self.onset


def corrupt_measurement(y, f) -> np.ndarray:
    """y^a = y + f."""
    return np.asarray(y, float) + np.asarray(f, float)


def corrupt_channel(x_prior, f_bar) -> np.ndarray:
    """Transmitted prior with injected bias: x^a = x_prior + f_bar."""
    return np.asarray(x_prior, float) + np.asarray(f_bar, float)


def craft_non_triggering(y, C, x_pred_prev, phi, rng, sampler=False):
    """Crafted measurement keeping the trigger residual at or below phi < alpha.

    Direct mode places the corrupted measurement on the radius-phi sphere
    around the predicted output. Sampler mode draws a scalar shift from the
    uniform interval whose endpoints depend on ||C x_pred|| and ||y||; the
    interval is empty unless ||y|| < ||C x_pred||, and even when nonempty the
    draw does not always respect the phi budget, so any violation falls back
    to the direct construction (logged).

    Returns (y_a, fell_back).
    """
    y = np.asarray(y, float)
    C = np.asarray(C, float)
    target = C @ np.asarray(x_pred_prev, float)
    p = y.shape[0]

    def direct():
        if phi == 0.0:
            return target.copy()
        direction = rng.standard_normal(p)
        nrm = np.linalg.norm(direction)
        if nrm == 0.0:
            direction = np.ones(p)
            nrm = np.sqrt(p)
        return target + phi * direction / nrm

    if not sampler:
        return direct(), False

    a = phi - np.linalg.norm(target) + np.linalg.norm(y)
    b = phi + np.linalg.norm(target) - np.linalg.norm(y)
    if a >= b:
        _warn_fallback("interval", f"non-triggering sampler interval empty (a={a:.4g} >= b={b:.4g})")
        return direct(), True
    theta = rng.uniform(a, b)
    y_a = y + theta * np.ones(p)
    if np.linalg.norm(y_a - target) > phi:
        _warn_fallback("budget", "non-triggering sampler violated the phi budget")
        return direct(), True
    return y_a, False


def craft_replay(x_prior_last, C, upsilon) -> np.ndarray:
    """Replayed measurement: predicted output of the last transmitted prior plus
    the disruption term. ||upsilon|| > alpha forces a trigger at every step."""
    return np.asarray(C, float) @ np.asarray(x_prior_last, float) + np.asarray(upsilon, float)


def channel_bias_step(zeta_j: int, f_bar_now, f_tilde_prev) -> np.ndarray:
    """Predictive-side bias recursion: refreshed on transmission, held otherwise."""
    if zeta_j:
        return np.asarray(f_bar_now, float)
    return np.asarray(f_tilde_prev, float)


@dataclass
class CompromisedState:
    """Corrupted filter state of one node, plus its moment blocks when they
    come from an `AttackRecursion` snapshot."""

    node: int
    x_prior_a: np.ndarray
    x_post_a: np.ndarray
    x_pred_a: np.ndarray
    P_prior_a: np.ndarray | None = None
    P_post_a: np.ndarray | None = None
    cross_pred: dict = field(default_factory=dict)        # (i,j) -> E[pred_i pred_j^T]
    cross_pred_prior: dict = field(default_factory=dict)  # (i,j) -> E[pred_i prior_j^T]
    cross_prior_pred: dict = field(default_factory=dict)  # (i,j) -> E[prior_i pred_j^T]


def compromised_step(state: CompromisedState, K_a, C, y, f_i, neighbor_preds,
                     f_tilde, gamma, zeta, A) -> CompromisedState:
    """One full corrupted filter step for a single node.

    Evaluates the corrupted posterior as prior + gain * (clean innovation) +
    consensus + attack aggregate, where the aggregate combines the direct
    measurement term with the held channel biases of the neighbors, then
    refreshes the predictive estimate and advances the prior. With all attack
    signals zero this is exactly the nominal update.

    The returned state holds this step's posterior and predictive estimates
    and the prior already advanced for the next step.
    """
    x_prior_a = np.asarray(state.x_prior_a, float)
    A = np.asarray(A, float)
    K_a = np.asarray(K_a, float)
    C = np.asarray(C, float)
    r_clean = np.asarray(y, float) - C @ x_prior_a
    x_pred_a = zeta * x_prior_a + (1 - zeta) * (A @ np.asarray(state.x_pred_a, float))
    consensus = np.zeros_like(x_prior_a)
    for xj in neighbor_preds:
        consensus = consensus + (np.asarray(xj, float) - x_pred_a)
    f_aggregate = K_a @ np.asarray(f_i, float)
    for ft in f_tilde:
        f_aggregate = f_aggregate + gamma * np.asarray(ft, float)
    x_post_a = x_prior_a + K_a @ r_clean + gamma * consensus + f_aggregate
    return CompromisedState(node=state.node, x_prior_a=A @ x_post_a,
                            x_post_a=x_post_a, x_pred_a=x_pred_a)


class AttackRecursion:
    """Network-wide corrupted moment recursion under deterministic attacks.

    Tracks raw (mean-inclusive) second moments of prior, posterior, and
    predictive errors for every node pair, plus the error means driven by the
    attack inputs; the attack-statistic terms of the corrupted posterior
    covariance are evaluated from these (deterministic outer products).

    gain_mode "nominal": gains follow the attack-free covariance recursion,
    matching an oblivious filter implementation. gain_mode "corrupted": gains
    are recomputed from the corrupted prior moment each step.

    Cross blocks start at zero and the diagonal at P0; with shared estimator
    initialization the true initial cross moment equals P0, so recursion and
    simulation agree only after the filter transient has washed out.
    """

    def __init__(self, process, sensors, graph: Graph, gamma: float,
                 gain_mode: str = "nominal"):
        if gain_mode not in ("nominal", "corrupted"):
            raise ConfigurationError(f"unknown gain_mode {gain_mode!r}")
        self.process = process
        self.sensors = sensors
        self.graph = graph
        self.gamma = float(gamma)
        self.gain_mode = gain_mode
        self.N = graph.node_count
        self.n = process.n
        self.nbrs = {i: sorted(neighbors(graph, i)) for i in graph.nodes}

        n, P0 = self.n, process.P0
        nodes = list(graph.nodes)
        self.k = 0
        # Raw second moments, keyed (i, j).
        self.P_prior = {(i, j): (P0.copy() if i == j else np.zeros((n, n)))
                        for i in nodes for j in nodes}
        self.P_pred = {key: m.copy() for key, m in self.P_prior.items()}
        self.P_pred_prior = {key: m.copy() for key, m in self.P_prior.items()}   # E[pred_i prior_j^T]
        self.P_prior_pred = {key: m.copy() for key, m in self.P_prior.items()}   # E[prior_i pred_j^T]
        self.P_post = {key: np.zeros((n, n)) for key in self.P_prior}
        # Posterior-vs-predictive mixed moments from the previous step.
        self.X = {key: np.zeros((n, n)) for key in self.P_prior}  # E[post_i pred_j^T]
        # Error means.
        self.e_prior = {i: np.zeros(n) for i in nodes}
        self.e_pred = {i: np.zeros(n) for i in nodes}
        self.e_post = {i: np.zeros(n) for i in nodes}
        # Channel-bias recursion state per directed edge (j -> i).
        self.f_tilde = {}
        # Nominal covariance recursion for gain_mode == "nominal".
        self._P_prior_nominal = {i: P0.copy() for i in nodes}
        self.gains = {i: None for i in nodes}

    # -- helpers -------------------------------------------------------------

    def _gain(self, i: int) -> np.ndarray:
        s = self.sensors[i - 1]
        if self.gain_mode == "nominal":
            return kalman_gain(self._P_prior_nominal[i], s.C, s.R)
        return kalman_gain(self.P_prior[(i, i)], s.C, s.R)

    def _advance_priors(self):
        A, Q = self.process.A, self.process.Q
        self.P_prior = {key: A @ self.P_post[key] @ A.T + Q for key in self.P_post}
        self.e_prior = {i: A @ self.e_post[i] for i in self.e_post}

    def cross_covariance_step(self, zetas: dict):
        """Advance the predictive/prior cross families for this step's triggers.

        Branch structure per pair: both triggering pairs collapse onto the
        cross-prior moment; a non-triggering side extrapolates through A with
        the shared process noise contributing Q.
        """
        A, Q = self.process.A, self.process.Q
        Yprev = {(i, j): self.X[(j, i)].T for (i, j) in self.X}
        new_pred, new_pred_prior, new_prior_pred = {}, {}, {}
        for (i, j), Pb in self.P_prior.items():
            zi, zj = zetas[i], zetas[j]
            ax = A @ self.X[(i, j)] @ A.T + Q       # E[pred_i+ pred_j+] when zi=1, zj=0 path base
            ay = A @ Yprev[(i, j)] @ A.T + Q
            ap = A @ self.P_pred[(i, j)] @ A.T + Q
            new_pred[(i, j)] = (zi * zj * Pb + zi * (1 - zj) * ax
                                + (1 - zi) * zj * ay + (1 - zi) * (1 - zj) * ap)
            new_pred_prior[(i, j)] = zi * Pb + (1 - zi) * ay
            new_prior_pred[(i, j)] = zj * Pb + (1 - zj) * ax
        self.P_pred = new_pred
        self.P_pred_prior = new_pred_prior
        self.P_prior_pred = new_prior_pred

    def _consensus_sums(self, means=False):
        if means:
            return {i: sum((self.e_pred[r] - self.e_pred[i] for r in self.nbrs[i]),
                           np.zeros(self.n)) for i in self.graph.nodes}
        return None

    def corrupted_posterior_covariance(self, i: int) -> np.ndarray:
        """Current corrupted posterior moment for node i (diagonal block)."""
        return self.P_post[(i, i)]

    def node_state(self, i: int) -> CompromisedState:
        """Snapshot of node i's error means and moment blocks."""
        pairs = [(a, b) for (a, b) in self.P_pred if a == i or b == i]
        return CompromisedState(
            node=i,
            x_prior_a=self.e_prior[i].copy(),
            x_post_a=self.e_post[i].copy(),
            x_pred_a=self.e_pred[i].copy(),
            P_prior_a=self.P_prior[(i, i)].copy(),
            P_post_a=self.P_post[(i, i)].copy(),
            cross_pred={k: self.P_pred[k].copy() for k in pairs},
            cross_pred_prior={k: self.P_pred_prior[k].copy() for k in pairs},
            cross_prior_pred={k: self.P_prior_pred[k].copy() for k in pairs},
        )

    def step(self, zetas: dict, f_meas: dict | None = None, f_chan: dict | None = None):
        """Advance one step given triggers and active deterministic signals.

        zetas: {node: 0 or 1} for this step. f_meas: {node: p-vector} direct
        measurement injections. f_chan: {(j, i): n-vector} channel injections.
        At k=0 every node is treated as transmitting regardless of `zetas`.
        """
        f_meas = dict(f_meas or {})
        f_chan = dict(f_chan or {})
        nodes = list(self.graph.nodes)
        A, Q = self.process.A, self.process.Q
        gamma = self.gamma

        if self.k == 0:
            zetas = {i: 1 for i in nodes}
        else:
            self._advance_priors()
            self.cross_covariance_step(zetas)
            self.e_pred = {i: (self.e_prior[i] if zetas[i]
                               else A @ self.e_pred[i]) for i in nodes}

        # Held channel biases (refresh on transmission).
        for i in nodes:
            for j in self.nbrs[i]:
                key = (j, i)
                bias = f_chan.get(key, np.zeros(self.n))
                self.f_tilde[key] = channel_bias_step(zetas[j], bias,
                                                      self.f_tilde.get(key, np.zeros(self.n)))

        gains, Ms, d = {}, {}, {}
        for i in nodes:
            s = self.sensors[i - 1]
            K = self._gain(i)
            gains[i] = K
            Ms[i] = np.eye(self.n) - K @ s.C
            di = -K @ f_meas.get(i, np.zeros(s.p))
            for j in self.nbrs[i]:
                di = di - gamma * self.f_tilde[(j, i)]
            d[i] = di
        self.gains = gains

        s_mean = self._consensus_sums(means=True)
        stoch_mean = {i: Ms[i] @ self.e_prior[i] + gamma * s_mean[i] for i in nodes}

        # Posterior second moments for every pair.
        post = {}
        for i in nodes:
            for j in nodes:
                Mi, Mj = Ms[i], Ms[j]
                block = Mi @ self.P_prior[(i, j)] @ Mj.T
                # prior_i against neighbor-consensus of j
                acc = np.zeros((self.n, self.n))
                for s_ in self.nbrs[j]:
                    acc += self.P_prior_pred[(i, s_)] - self.P_prior_pred[(i, j)]
                block += gamma * Mi @ acc
                acc = np.zeros((self.n, self.n))
                for r in self.nbrs[i]:
                    acc += self.P_pred_prior[(r, j)] - self.P_pred_prior[(i, j)]
                block += gamma * acc @ Mj.T
                acc = np.zeros((self.n, self.n))
                for r in self.nbrs[i]:
                    for s_ in self.nbrs[j]:
                        acc += (self.P_pred[(r, s_)] - self.P_pred[(r, j)]
                                - self.P_pred[(i, s_)] + self.P_pred[(i, j)])
                block += gamma * gamma * acc
                if i == j:
                    Ri = self.sensors[i - 1].R
                    block += gains[i] @ Ri @ gains[i].T
                block += np.outer(d[i], stoch_mean[j]) + np.outer(stoch_mean[i], d[j])
                block += np.outer(d[i], d[j])
                post[(i, j)] = sym(block) if i == j else block
        self.P_post = post
        self.e_post = {i: stoch_mean[i] + d[i] for i in nodes}

        # Mixed posterior-vs-predictive moments for the next cross step.
        X = {}
        for i in nodes:
            for j in nodes:
                m = Ms[i] @ self.P_prior_pred[(i, j)]
                acc = np.zeros((self.n, self.n))
                for r in self.nbrs[i]:
                    acc += self.P_pred[(r, j)] - self.P_pred[(i, j)]
                m += gamma * acc
                m += np.outer(d[i], self.e_pred[j])
                X[(i, j)] = m
        self.X = X

        if self.gain_mode == "nominal":
            for i in nodes:
                s = self.sensors[i - 1]
                M = Ms[i]
                P_hat = sym(M @ self._P_prior_nominal[i] @ M.T + gains[i] @ s.R @ gains[i].T)
                self._P_prior_nominal[i] = sym(A @ P_hat @ A.T + Q)

        self.k += 1
        return post
