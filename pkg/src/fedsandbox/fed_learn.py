"""Logistic regression trained with DP-SGD, centrally or across a federation.

Batches are drawn by Poisson sampling: every row joins a step independently
with probability q = min(1, max_batch / n). In the federated scenarios each
node samples its own rows at the same global rate, so the union of node
batches has the same law as a central batch and small shards simply see
small local batches.

Noise placement per scenario:

central  one N(0, sigma^2 C^2 I) draw on the summed clipped gradients.
local    every node adds N(0, sigma_i^2 C^2 I) calibrated to its own sampling
         rate, then shares its noisy sum in plaintext.
secure   every node adds N(0, sigma^2 C^2 I / K); the masked fixed-point sum
         carries exactly the central noise level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .accountant import calibrate_sigma, dpsgd_epsilon
from .data import Shards, SplitSpec, Table, encode
from .errors import NumericError
from .federation import Scenario
from .secure_agg import PairwiseSeeds, aggregate, codec_for, mask_all

log = logging.getLogger(__name__)


@dataclass
class Model:
    weights: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, d: int) -> Model:
        return cls(np.zeros(d), 0.0)

    @property
    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    @classmethod
    def from_params(cls, theta: np.ndarray) -> Model:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            raise NumericError("non-finite model parameters")
        return cls(theta[:-1].copy(), float(theta[-1]))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(X @ self.weights + self.bias)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    max_batch: int = 242
    epochs: int = 20
    clip_norm: float = 1.0
    target_eps: float = 1.0
    delta: float = 1e-5
    scenario: Scenario = Scenario.CENTRAL
    k: int = 1
    frac_bits: int = 16
    # pairwise masks per round; off sums the fixed-point encodings directly,
    # which gives bit-identical totals because the masks cancel exactly
    mask_rounds: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if not self.lr > 0 or self.max_batch < 1 or not self.clip_norm > 0:
            raise ValueError("need lr > 0, max_batch >= 1 and clip_norm > 0")

    def sampling_rate(self, n: int) -> float:
        return min(1.0, self.max_batch / n)

    def steps(self, n: int) -> int:
        return self.epochs * math.ceil(n / self.max_batch)


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def grad_logloss(m: Model, x: np.ndarray, y: float) -> np.ndarray:
    """Gradient of the binary cross-entropy at one example; last entry is the bias coordinate."""
    x = np.asarray(x, dtype=float)
    if x.shape != m.weights.shape:
        raise ValueError(f"feature vector has shape {x.shape}, model expects {m.weights.shape}")
    if not (np.all(np.isfinite(x)) and np.isfinite(y)):
        raise NumericError("non-finite input")
    p = expit(x @ m.weights + m.bias)
    return (p - y) * np.append(x, 1.0)


def per_example_grads(m: Model, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    Xa = _augment(X)
    return (m.predict_proba(X) - y)[:, None] * Xa


def clip_rows(G: np.ndarray, c: float) -> np.ndarray:
    if math.isinf(c):
        return G
    norms = np.linalg.norm(G, axis=1)
    return G * np.minimum(1.0, c / np.maximum(norms, 1e-300))[:, None]


def dp_sgd_step(
    m: Model,
    batch: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    sigma: float,
    rng: np.random.Generator,
    expected_batch: float | None = None,
) -> Model:
    """One DP-SGD update: clip, sum, add N(0, sigma^2 C^2 I), divide by expected batch size."""
    X, y = batch
    d = m.weights.size + 1
    total = clip_rows(per_example_grads(m, X, y), cfg.clip_norm).sum(axis=0) if len(y) else np.zeros(d)
    if sigma > 0:
        total = total + rng.normal(0.0, sigma * cfg.clip_norm, d)
    denom = expected_batch if expected_batch is not None else cfg.max_batch
    return Model.from_params(m.params - cfg.lr * total / denom)


@dataclass
class TrainReport:
    sigma: float
    achieved_eps: float
    steps: int
    q: float
    warnings: list[str] = field(default_factory=list)
    clip_events: int = 0


def _node_arrays(data) -> tuple[list[np.ndarray], list[np.ndarray]]:
    tables = [data.train] if isinstance(data, SplitSpec) else list(data.node_tables) if isinstance(data, Shards) else [data]
    Xs, ys = [], []
    for t in tables:
        X, y, _ = encode(t)
        Xs.append(X)
        ys.append(y)
    return Xs, ys


def node_noise(rng: np.random.Generator, node_sigma, clip: float, d: int) -> np.ndarray:
    """One N(0, sigma_i^2 C^2 I) draw per node, shape (K, d)."""
    node_sigma = np.asarray(node_sigma, dtype=float)
    return rng.normal(0.0, 1.0, (node_sigma.size, d)) * (node_sigma * clip)[:, None]


def secure_round(sums: np.ndarray, codec, step: int, secret: bytes, use_masks: bool) -> np.ndarray:
    k = sums.shape[0]
    encoded = [codec.encode(s) for s in sums]
    if not use_masks:
        total = np.zeros_like(encoded[0])
        for e in encoded:
            total += e
        return codec.decode(total)
    seeds = PairwiseSeeds.derive(k, step, secret)
    return aggregate(mask_all(encoded, seeds), codec, k)


def train(data, cfg: TrainConfig, rng: np.random.Generator, report: TrainReport | None = None):
    """Train under ``cfg.scenario``; returns (model, achieved_eps).

    ``data`` is a SplitSpec or Table for the central scenario and Shards for
    the federated ones. A ``TrainReport`` passed in is filled with the noise
    calibration and any warnings.
    """
    scen = cfg.scenario
    Xs, ys = _node_arrays(data)
    if scen is Scenario.CENTRAL and len(Xs) > 1:
        Xs, ys = [np.vstack(Xs)], [np.concatenate(ys)]
    k = len(Xs)
    sizes = np.array([len(y) for y in ys])
    n = int(sizes.sum())
    d = Xs[0].shape[1]
    q = cfg.sampling_rate(n)
    steps = cfg.steps(n)
    sigma = calibrate_sigma(cfg.target_eps, cfg.delta, q, steps)
    achieved = dpsgd_epsilon(sigma, q, steps, cfg.delta)
    rep = report if report is not None else TrainReport(sigma, achieved, steps, q)
    rep.sigma, rep.achieved_eps, rep.steps, rep.q = sigma, achieved, steps, q

    node_sigma = np.full(k, sigma)
    if scen is Scenario.LOCAL:
        # each node protects its own noisy sum against the server
        q_local = [min(1.0, cfg.max_batch / (k * s)) for s in sizes]
        node_sigma = np.array([calibrate_sigma(cfg.target_eps, cfg.delta, ql, steps) for ql in q_local])
        achieved = max(dpsgd_epsilon(s, ql, steps, cfg.delta) for s, ql in zip(node_sigma, q_local))
        rep.achieved_eps = achieved
    elif scen is Scenario.SECURE:
        node_sigma = np.full(k, sigma / math.sqrt(k))
    small = [i for i, s in enumerate(sizes) if q * s < 1]
    if small and k > 1:
        rep.warnings.append(f"{len(small)} nodes expect < 1 row per batch")

    codec = None
    if scen is Scenario.SECURE:
        codec = codec_for(k, float(sizes.max()) * cfg.clip_norm + 12 * sigma * cfg.clip_norm + 1, cfg.frac_bits)
    secret = rng.bytes(16)

    m = Model.zeros(d)
    expected = q * n
    for step in range(steps):
        theta = m.params
        sums = np.zeros((k, d + 1))
        for i in range(k):
            pick = rng.random(sizes[i]) < q
            if pick.any():
                G = per_example_grads(m, Xs[i][pick], ys[i][pick])
                sums[i] = clip_rows(G, cfg.clip_norm).sum(axis=0)
        if node_sigma.max() > 0:
            sums += node_noise(rng, node_sigma, cfg.clip_norm, d + 1)
        if scen is Scenario.SECURE:
            total = secure_round(sums, codec, step, secret, cfg.mask_rounds)
        else:
            total = sums.sum(axis=0)
        m = Model.from_params(theta - cfg.lr * total / expected)
    if codec is not None:
        rep.clip_events = codec.clip_events
    return m, achieved


def train_nonprivate(data, cfg: TrainConfig, rng: np.random.Generator, keep_clipping: bool = True) -> Model:
    """Same optimiser, batches and step count without noise.

    Clipping is kept by default so the comparison with DP runs isolates the
    effect of the noise; ``keep_clipping=False`` gives plain SGD.
    """
    clip = cfg.clip_norm if keep_clipping else math.inf
    base = replace(cfg, target_eps=math.inf, clip_norm=clip, scenario=Scenario.CENTRAL, k=1)
    return train(data, base, rng)[0]


def evaluate(m: Model, test: Table | tuple[np.ndarray, np.ndarray]) -> float:
    """Fraction of correct predictions with the 0.5 probability threshold."""
    if isinstance(test, Table):
        X, y, _ = encode(test)
    else:
        X, y = test
    pred = (m.predict_proba(X) > 0.5).astype(float)
    return float(np.mean(pred == y))


def export_model(m: Model, names: list[str], path: str | Path) -> None:
    """Write one ``name value`` line per coefficient, bias last."""
    lines = [f"{name} {float(w)!r}" for name, w in zip(names, m.weights)] + [f"(bias) {float(m.bias)!r}"]
    Path(path).write_text("\n".join(lines) + "\n")
