"""Refiner training: overlap-ratio objective, exact gradients, Adam loop.

The objective scores a batch as the ratio of two sums over every element
of every sample,

    L = sum(F * F_nn) / (sum(|F - F_nn|) + eps),

where F is the target field and F_nn the network output. L grows when
predicted intensity overlaps true intensity and shrinks with total
disagreement, so training MAXIMIZES it; the optimizer descends on -L. The
epsilon keeps the ratio finite when the prediction is exact.

Training is deterministic for a fixed config: minibatch shuffles derive
from the master seed, and every reduction in the gradient path has a fixed
order. Validation metrics use inference-mode normalization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tomopr.containers import VoxelVolume
from tomopr.errors import ConfigError, TrainingDivergedError
from tomopr.evaluation import quality_factor
from tomopr.nn.network import Network
from tomopr.runtime import child_rng
from tomopr.synthesis import TrainingSample

#: Epsilon of the overlap-ratio objective.
LOSS_EPS = 1e-3

LOG_HEADER = ["epoch", "train_loss", "val_loss", "val_Q", "seconds"]


def loss(target: np.ndarray, output: np.ndarray, eps: float = LOSS_EPS) -> float:
    """Overlap ratio of a (possibly batched) target/output pair."""
    target = np.asarray(target)
    output = np.asarray(output)
    if target.shape != output.shape:
        raise ValueError(f"shape mismatch: target {target.shape}, output {output.shape}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    num = float((target * output).sum())
    den = float(np.abs(target - output).sum()) + eps
    return num / den


def loss_and_grad(
    target: np.ndarray, output: np.ndarray, eps: float = LOSS_EPS
) -> tuple[float, np.ndarray]:
    """Loss plus its exact gradient with respect to the output.

    With A = sum(F * F_nn) and B = sum(|F - F_nn|) + eps,

        dL/dF_nn = F / B - (A / B^2) * sign(F_nn - F),

    using sign(0) = 0, so a perfect prediction sits at a stationary point
    of the denominator path and an all-zero target yields an exactly zero
    gradient.
    """
    target = np.asarray(target)
    output = np.asarray(output)
    if target.shape != output.shape:
        raise ValueError(f"shape mismatch: target {target.shape}, output {output.shape}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    a = float((target * output).sum())
    b = float(np.abs(target - output).sum()) + eps
    grad = target / b - (a / (b * b)) * np.sign(output - target)
    return a / b, grad


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_arrays(cls, arrays: list[np.ndarray]) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
        )


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place adaptive-moment update (bias-corrected)."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(p.dtype, copy=False)
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


@dataclass
class TrainConfig:
    """Training loop controls."""

    epochs: int = 100
    batch_size: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    loss_eps: float = LOSS_EPS
    val_fraction: float = 0.2
    seed: int = 0
    precision: str = "f64"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.loss_eps <= 0:
            raise ConfigError(f"loss eps must be positive, got {self.loss_eps}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"validation fraction must be in (0, 1), got {self.val_fraction}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self.precision == "f32" else np.float64)


@dataclass
class TrainResult:
    """Outcome of a training run."""

    history: list[list]
    best_epoch: int
    best_val_q: float


def _normalized_input(sample: TrainingSample, dtype) -> np.ndarray:
    vals = sample.inputs.values
    peak = float(vals.max())
    scaled = vals / peak if peak > 0 else vals
    return np.ascontiguousarray(scaled[None], dtype=dtype)  # (1, X, Y, Z) channel


def train(
    network: Network,
    samples: list[TrainingSample],
    config: TrainConfig | None = None,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Fit the refiner on (input, target) volume pairs.

    The trailing ``val_fraction`` share of ``samples`` is held out; the
    rest is shuffled into minibatches each epoch. Inputs are normalized to
    [0, 1] by their own maximum (targets already live there). After every
    epoch the held-out set is scored in inference mode; the parameters of
    the epoch with the highest validation Q are restored at the end, and a
    log row (epoch, train loss, validation loss, validation Q, seconds) is
    appended to ``training_log.csv`` under ``out_dir``.

    Raises TrainingDivergedError as soon as a batch loss stops being
    finite.
    """
    if config is None:
        config = TrainConfig()
    if len(samples) < 2:
        raise ConfigError(f"training needs at least 2 samples, got {len(samples)}")
    for s in samples:
        if tuple(s.inputs.dims) != tuple(s.target.dims):
            raise ConfigError(f"sample dims differ: {s.inputs.dims} vs {s.target.dims}")

    dtype = config.dtype
    if network.dtype != dtype:
        raise ConfigError(
            f"network dtype {network.dtype} does not match requested precision {config.precision}"
        )

    n_val = max(1, int(round(config.val_fraction * len(samples))))
    n_train = len(samples) - n_val
    if n_train < 1:
        raise ConfigError(f"validation split leaves no training samples ({len(samples)} total)")
    train_set, val_set = samples[:n_train], samples[n_train:]

    inputs = [_normalized_input(s, dtype) for s in samples]
    targets = [np.ascontiguousarray(s.target.values[None], dtype=dtype) for s in samples]

    params = network.trainable_arrays()
    adam = AdamState.for_arrays(params)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    history: list[list] = []
    best_epoch, best_val_q = -1, -np.inf
    best_state: list[np.ndarray] | None = None

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = child_rng(config.seed, 1, epoch).permutation(n_train)
        batch_losses = []
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = np.stack([inputs[i] for i in idx])
            f = np.stack([targets[i] for i in idx])
            y, caches = network._forward_batch(x, training=True, keep_cache=True)
            value, grad_y = loss_and_grad(f, y, config.loss_eps)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            batch_losses.append(value)
            # descend on the negated objective
            grads = network._backward_batch((-grad_y).astype(dtype, copy=False), caches)
            adam_step(
                params,
                network.trainable_grads(grads),
                adam,
                config.learning_rate,
                config.beta1,
                config.beta2,
            )
        train_loss = float(np.mean(batch_losses))

        val_num, val_den, val_qs = 0.0, config.loss_eps, []
        for i in range(n_train, len(samples)):
            y, _ = network._forward_batch(inputs[i][None], training=False, keep_cache=False)
            f = targets[i][None]
            val_num += float((f * y).sum())
            val_den += float(np.abs(f - y).sum())
            val_qs.append(
                quality_factor(
                    VoxelVolume(y[0, 0].astype(np.float64)),
                    VoxelVolume(f[0, 0].astype(np.float64)),
                )
            )
        val_loss = val_num / val_den
        val_q = float(np.mean(val_qs))
        seconds = time.perf_counter() - t0
        history.append([epoch, train_loss, val_loss, val_q, seconds])

        if val_q > best_val_q:
            best_epoch, best_val_q = epoch, val_q
            best_state = network.snapshot()
        if out_path is not None:
            from tomopr.io import write_csv

            write_csv(out_path / "training_log.csv", LOG_HEADER, history)

    if best_state is not None:
        network.restore(best_state)
    return TrainResult(history=history, best_epoch=best_epoch, best_val_q=float(best_val_q))
