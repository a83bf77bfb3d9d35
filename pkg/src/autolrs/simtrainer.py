"""Simulated trainers with analytically known optima.

Each landscape exposes per-step loss/gradient and a validation loss; SimModel
wraps one with SGD, a step counter and a seeded RNG, and checkpoints restore
all of it bit-exactly. A SimulatedTrainer executes controller commands against
a model, either in process or over the TCP protocol (loopback), and a
brute-force oracle grades chosen LRs against a dense grid of constant LRs.
"""

from __future__ import annotations

import copy
import math
import socket
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .controller import Controller, ScheduleRecord, SearchConfig
from .messages import (
    DIVERGENCE_LOSS,
    LOSS_TRAIN,
    LOSS_VALIDATION,
    PROTOCOL_VERSION,
    CommandDone,
    EvalConfig,
    Hello,
    LossReport,
    Message,
    RestoreCkpt,
    SaveCkpt,
    SetLr,
    Shutdown,
    Train,
)

__all__ = [
    "Quadratic",
    "NoisyQuadratic",
    "LogisticBlobs",
    "PiecewiseRegime",
    "Checkpoint",
    "SimModel",
    "sgd_step",
    "validation_loss",
    "OracleResult",
    "oracle_best_lr",
    "SimulatedTrainer",
    "SessionResult",
    "run_in_process",
    "run_loopback_session",
    "make_landscape",
]


class Quadratic:
    """Deterministic quadratic bowl: loss = 0.5 * sum(c_j * (theta_j - m_j)^2).

    With a single curvature c the loss after t full-gradient SGD steps at
    constant lr is exactly loss_0 * (1 - lr*c)^(2t): convergence for
    lr < 2/c, divergence above, one-step solution at lr = 1/c.
    """

    def __init__(self, curvatures=(1.0,), center=None):
        self.curvatures = np.atleast_1d(np.asarray(curvatures, dtype=float))
        if np.any(self.curvatures <= 0) or not np.all(np.isfinite(self.curvatures)):
            raise ValueError("curvatures must be finite and > 0")
        self.dim = len(self.curvatures)
        if center is None:
            center = np.zeros(self.dim)
        self.center = np.asarray(center, dtype=float)
        if self.center.shape != (self.dim,):
            raise ValueError("center must match curvature dimension")

    def initial_theta(self) -> np.ndarray:
        return np.ones(self.dim)

    def train_loss_and_grad(self, theta, step, rng):
        d = theta - self.center
        scaled = self.curvatures * d
        loss = 0.5 * float(np.dot(scaled, d))
        return loss, scaled

    def validation_loss(self, theta, step, minibatches=None) -> float:
        # full-batch objective: identical to the training loss
        d = theta - self.center
        return 0.5 * float(np.dot(self.curvatures * d, d))


class NoisyQuadratic(Quadratic):
    """Quadratic bowl with Gaussian gradient noise drawn from the model RNG."""

    def __init__(self, curvatures=(1.0,), noise_std=0.1, center=None):
        super().__init__(curvatures, center)
        if noise_std < 0 or not math.isfinite(noise_std):
            raise ValueError(f"noise_std must be finite and >= 0, got {noise_std}")
        self.noise_std = noise_std

    def train_loss_and_grad(self, theta, step, rng):
        loss, grad = super().train_loss_and_grad(theta, step, rng)
        return loss, grad + rng.normal(0.0, self.noise_std, self.dim)


class LogisticBlobs:
    """Two Gaussian blobs classified by logistic regression (with bias).

    The dataset is fixed at construction from data_seed; only mini-batch
    sampling consumes the model RNG, so checkpoints replay exactly. Reported
    training loss is the current mini-batch's cross-entropy; validation loss
    is the mean over held-out mini-batches (all of them by default). At
    theta = 0 every loss is exactly ln 2.
    """

    def __init__(
        self,
        mu=(0.0, 0.2),
        sigma=(3.0, 0.1),
        n_train=2048,
        n_val=512,
        batch_size=32,
        data_seed=7,
    ):
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if mu.shape != sigma.shape or mu.ndim != 1:
            raise ValueError("mu and sigma must be 1-d and the same shape")
        if np.any(sigma <= 0):
            raise ValueError("sigma must be > 0")
        self.dim = len(mu) + 1  # learned bias
        self.batch_size = int(batch_size)
        data_rng = np.random.default_rng(data_seed)

        def sample(n):
            labels = data_rng.integers(0, 2, n)
            signs = 2.0 * labels - 1.0
            x = signs[:, None] * mu[None, :] + data_rng.normal(0.0, 1.0, (n, len(mu))) * sigma
            return np.hstack([x, np.ones((n, 1))]), labels.astype(float)

        self.x_train, self.y_train = sample(int(n_train))
        self.x_val, self.y_val = sample(int(n_val))

    def initial_theta(self) -> np.ndarray:
        return np.zeros(self.dim)

    @staticmethod
    def _cross_entropy(z, y):
        # log(1 + e^z) - y*z, computed stably
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    def train_loss_and_grad(self, theta, step, rng):
        idx = rng.integers(0, len(self.x_train), self.batch_size)
        xb, yb = self.x_train[idx], self.y_train[idx]
        z = xb @ theta
        loss = self._cross_entropy(z, yb)
        p = 1.0 / (1.0 + np.exp(-z))
        grad = xb.T @ (p - yb) / len(yb)
        return loss, grad

    def validation_loss(self, theta, step, minibatches=None) -> float:
        if minibatches is None:
            xv, yv = self.x_val, self.y_val
        else:
            n = min(int(minibatches) * self.batch_size, len(self.x_val))
            xv, yv = self.x_val[:n], self.y_val[:n]
        return self._cross_entropy(xv @ theta, yv)


class PiecewiseRegime:
    """Objective that switches landscape at fixed global steps.

    segments is [(start_step, landscape), ...]; the landscape whose start is
    the largest one <= the current step is active. A mid-candidate switch
    makes the reported loss jump and re-decay, the non-monotone corner case
    the smoothing stage exists for.
    """

    def __init__(self, segments):
        if not segments:
            raise ValueError("need at least one segment")
        self.segments = sorted(segments, key=lambda p: p[0])
        if self.segments[0][0] != 0:
            raise ValueError("first segment must start at step 0")
        dims = {lands.dim for _, lands in self.segments}
        if len(dims) != 1:
            raise ValueError("all segments must share the parameter dimension")
        self.dim = dims.pop()

    def _active(self, step):
        current = self.segments[0][1]
        for start, lands in self.segments:
            if step >= start:
                current = lands
            else:
                break
        return current

    def initial_theta(self) -> np.ndarray:
        return self.segments[0][1].initial_theta()

    def train_loss_and_grad(self, theta, step, rng):
        return self._active(step).train_loss_and_grad(theta, step, rng)

    def validation_loss(self, theta, step, minibatches=None) -> float:
        return self._active(step).validation_loss(theta, step, minibatches)


@dataclass
class Checkpoint:
    """Everything needed to replay a trajectory bit-exactly."""

    theta: np.ndarray
    rng_state: dict
    step: int
    diverged: bool


class SimModel:
    """A landscape plus SGD state: parameters, step counter, seeded RNG."""

    def __init__(self, landscape, seed: int = 0, theta0=None):
        self.landscape = landscape
        self.rng = np.random.default_rng(seed)
        if theta0 is None:
            theta0 = landscape.initial_theta()
        self.theta = np.asarray(theta0, dtype=float).copy()
        if self.theta.shape != (landscape.dim,):
            raise ValueError(f"theta0 must have shape ({landscape.dim},)")
        self.step = 0
        self.diverged = False

    def sgd_step(self, lr: float) -> float:
        """One SGD update at the given LR; returns the pre-update loss.

        After the parameters go non-finite the model is flagged diverged and
        every subsequent loss is +inf.
        """
        if self.diverged:
            return math.inf
        loss, grad = self.landscape.train_loss_and_grad(self.theta, self.step, self.rng)
        self.theta = self.theta - lr * grad
        self.step += 1
        if not np.all(np.isfinite(self.theta)) or not math.isfinite(loss):
            self.diverged = True
            return math.inf if not math.isfinite(loss) else float(loss)
        return float(loss)

    def validation_loss(self, minibatches=None) -> float:
        if self.diverged:
            return math.inf
        value = self.landscape.validation_loss(self.theta, self.step, minibatches)
        return float(value) if math.isfinite(value) else math.inf

    def save(self) -> Checkpoint:
        return Checkpoint(
            self.theta.copy(),
            copy.deepcopy(self.rng.bit_generator.state),
            self.step,
            self.diverged,
        )

    def restore(self, checkpoint: Checkpoint) -> None:
        self.theta = checkpoint.theta.copy()
        self.rng.bit_generator.state = copy.deepcopy(checkpoint.rng_state)
        self.step = checkpoint.step
        self.diverged = checkpoint.diverged


def sgd_step(model: SimModel, lr: float) -> float:
    return model.sgd_step(lr)


def validation_loss(model: SimModel, minibatches=None) -> float:
    return model.validation_loss(minibatches)


@dataclass(frozen=True)
class OracleResult:
    """Dense-grid search over constant LRs from one checkpoint."""

    best_lr: float
    best_loss: float
    lrs: np.ndarray = field(repr=False)
    losses: np.ndarray = field(repr=False)


def oracle_best_lr(
    model: SimModel,
    interval: tuple[float, float],
    tau: int,
    grid_size: int = 256,
    val_minibatches=None,
    checkpoint: Checkpoint | None = None,
) -> OracleResult:
    """Run every LR on a log-uniform grid for tau steps from the same
    checkpoint and rank by final validation loss (+inf once diverged).
    The model is returned to the checkpoint afterwards."""
    lo, hi = interval
    if not 0 < lo < hi:
        raise ValueError(f"need 0 < lo < hi, got ({lo}, {hi})")
    if tau < 1 or grid_size < 2:
        raise ValueError("need tau >= 1 and grid_size >= 2")
    if checkpoint is None:
        checkpoint = model.save()
    lrs = 10.0 ** np.linspace(math.log10(lo), math.log10(hi), grid_size)
    losses = np.empty(grid_size)
    for i, lr in enumerate(lrs):
        model.restore(checkpoint)
        for _ in range(tau):
            model.sgd_step(float(lr))
            if model.diverged:
                break
        losses[i] = model.validation_loss(val_minibatches)
    model.restore(checkpoint)
    best = int(np.argmin(losses))  # ties resolve to the smaller LR
    return OracleResult(float(lrs[best]), float(losses[best]), lrs, losses)


class SimulatedTrainer:
    """Executes controller commands against a SimModel, emitting events.

    Commands arrive strictly in order, so save/restore/set-lr need no
    completion signal; only Train replies (loss reports, then CommandDone).
    A validation-source Train also reports once at step 0 so that candidate
    runs from the same checkpoint start from an identical measurement.
    """

    def __init__(self, model: SimModel, val_minibatches: int = 10, val_every: int = 50):
        self.model = model
        self.val_minibatches = val_minibatches
        self.val_every = val_every
        self.lr: float | None = None
        self.checkpoint: Checkpoint | None = None
        self.saved_checkpoints: list[Checkpoint] = []
        self.shutdown_reason: str | None = None

    def execute(self, command: Message) -> list[Message]:
        if isinstance(command, SetLr):
            self.lr = command.lr
            return []
        if isinstance(command, SaveCkpt):
            self.checkpoint = self.model.save()
            self.saved_checkpoints.append(self.checkpoint)
            return []
        if isinstance(command, RestoreCkpt):
            if self.checkpoint is None:
                raise RuntimeError("restore requested before any checkpoint was saved")
            self.model.restore(self.checkpoint)
            return []
        if isinstance(command, EvalConfig):
            self.val_minibatches = command.val_minibatches
            self.val_every = command.val_every
            return []
        if isinstance(command, Shutdown):
            self.shutdown_reason = command.reason
            return []
        if isinstance(command, Train):
            return self._train(command)
        raise RuntimeError(f"unexpected command {type(command).__name__}")

    def _train(self, command: Train) -> list[Message]:
        if self.lr is None:
            raise RuntimeError("train requested before set_lr")
        events: list[Message] = []
        source = command.loss_source
        if source == LOSS_VALIDATION:
            events.append(LossReport(0, self.model.validation_loss(self.val_minibatches), source))
        for s in range(1, command.steps + 1):
            loss = self.model.sgd_step(self.lr)
            if self.model.diverged or not math.isfinite(loss):
                events.append(LossReport(s, math.inf, source))
                break
            if s % command.report_every == 0:
                if source == LOSS_TRAIN:
                    events.append(LossReport(s, loss, source))
                else:
                    value = self.model.validation_loss(self.val_minibatches)
                    if not math.isfinite(value):
                        events.append(LossReport(s, math.inf, source))
                        break
                    events.append(LossReport(s, value, source))
        events.append(CommandDone(command.command_id))
        return events


@dataclass
class SessionResult:
    """Everything a finished in-process session produced."""

    record: ScheduleRecord
    loss_trace: list
    controller: Controller
    trainer: SimulatedTrainer


def run_in_process(config: SearchConfig, model: SimModel) -> SessionResult:
    """Drive a full session without any transport: controller commands are
    executed directly and the resulting events fed back, in order."""
    controller = Controller(config)
    trainer = SimulatedTrainer(model, config.val_minibatches, config.val_every)
    events: deque[Message] = deque([Hello(PROTOCOL_VERSION, {})])
    while events:
        event = events.popleft()
        for command in controller.handle_event(event):
            if isinstance(command, Shutdown):
                trainer.execute(command)
                return SessionResult(controller.record, controller.loss_trace, controller, trainer)
            events.extend(trainer.execute(command))
    raise RuntimeError("event queue drained before the controller shut the session down")


def _wire_safe(event: Message) -> Message:
    if isinstance(event, LossReport) and not math.isfinite(event.value):
        return LossReport(event.step, DIVERGENCE_LOSS, event.source)
    return event


def run_loopback_session(
    host: str,
    port: int,
    model: SimModel,
    config_overrides: dict | None = None,
    timeout: float = 120.0,
) -> SimulatedTrainer:
    """Attach a simulated trainer to a running controller server over TCP.

    Speaks the same newline-JSON protocol as any external trainer; non-finite
    losses are clamped to the divergence sentinel before encoding.
    """
    from .protocol import LineReader, decode, encode

    trainer = SimulatedTrainer(model)
    with socket.create_connection((host, port), timeout=timeout) as sock:
        sock.settimeout(timeout)
        sock.sendall(encode(Hello(PROTOCOL_VERSION, dict(config_overrides or {}))))
        reader = LineReader(sock)
        while True:
            line = reader.readline()
            if line is None:
                break
            message = decode(line)
            events = trainer.execute(message)
            if isinstance(message, Shutdown):
                break
            for event in events:
                sock.sendall(encode(_wire_safe(event)))
    return trainer


def make_landscape(kind: str, **kwargs):
    """Build a landscape by name (CLI helper)."""
    kinds = {
        "quadratic": Quadratic,
        "noisy-quadratic": NoisyQuadratic,
        "logistic-blobs": LogisticBlobs,
        "piecewise": PiecewiseRegime,
    }
    if kind not in kinds:
        raise ValueError(f"unknown landscape {kind!r}; choose from {sorted(kinds)}")
    return kinds[kind](**kwargs)
