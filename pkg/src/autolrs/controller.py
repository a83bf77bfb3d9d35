"""Stage-wise LR search controller.

Drives one trainer session: optional linear warmup, then repeated stages.
Each stage saves a checkpoint, explores k candidate LRs for tau' steps each
(restoring the checkpoint after every candidate), forecasts each candidate's
loss at the full stage length tau, and trains the stage at the best one.
The controller is a pure event-driven state machine: feed it trainer events,
send the trainer the commands it returns. It never blocks and holds no RNG,
so a session's schedule is a deterministic function of the reported losses.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Iterable, Mapping

from .forecast import LossSeries, SmoothingParams, evaluate_candidate
from .gp import GpPosterior, Observation, fit_posterior, lcb_argmin
from .messages import (
    DIVERGENCE_LOSS,
    LOSS_TRAIN,
    LOSS_VALIDATION,
    CommandDone,
    EvalConfig,
    Hello,
    LossReport,
    Message,
    RestoreCkpt,
    SaveCkpt,
    SetLr,
    Shutdown,
    Stop,
    Train,
    TrainerError,
)

__all__ = [
    "SearchConfig",
    "StagePlan",
    "stage_plan",
    "select_best",
    "Controller",
    "Phase",
    "OrderViolation",
    "ScheduleRecord",
    "step_accounting",
    "next_command",
]


class OrderViolation(RuntimeError):
    """Trainer event arrived in a phase where it is not legal; the controller
    state is left untouched for diagnostics."""


@dataclass(frozen=True)
class SearchConfig:
    """All knobs of a search session.

    LR candidates live in [lr_min, lr_max] (searched in log10 space). Stage
    lengths start at tau_initial and double every stage up to tau_max;
    candidates run tau * tau_prime_ratio steps. Stages read training loss
    until tau reaches tau_max, then validation loss measured on
    val_minibatches fixed mini-batches every val_every steps. An optional
    linear warmup from 0 to warmup_peak_lr precedes the search. The session
    ends once budget_steps model-update steps (warmup + applied stages) have
    been scheduled.
    """

    lr_min: float = 1e-3
    lr_max: float = 1.0
    k: int = 10
    tau_initial: int = 1000
    tau_max: int = 8000
    tau_prime_ratio: float = 0.1
    kappa: float = 1000.0
    noise_variance: float = 1e-4
    warmup_steps: int = 0
    warmup_peak_lr: float = 0.0
    val_minibatches: int = 10
    val_every: int = 50
    budget_steps: int = 15000
    seed: int = 0
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)

    def __post_init__(self) -> None:
        problems = []
        if not (math.isfinite(self.lr_min) and math.isfinite(self.lr_max)):
            problems.append("lr bounds must be finite")
        elif not 0 < self.lr_min < self.lr_max:
            problems.append(f"need 0 < lr_min < lr_max, got ({self.lr_min}, {self.lr_max})")
        if self.k < 1:
            problems.append(f"k must be >= 1, got {self.k}")
        if self.tau_initial < 1:
            problems.append(f"tau_initial must be >= 1, got {self.tau_initial}")
        if self.tau_max < self.tau_initial:
            problems.append(f"tau_max must be >= tau_initial, got {self.tau_max}")
        if not 0 < self.tau_prime_ratio <= 1:
            problems.append(f"tau_prime_ratio must be in (0, 1], got {self.tau_prime_ratio}")
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            problems.append(f"kappa must be finite and > 0, got {self.kappa}")
        if not (math.isfinite(self.noise_variance) and self.noise_variance >= 0):
            problems.append(f"noise_variance must be >= 0, got {self.noise_variance}")
        if self.warmup_steps < 0:
            problems.append(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if self.warmup_steps > 0 and not (
            math.isfinite(self.warmup_peak_lr) and self.warmup_peak_lr > 0
        ):
            problems.append("warmup_peak_lr must be > 0 when warmup_steps > 0")
        if self.val_minibatches < 1:
            problems.append(f"val_minibatches must be >= 1, got {self.val_minibatches}")
        if self.val_every < 1:
            problems.append(f"val_every must be >= 1, got {self.val_every}")
        if self.budget_steps < 1:
            problems.append(f"budget_steps must be >= 1, got {self.budget_steps}")
        if problems:
            raise ValueError("invalid search config: " + "; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "smoothing" in kwargs and isinstance(kwargs["smoothing"], Mapping):
            smooth_known = {f.name for f in fields(SmoothingParams)}
            smooth_unknown = set(kwargs["smoothing"]) - smooth_known
            if smooth_unknown:
                raise ValueError(f"unknown smoothing keys: {sorted(smooth_unknown)}")
            kwargs["smoothing"] = SmoothingParams(**kwargs["smoothing"])
        return cls(**kwargs)

    def merged(self, overrides: Mapping) -> "SearchConfig":
        """New config with override values applied on top (used for Hello)."""
        base = self.to_dict()
        for key, value in dict(overrides).items():
            if key == "smoothing" and isinstance(value, Mapping):
                base["smoothing"] = {**base["smoothing"], **value}
            else:
                base[key] = value
        return SearchConfig.from_dict(base)


@dataclass(frozen=True)
class StagePlan:
    """Length, exploration length and loss source of one stage."""

    stage_index: int
    tau: int
    tau_prime: int
    loss_source: str


def stage_plan(config: SearchConfig, stage_index: int) -> StagePlan:
    """Stage curriculum: tau doubles from tau_initial, capped at tau_max;
    tau' is the tau_prime_ratio fraction; the loss source switches from
    training to validation once tau reaches the cap."""
    if stage_index < 0:
        raise ValueError(f"stage_index must be >= 0, got {stage_index}")
    tau = min(config.tau_initial * 2**stage_index, config.tau_max)
    tau_prime = max(1, int(round(tau * config.tau_prime_ratio)))
    source = LOSS_VALIDATION if tau >= config.tau_max else LOSS_TRAIN
    return StagePlan(stage_index, tau, tau_prime, source)


def select_best(
    candidates: "Iterable[tuple[float, float]]", posterior: GpPosterior
) -> tuple[float, float]:
    """Pick (log10_lr, forecast) with the lowest forecast; ties break to the
    lower posterior mean, then to the smaller log-LR."""
    items = list(candidates)
    if not items:
        raise ValueError("select_best needs at least one candidate")
    return min(items, key=lambda xy: (xy[1], posterior.predict(xy[0])[0], xy[0]))


class Phase(Enum):
    IDLE = "idle"
    WARMUP = "warmup"
    EXPLORING = "exploring"
    APPLYING = "applying"
    STOPPED = "stopped"


@dataclass(frozen=True)
class ScheduleRecord:
    """The product of a session: the applied (step, lr) schedule plus
    metadata (config snapshot, per-stage candidates, chosen LRs, forecasts,
    step accounting). Contains nothing non-deterministic, so two runs with
    the same seed serialize byte-identically."""

    entries: tuple[tuple[int, float], ...]
    metadata: dict

    def to_json_doc(self) -> dict:
        return {"entries": [[s, lr] for s, lr in self.entries], "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_json_doc(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScheduleRecord":
        doc = json.loads(text)
        entries = tuple((int(s), float(lr)) for s, lr in doc["entries"])
        return cls(entries, doc["metadata"])

    def to_csv(self) -> str:
        lines = ["step,lr"]
        lines.extend(f"{s},{lr}" for s, lr in self.entries)
        return "\n".join(lines) + "\n"


def step_accounting(record: ScheduleRecord) -> tuple[int, int]:
    """(applied_steps, exploration_steps) summed over stages. With default
    tau_prime_ratio=0.1 and k=10 the two are equal: candidate evaluation
    costs exactly one stage worth of extra steps."""
    stages = record.metadata["stages"]
    applied = sum(s["applied_steps"] for s in stages)
    exploration = sum(s["exploration_steps"] for s in stages)
    return applied, exploration


class _StageState:
    """Mutable bookkeeping for the stage currently being searched."""

    def __init__(self, plan: StagePlan, tau_eff: int, tau_prime_eff: int, start_step: int):
        self.plan = plan
        self.tau_eff = tau_eff
        self.tau_prime_eff = tau_prime_eff
        self.start_step = start_step
        self.candidate_index = 0
        self.observations: list[Observation] = []
        self.posterior = fit_posterior([])
        self.candidates: list[dict] = []
        self.current_x = 0.0
        self.current_lr = 0.0
        self.points: list[tuple[int, float]] = []
        self.current_diverged = False
        self.last_report_step = -1
        self.chosen_lr: float | None = None
        self.chosen_x: float | None = None
        self.chosen_forecast: float | None = None
        self.apply_diverged = False
        self.exploration_steps = 0


class Controller:
    """One session's state machine. handle_event(event) -> commands."""

    def __init__(self, config: SearchConfig):
        self.config = config
        self.phase = Phase.IDLE
        self.global_step = 0  # model-update steps applied so far (warmup included)
        self.stage_index = 0
        self.entries: list[tuple[int, float]] = []
        self.loss_trace: list[tuple[int, float, str]] = []
        self.stages_meta: list[dict] = []
        self.stopped_reason: str | None = None
        self.aborted = False
        self._warmup_done = 0
        self._stage: _StageState | None = None
        self._outstanding: int | None = None
        self._next_command_id = 1
        self._worst_finite_loss: float | None = None
        self._interval = (math.log10(config.lr_min), math.log10(config.lr_max))

    # -- event entry point ---------------------------------------------------

    def handle_event(self, event: Message) -> list[Message]:
        if isinstance(event, Hello):
            return self._on_hello()
        if isinstance(event, LossReport):
            return self._on_loss(event)
        if isinstance(event, CommandDone):
            return self._on_done(event)
        if isinstance(event, TrainerError):
            return self._finish(f"trainer error: {event.message}", aborted=True)
        if isinstance(event, Stop):
            return self._finish("trainer requested stop")
        raise OrderViolation(f"unexpected event type {type(event).__name__}")

    # -- helpers ---------------------------------------------------------------

    def _new_command_id(self) -> int:
        cid = self._next_command_id
        self._next_command_id += 1
        return cid

    def _report_every(self, loss_source: str) -> int:
        return 1 if loss_source == LOSS_TRAIN else self.config.val_every

    def _on_hello(self) -> list[Message]:
        if self.phase is not Phase.IDLE:
            raise OrderViolation("hello received twice")
        head = [EvalConfig(self.config.val_minibatches, self.config.val_every)]
        if self.config.warmup_steps > 0 and self.global_step < self.config.budget_steps:
            self.phase = Phase.WARMUP
            return head + self._warmup_cmds()
        return head + self._begin_stage()

    def _warmup_cmds(self) -> list[Message]:
        # one command pair per step: the LR ramps linearly up to the peak
        i = self._warmup_done
        lr = self.config.warmup_peak_lr * (i + 1) / self.config.warmup_steps
        self.entries.append((self.global_step, lr))
        cid = self._new_command_id()
        self._outstanding = cid
        return [SetLr(lr), Train(1, LOSS_TRAIN, 1, cid)]

    def _begin_stage(self) -> list[Message]:
        remaining = self.config.budget_steps - self.global_step
        if remaining <= 0:
            return self._finish("budget reached")
        plan = stage_plan(self.config, self.stage_index)
        if plan.tau <= remaining:
            tau_eff, tau_prime_eff = plan.tau, plan.tau_prime
        else:
            # final stage shrinks to the leftover budget, tau' with it
            tau_eff = remaining
            tau_prime_eff = max(1, int(round(tau_eff * self.config.tau_prime_ratio)))
        self._stage = _StageState(plan, tau_eff, tau_prime_eff, self.global_step)
        self.phase = Phase.EXPLORING
        return [SaveCkpt()] + self._candidate_cmds()

    def _candidate_cmds(self) -> list[Message]:
        stage = self._stage
        x = lcb_argmin(stage.posterior, self.config.kappa, self._interval)
        lr = min(max(10.0**x, self.config.lr_min), self.config.lr_max)
        stage.current_x = x
        stage.current_lr = lr
        stage.points = []
        stage.current_diverged = False
        stage.last_report_step = -1
        cid = self._new_command_id()
        self._outstanding = cid
        return [
            SetLr(lr),
            Train(
                stage.tau_prime_eff,
                stage.plan.loss_source,
                self._report_every(stage.plan.loss_source),
                cid,
            ),
        ]

    def _on_loss(self, report: LossReport) -> list[Message]:
        if self.phase not in (Phase.WARMUP, Phase.EXPLORING, Phase.APPLYING):
            raise OrderViolation(f"loss report in phase {self.phase.value}")
        if self._outstanding is None:
            raise OrderViolation("loss report with no outstanding train command")
        if self.phase is Phase.WARMUP:
            return []
        stage = self._stage
        if report.step <= stage.last_report_step:
            raise OrderViolation(
                f"loss step {report.step} not increasing (last {stage.last_report_step})"
            )
        stage.last_report_step = report.step
        if report.diverged:
            stage.current_diverged = True
            if self.phase is Phase.APPLYING:
                stage.apply_diverged = True
            return []
        if self._worst_finite_loss is None or report.value > self._worst_finite_loss:
            self._worst_finite_loss = report.value
        if self.phase is Phase.EXPLORING:
            stage.points.append((report.step, report.value))
        else:
            self.loss_trace.append((stage.start_step + report.step, report.value, report.source))
        return []

    def _on_done(self, done: CommandDone) -> list[Message]:
        if self._outstanding is None:
            raise OrderViolation("command_done with no outstanding train command")
        if done.command_id != self._outstanding:
            raise OrderViolation(
                f"command_done id {done.command_id} does not match outstanding {self._outstanding}"
            )
        self._outstanding = None
        if self.phase is Phase.WARMUP:
            return self._advance_warmup()
        if self.phase is Phase.EXPLORING:
            return self._finish_candidate()
        if self.phase is Phase.APPLYING:
            return self._finish_stage()
        raise OrderViolation(f"command_done in phase {self.phase.value}")

    def _advance_warmup(self) -> list[Message]:
        self.global_step += 1
        self._warmup_done += 1
        if (
            self._warmup_done < self.config.warmup_steps
            and self.global_step < self.config.budget_steps
        ):
            return self._warmup_cmds()
        return self._begin_stage()

    def _divergence_sentinel(self) -> float:
        worst = self._worst_finite_loss if self._worst_finite_loss is not None else 1.0
        return 10.0 * max(worst, 1.0)

    def _finish_candidate(self) -> list[Message]:
        stage = self._stage
        if stage.current_diverged or not stage.points:
            forecast = self._divergence_sentinel()
            diverged = True
            steps_run = max(stage.last_report_step, 0)
        else:
            series = LossSeries.from_points(stage.points, stage.tau_eff, stage.tau_prime_eff)
            forecast = evaluate_candidate(series, self.config.smoothing)
            diverged = False
            steps_run = stage.tau_prime_eff
        stage.exploration_steps += steps_run
        stage.candidates.append(
            {
                "log10_lr": stage.current_x,
                "lr": stage.current_lr,
                "forecast": forecast,
                "steps_run": steps_run,
                "diverged": diverged,
                # first measurement after the restore: bit-identical across
                # candidates when checkpointing is faithful
                "first_loss": stage.points[0][1] if stage.points else None,
            }
        )
        stage.observations.append(Observation(stage.current_x, forecast))
        stage.posterior = fit_posterior(stage.observations, self.config.noise_variance)
        stage.candidate_index += 1
        if stage.candidate_index < self.config.k:
            return [RestoreCkpt()] + self._candidate_cmds()
        return [RestoreCkpt()] + self._apply_cmds()

    def _apply_cmds(self) -> list[Message]:
        stage = self._stage
        pairs = [(c["log10_lr"], c["forecast"]) for c in stage.candidates]
        x, forecast = select_best(pairs, stage.posterior)
        lr = min(max(10.0**x, self.config.lr_min), self.config.lr_max)
        stage.chosen_x = x
        stage.chosen_lr = lr
        stage.chosen_forecast = forecast
        stage.last_report_step = -1
        stage.current_diverged = False
        self.entries.append((self.global_step, lr))
        self.phase = Phase.APPLYING
        cid = self._new_command_id()
        self._outstanding = cid
        return [
            SetLr(lr),
            Train(
                stage.tau_eff,
                stage.plan.loss_source,
                self._report_every(stage.plan.loss_source),
                cid,
            ),
        ]

    def _finish_stage(self) -> list[Message]:
        stage = self._stage
        applied = stage.tau_eff if not stage.apply_diverged else max(stage.last_report_step, 0)
        self.global_step += applied
        self.stages_meta.append(
            {
                "stage_index": stage.plan.stage_index,
                "start_step": stage.start_step,
                "tau": stage.tau_eff,
                "tau_prime": stage.tau_prime_eff,
                "loss_source": stage.plan.loss_source,
                "chosen_lr": stage.chosen_lr,
                "chosen_log10_lr": stage.chosen_x,
                "forecast": stage.chosen_forecast,
                "applied_steps": applied,
                "exploration_steps": stage.exploration_steps,
                "apply_diverged": stage.apply_diverged,
                "candidates": stage.candidates,
            }
        )
        self._stage = None
        self.stage_index += 1
        if self.global_step >= self.config.budget_steps:
            return self._finish("budget reached")
        return self._begin_stage()

    def _finish(self, reason: str, aborted: bool = False) -> list[Message]:
        self.phase = Phase.STOPPED
        self.stopped_reason = reason
        self.aborted = aborted
        return [Shutdown(reason)]

    # -- results ---------------------------------------------------------------

    @property
    def record(self) -> ScheduleRecord:
        applied = sum(s["applied_steps"] for s in self.stages_meta)
        exploration = sum(s["exploration_steps"] for s in self.stages_meta)
        metadata = {
            "config": self.config.to_dict(),
            "warmup_steps_run": self._warmup_done,
            "applied_steps": applied,
            "exploration_steps": exploration,
            "total_scheduled_steps": self.global_step,
            "stopped_reason": self.stopped_reason,
            "aborted": self.aborted,
            "stages": self.stages_meta,
        }
        return ScheduleRecord(tuple(self.entries), metadata)


def next_command(controller: Controller, event: Message) -> tuple[Controller, list[Message]]:
    """Functional view of the state machine: returns the (mutated) controller
    and the commands to send for this event."""
    return controller, controller.handle_event(event)
