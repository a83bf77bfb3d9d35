"""Message types exchanged between controller and trainer.

The same dataclasses drive both transports: in-process trainers receive them
directly, networked trainers as newline-delimited JSON (see protocol module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

__all__ = [
    "PROTOCOL_VERSION",
    "DIVERGENCE_LOSS",
    "LOSS_TRAIN",
    "LOSS_VALIDATION",
    "SetLr",
    "SaveCkpt",
    "RestoreCkpt",
    "Train",
    "EvalConfig",
    "Shutdown",
    "Hello",
    "LossReport",
    "CommandDone",
    "TrainerError",
    "Stop",
    "Command",
    "Event",
    "Message",
]

PROTOCOL_VERSION = "autolrs/1"

# JSON cannot carry non-finite numbers, so wire adapters clamp a diverged
# loss to this value; the controller treats anything at or above it (or any
# non-finite in-process value) as divergence.
DIVERGENCE_LOSS = 1e30

LOSS_TRAIN = "train"
LOSS_VALIDATION = "validation"


# ---- controller -> trainer -------------------------------------------------


@dataclass(frozen=True)
class SetLr:
    """Set the learning rate for all subsequent steps."""

    lr: float


@dataclass(frozen=True)
class SaveCkpt:
    """Snapshot model, optimizer and RNG state; overwrites the previous snapshot."""


@dataclass(frozen=True)
class RestoreCkpt:
    """Restore the last snapshot bit-exactly."""


@dataclass(frozen=True)
class Train:
    """Run `steps` optimizer steps, reporting the requested loss every
    report_every steps; reply with CommandDone carrying command_id."""

    steps: int
    loss_source: str
    report_every: int
    command_id: int


@dataclass(frozen=True)
class EvalConfig:
    """How validation loss is measured: mean over val_minibatches fixed
    mini-batches, evaluated every val_every steps."""

    val_minibatches: int
    val_every: int


@dataclass(frozen=True)
class Shutdown:
    """Session is over; the trainer should disconnect."""

    reason: str


# ---- trainer -> controller -------------------------------------------------


@dataclass(frozen=True)
class Hello:
    """Opens a session; config_overrides patch the server's search config."""

    protocol_version: str = PROTOCOL_VERSION
    config_overrides: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class LossReport:
    """One loss measurement; step counts from the start of the current Train
    command (a validation-source run also reports once at step 0)."""

    step: int
    value: float
    source: str

    @property
    def diverged(self) -> bool:
        return not math.isfinite(self.value) or self.value >= DIVERGENCE_LOSS


@dataclass(frozen=True)
class CommandDone:
    """The Train command with this id has finished."""

    command_id: int


@dataclass(frozen=True)
class TrainerError:
    """Unrecoverable trainer-side failure; aborts the session."""

    message: str


@dataclass(frozen=True)
class Stop:
    """Trainer asks to end the session cleanly."""


Command = Union[SetLr, SaveCkpt, RestoreCkpt, Train, EvalConfig, Shutdown]
Event = Union[Hello, LossReport, CommandDone, TrainerError, Stop]
Message = Union[Command, Event]
