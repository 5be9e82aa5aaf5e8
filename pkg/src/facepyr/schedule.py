"""Learning-rate schedule and optimizer settings.

The default schedule warms up linearly from 1e-3 to 1e-2 over the first
five epochs, holds the peak, then steps down by 10x at epochs 50 and 70,
ending at epoch 90. The step boundaries follow the published curve
samples: the first decay applies from its epoch inclusive, later decays
strictly after theirs, i.e. the default is piecewise

    [0, 5) warmup, [5, 50) 1e-2, [50, 70] 1e-3, (70, 90] 1e-4.

``scale`` multiplies every epoch boundary by one factor so short desk runs
(e.g. 30 epochs at scale 1/3) preserve the schedule's shape.
"""

from dataclasses import dataclass


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleSpec:
    base_lr: float = 1e-3
    warmup_epochs: float = 5.0
    warmup_factor: float = 10.0
    decay_epochs: tuple = (50.0, 70.0)
    decay_factor: float = 0.1
    total_epochs: float = 90.0
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ScheduleError("schedule scale must be positive")
        if sorted(self.decay_epochs) != list(self.decay_epochs):
            raise ScheduleError("decay epochs must be increasing")
        if self.decay_epochs and self.decay_epochs[-1] >= self.total_epochs:
            raise ScheduleError("decay epochs must precede total_epochs")

    @property
    def scaled_total(self):
        return self.total_epochs * self.scale


@dataclass(frozen=True)
class OptimizerSpec:
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8  # per device
    devices: int = 1

    @property
    def effective_batch(self):
        return self.batch_size * self.devices


def lr_at(spec: ScheduleSpec, epoch: float) -> float:
    """Learning rate at a fractional epoch position.

    Pure function of the epoch; resuming a run at any position reproduces
    the identical curve.

    Raises:
        ScheduleError: epoch outside [0, total_epochs * scale].
    """
    if not 0.0 <= epoch <= spec.scaled_total:
        raise ScheduleError(
            f"epoch {epoch} outside schedule range [0, {spec.scaled_total}]"
        )
    e = epoch / spec.scale
    if e < spec.warmup_epochs:
        frac = e / spec.warmup_epochs
        return spec.base_lr * (1.0 + (spec.warmup_factor - 1.0) * frac)
    peak = spec.base_lr * spec.warmup_factor
    steps = 0
    for i, d in enumerate(spec.decay_epochs):
        if (e >= d) if i == 0 else (e > d):
            steps += 1
    return peak * spec.decay_factor ** steps
