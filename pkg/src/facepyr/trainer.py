"""SGD training loop: warmup/step schedule, OHEM loss, checkpoints, resume.

All randomness flows from the run seed through named substreams: "init"
(weight initialization), "order" (epoch shuffles), "crop" (augmentation,
keyed further by epoch and sample index). Two runs with the same seed on
one device produce identical step-by-step losses.

Multi-device runs are simulated by sharding each batch: per-shard loss
sums are combined with globally aggregated normalizer counts before the
backward passes, so the accumulated gradients equal single-device
gradients on the concatenated batch.

Checkpoints are single archives of named parameter tensors plus a metadata
record (config hash, seed, epoch); the per-step JSON-lines log carries the
learning rate and the loss breakdown.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .anchors import PyramidSpec, build_anchors, match
from .data import Sample, normalize_image, random_crop
from .loss import LossBreakdown, loss_sums, normalize_sums
from .model import flatten_predictions
from .rng import substream
from .schedule import OptimizerSpec, ScheduleSpec, lr_at


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries the offending batch index."""

    def __init__(self, step, batch_indices, dump_path=None):
        msg = f"non-finite loss at step {step} (batch indices {list(batch_indices)})"
        if dump_path:
            msg += f"; diagnostics written to {dump_path}"
        super().__init__(msg)
        self.step = step
        self.batch_indices = list(batch_indices)


def seed_torch_init(seed):
    """Seed torch's global generator from the "init" substream.

    Call immediately before constructing the model so fresh-layer
    initialization is governed by the run seed.
    """
    torch.manual_seed(int(substream(seed, "init").integers(2**31)))


def split_decay_param_groups(model, weight_decay):
    """Two param groups: normalization scale/offset parameters skip decay."""
    norm_types = (torch.nn.BatchNorm2d, torch.nn.GroupNorm, torch.nn.LayerNorm)
    norm_params = set()
    for module in model.modules():
        if isinstance(module, norm_types):
            norm_params.update(id(p) for p in module.parameters(recurse=False))
    decay, no_decay = [], []
    for p in model.parameters():
        if not p.requires_grad:
            continue
        (no_decay if id(p) in norm_params else decay).append(p)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


@dataclass
class TrainerConfig:
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    crop_size: int | None = None  # None: use images at their native size
    loss_kwargs: dict = field(default_factory=dict)
    lambda_box: float = 0.25
    lambda_landmark: float = 0.1
    match_kwargs: dict = field(default_factory=dict)
    checkpoint_every: int = 1
    log_every: int = 1


class Trainer:
    """Drives one training run over an in-memory dataset.

    Args:
        model: FaceDetector (already seeded/constructed).
        dataset: list of (image, Annotation) pairs.
        config: TrainerConfig.
        seed: run seed; governs data order and crop sampling here.
        out_dir: run directory for log.jsonl and checkpoints/ (None skips
            all file output).
        metadata: extra facts recorded in every checkpoint (config hash...).
    """

    def __init__(self, model, dataset, config: TrainerConfig, seed, out_dir=None, metadata=None):
        self.model = model
        self.dataset = dataset
        self.config = config
        self.seed = seed
        self.out_dir = out_dir
        self.metadata = dict(metadata or {})
        self.history = []
        self.start_epoch = 0
        self._anchor_cache = {}

        self.optimizer = torch.optim.SGD(
            split_decay_param_groups(model, config.optimizer.weight_decay),
            lr=config.schedule.base_lr,
            momentum=config.optimizer.momentum,
        )
        if out_dir:
            os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
            self._log_fh = open(os.path.join(out_dir, "log.jsonl"), "a")
        else:
            self._log_fh = None

    # -- data ---------------------------------------------------------------

    def _anchors_for(self, image_size):
        if image_size not in self._anchor_cache:
            self._anchor_cache[image_size] = build_anchors(
                self.model.pyramid_spec, image_size
            )
        return self._anchor_cache[image_size]

    def _prepare(self, index, epoch):
        image, ann = self.dataset[index]
        faces = ann.trainable_faces()
        if self.config.crop_size is not None:
            rng = substream(self.seed, "crop", epoch, index)
            sample = random_crop(image, faces, rng, crop_size=self.config.crop_size)
        else:
            sample = Sample(image=np.asarray(image), faces=faces)
        grid = self._anchors_for(sample.image.shape[:2])
        boxes = np.array([f.box for f in sample.faces]).reshape(-1, 4)
        lmks = None
        valid = None
        if sample.faces:
            # faces without landmark annotations contribute sentinel rows
            lmks = np.stack([
                f.landmarks if f.landmarks is not None else np.full((5, 2), -1.0)
                for f in sample.faces
            ])
            valid = np.stack([
                f.landmark_valid if f.landmarks is not None else np.zeros(5, bool)
                for f in sample.faces
            ])
        matched = match(grid, boxes, gt_landmarks=lmks, gt_landmark_valid=valid,
                        **self.config.match_kwargs)
        tensor = torch.from_numpy(normalize_image(sample.image)).permute(2, 0, 1)
        return tensor, matched

    def _batches(self, epoch):
        order = substream(self.seed, "order", epoch).permutation(len(self.dataset))
        bs = self.config.optimizer.effective_batch
        for start in range(0, len(order), bs):
            yield order[start : start + bs]

    # -- steps --------------------------------------------------------------

    def _shard_sums(self, images, matches):
        preds = self.model(images)
        cls, box, lmk = flatten_predictions(preds)
        return loss_sums(cls, box, lmk, matches, **self.config.loss_kwargs)

    def _step(self, indices, epoch_pos):
        cfg = self.config
        prepared = [self._prepare(int(i), int(epoch_pos)) for i in indices]
        images = torch.stack([t for t, _ in prepared])
        matches = [m for _, m in prepared]

        lr = lr_at(cfg.schedule, epoch_pos)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad()

        devices = cfg.optimizer.devices
        if devices <= 1:
            sums = self._shard_sums(images, matches)
            breakdown = normalize_sums(sums, cfg.lambda_box, cfg.lambda_landmark)
            breakdown.total.backward()
        else:
            breakdown = self._multi_device_backward(images, matches)

        self.optimizer.step()
        return lr, breakdown

    def _multi_device_backward(self, images, matches) -> LossBreakdown:
        devices = self.config.optimizer.devices
        shard_size = math.ceil(len(matches) / devices)
        shards = []
        for d in range(devices):
            sl = slice(d * shard_size, (d + 1) * shard_size)
            if sl.start >= len(matches):
                break
            shards.append(self._shard_sums(images[sl], matches[sl]))

        num_pos = sum(s.num_positive for s in shards)
        num_sel = sum(s.num_selected_negative for s in shards)
        n_cls = max(1, num_pos + num_sel)
        n_reg = max(1, num_pos)
        cls_total = box_total = lmk_total = 0.0
        for s in shards:
            partial = s.cls_sum / n_cls + (
                self.config.lambda_box * s.box_sum
                + self.config.lambda_landmark * s.lmk_sum
            ) / n_reg
            partial.backward()
            cls_total += float(s.cls_sum.detach())
            box_total += float(s.box_sum.detach())
            lmk_total += float(s.lmk_sum.detach())
        total = cls_total / n_cls + (
            self.config.lambda_box * box_total + self.config.lambda_landmark * lmk_total
        ) / n_reg
        return LossBreakdown(
            total=torch.tensor(total),
            cls_loss=cls_total,
            box_loss=box_total,
            lmk_loss=lmk_total,
            n_cls=n_cls,
            n_reg=n_reg,
            num_positive=num_pos,
            num_selected_negative=num_sel,
        )

    # -- run ----------------------------------------------------------------

    def train(self, val_fn=None):
        """Run from start_epoch to the schedule's end.

        Args:
            val_fn: optional callable(model, epoch) -> float; when given,
                the best-scoring epoch's weights are saved as best.pt.

        Returns:
            history: list of per-step log records.
        """
        cfg = self.config
        total_epochs = int(round(cfg.schedule.scaled_total))
        steps_per_epoch = math.ceil(len(self.dataset) / cfg.optimizer.effective_batch)
        step = self.start_epoch * steps_per_epoch
        best_metric = -math.inf

        self.model.train()
        for epoch in range(self.start_epoch, total_epochs):
            for batch_no, indices in enumerate(self._batches(epoch)):
                epoch_pos = epoch + batch_no / steps_per_epoch
                lr, breakdown = self._step(indices, epoch_pos)
                record = {"step": step, "epoch": epoch_pos, "lr": lr}
                record.update(breakdown.to_dict())
                self.history.append(record)
                if not math.isfinite(record["total"]):
                    dump = self._dump_divergence(step, indices, record)
                    raise TrainingDiverged(step, indices, dump)
                if self._log_fh and step % cfg.log_every == 0:
                    self._log_fh.write(json.dumps(record) + "\n")
                    self._log_fh.flush()
                step += 1
            if self.out_dir and (epoch + 1) % cfg.checkpoint_every == 0:
                self.save_checkpoint(epoch)
            if val_fn is not None:
                metric = val_fn(self.model, epoch)
                if metric > best_metric:
                    best_metric = metric
                    if self.out_dir:
                        self._save(os.path.join(self.out_dir, "checkpoints", "best.pt"), epoch)
        return self.history

    # -- checkpoints ----------------------------------------------------------

    def _save(self, path, epoch):
        torch.save(
            {
                "model": self.model.state_dict(),
                "optimizer": self.optimizer.state_dict(),
                "metadata": {
                    **self.metadata,
                    **self.model.run_metadata(),
                    "seed": self.seed,
                    "epoch": epoch,
                },
            },
            path,
        )

    def save_checkpoint(self, epoch):
        path = os.path.join(self.out_dir, "checkpoints", f"epoch_{epoch:04d}.pt")
        self._save(path, epoch)
        return path

    def resume(self, checkpoint_path):
        """Restore weights, optimizer state, and the schedule position."""
        state = torch.load(checkpoint_path, map_location="cpu", weights_only=False)
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.start_epoch = int(state["metadata"]["epoch"]) + 1
        return state["metadata"]

    def _dump_divergence(self, step, indices, record):
        if not self.out_dir:
            return None
        path = os.path.join(self.out_dir, "divergence.json")
        with open(path, "w") as fh:
            json.dump({"step": step, "batch_indices": [int(i) for i in indices],
                       "record": record}, fh, indent=2)
        return path

    def close(self):
        if self._log_fh:
            self._log_fh.close()
            self._log_fh = None
