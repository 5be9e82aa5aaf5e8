"""Multi-task detection objective with online hard example mining.

The objective is L_cls / N_cls + (lambda1 * L_box + lambda2 * L_lmk) / N_reg
with lambda1 = 0.25 and lambda2 = 0.1. L_cls is two-class cross entropy
over the OHEM-selected anchors, L_box and L_lmk are smooth-L1 sums over
positive anchors (landmarks additionally masked per point). N_cls is the
number of selected anchors and N_reg the number of positives, each floored
at one; this reads the published batch-size/anchor-count normalizer in the
RPN sense, which is the only reading consistent with the working lambda
values.

OHEM keeps every positive and the hardest negatives at a 3:1
negative:positive ratio, ranked by classification loss (negatives carry no
regression loss, so only the class term is comparable across labels). A
floor of 16 negatives keeps gradients alive on positive-free crops.

Focal loss is available as a configurable alternative to cross entropy;
with focusing parameter 0 and unit class weights it reduces to cross
entropy exactly.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .anchors import LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE, MatchResult

LAMBDA_BOX = 0.25
LAMBDA_LANDMARK = 0.1
OHEM_NEGATIVE_RATIO = 3
OHEM_NEGATIVE_FLOOR = 16
SMOOTH_L1_BETA = 1.0


@dataclass
class LossBreakdown:
    """Per-batch loss terms and the counts that normalized them."""

    total: torch.Tensor
    cls_loss: float
    box_loss: float
    lmk_loss: float
    n_cls: int
    n_reg: int
    num_positive: int
    num_selected_negative: int

    def to_dict(self):
        return {
            "total": float(self.total.detach()),
            "cls_loss": self.cls_loss,
            "box_loss": self.box_loss,
            "lmk_loss": self.lmk_loss,
            "n_cls": self.n_cls,
            "n_reg": self.n_reg,
            "num_positive": self.num_positive,
            "num_selected_negative": self.num_selected_negative,
        }


def ohem_select(cls_loss, labels, ratio=OHEM_NEGATIVE_RATIO, floor=OHEM_NEGATIVE_FLOOR):
    """Select anchors for the classification loss.

    All positives are kept plus the ``ratio * P`` highest-loss negatives
    (ties broken by lower anchor index); with zero positives the ``floor``
    hardest negatives are kept instead. Ignore-band anchors are never
    selected.

    Args:
        cls_loss: (A,) per-anchor classification loss (tensor or array).
        labels: (A,) labels from MatchResult.

    Returns:
        (A,) bool numpy mask of selected anchors.
    """
    loss = cls_loss.detach().cpu().numpy() if torch.is_tensor(cls_loss) else np.asarray(cls_loss)
    labels = np.asarray(labels)
    selected = labels == LABEL_POSITIVE
    num_pos = int(selected.sum())
    budget = ratio * num_pos if num_pos > 0 else floor

    neg_idx = np.flatnonzero(labels == LABEL_NEGATIVE)
    if budget > 0 and neg_idx.size:
        order = np.argsort(-loss[neg_idx], kind="stable")
        selected[neg_idx[order[:budget]]] = True
    return selected


def classification_loss(logits, targets, focal=False, focal_gamma=2.0, focal_alpha=None):
    """Per-anchor two-class loss, reduction-free.

    Args:
        logits: (A, 2) raw scores, channel 0 background, channel 1 face.
        targets: (A,) int64 class indices.
        focal: use the focal reweighting of cross entropy.
        focal_gamma: focusing parameter; 0 recovers cross entropy.
        focal_alpha: face-class weight in [0, 1]; None means unit weights.
    """
    ce = F.cross_entropy(logits, targets, reduction="none")
    if not focal:
        return ce
    pt = torch.exp(-ce)
    loss = (1.0 - pt) ** focal_gamma * ce
    if focal_alpha is not None:
        weights = torch.where(targets == 1, focal_alpha, 1.0 - focal_alpha)
        loss = weights * loss
    return loss


@dataclass
class LossSums:
    """Unnormalized loss sums, kept on the graph for multi-device syncing."""

    cls_sum: torch.Tensor
    box_sum: torch.Tensor
    lmk_sum: torch.Tensor
    num_positive: int
    num_selected_negative: int


def loss_sums(
    cls_logits,
    box_deltas,
    lmk_deltas,
    matches,
    ohem_ratio=OHEM_NEGATIVE_RATIO,
    ohem_floor=OHEM_NEGATIVE_FLOOR,
    ohem_per_image=True,
    focal=False,
    focal_gamma=2.0,
    focal_alpha=None,
) -> LossSums:
    """Unnormalized classification/box/landmark sums over a batch shard.

    Data-parallel training computes these per device, sums the counts
    across devices, and only then normalizes, so sharded gradients equal
    the gradients of the concatenated batch.
    """
    batch = cls_logits.shape[0]
    if len(matches) != batch:
        raise ValueError(f"{batch} images but {len(matches)} match results")

    cls_sum = cls_logits.sum() * 0.0
    box_sum = cls_sum.clone()
    lmk_sum = cls_sum.clone()
    num_pos = 0
    num_sel_neg = 0

    per_image = []
    for b, match in enumerate(matches):
        labels_t = torch.as_tensor(match.labels, device=cls_logits.device)
        targets = (labels_t == LABEL_POSITIVE).long()
        per_anchor = classification_loss(
            cls_logits[b], targets, focal=focal, focal_gamma=focal_gamma, focal_alpha=focal_alpha
        )
        per_image.append((per_anchor, match))

    if ohem_per_image:
        masks = [
            ohem_select(per_anchor, match.labels, ratio=ohem_ratio, floor=ohem_floor)
            for per_anchor, match in per_image
        ]
    else:
        joint_loss = np.concatenate(
            [p.detach().cpu().numpy() for p, _ in per_image]
        )
        joint_labels = np.concatenate([m.labels for _, m in per_image])
        joint = ohem_select(joint_loss, joint_labels, ratio=ohem_ratio, floor=ohem_floor)
        masks = np.split(joint, np.cumsum([len(m.labels) for _, m in per_image])[:-1])

    for (per_anchor, match), mask in zip(per_image, masks):
        mask_t = torch.as_tensor(np.asarray(mask), device=cls_logits.device)
        cls_sum = cls_sum + per_anchor[mask_t].sum()
        num_sel_neg += int((np.asarray(mask) & (match.labels == LABEL_NEGATIVE)).sum())

    for b, match in enumerate(matches):
        pos = np.flatnonzero(match.labels == LABEL_POSITIVE)
        num_pos += pos.size
        if pos.size == 0:
            continue
        pos_t = torch.as_tensor(pos, device=cls_logits.device)
        box_target = torch.as_tensor(
            match.box_targets[pos], dtype=box_deltas.dtype, device=box_deltas.device
        )
        box_sum = box_sum + F.smooth_l1_loss(
            box_deltas[b, pos_t], box_target, beta=SMOOTH_L1_BETA, reduction="sum"
        )
        valid = match.landmark_valid[pos]
        if valid.any():
            point_mask = torch.as_tensor(
                np.repeat(valid, 2, axis=1), device=lmk_deltas.device
            )
            lmk_target = torch.as_tensor(
                match.landmark_targets[pos], dtype=lmk_deltas.dtype, device=lmk_deltas.device
            )
            diff = F.smooth_l1_loss(
                lmk_deltas[b, pos_t], lmk_target, beta=SMOOTH_L1_BETA, reduction="none"
            )
            lmk_sum = lmk_sum + diff[point_mask].sum()

    return LossSums(cls_sum, box_sum, lmk_sum, num_pos, num_sel_neg)


def normalize_sums(sums: LossSums, lambda_box=LAMBDA_BOX, lambda_landmark=LAMBDA_LANDMARK):
    """Apply the floored normalizers to unnormalized sums."""
    n_cls = max(1, sums.num_positive + sums.num_selected_negative)
    n_reg = max(1, sums.num_positive)
    total = sums.cls_sum / n_cls + (
        lambda_box * sums.box_sum + lambda_landmark * sums.lmk_sum
    ) / n_reg
    return LossBreakdown(
        total=total,
        cls_loss=float(sums.cls_sum.detach()),
        box_loss=float(sums.box_sum.detach()),
        lmk_loss=float(sums.lmk_sum.detach()),
        n_cls=n_cls,
        n_reg=n_reg,
        num_positive=sums.num_positive,
        num_selected_negative=sums.num_selected_negative,
    )


def multitask_loss(
    cls_logits,
    box_deltas,
    lmk_deltas,
    matches,
    lambda_box=LAMBDA_BOX,
    lambda_landmark=LAMBDA_LANDMARK,
    **kwargs,
) -> LossBreakdown:
    """Batch objective over flattened head outputs.

    Args:
        cls_logits: (B, A, 2) tensors aligned with the anchor ordering.
        box_deltas: (B, A, 4).
        lmk_deltas: (B, A, 10).
        matches: list of B MatchResult.
        **kwargs: OHEM and focal options, see :func:`loss_sums`.

    Returns:
        LossBreakdown; ``total`` stays attached to the graph. A batch with
        no selected anchors yields zero loss with zero gradients.
    """
    sums = loss_sums(cls_logits, box_deltas, lmk_deltas, matches, **kwargs)
    return normalize_sums(sums, lambda_box=lambda_box, lambda_landmark=lambda_landmark)
