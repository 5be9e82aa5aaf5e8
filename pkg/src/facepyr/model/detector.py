"""Full detector: backbone -> feature pyramid -> context -> shared heads.

Heads are 1x1 convolutions shared across pyramid levels, predicting per
anchor 2 class logits, 4 box deltas, and 10 landmark deltas. Per-level
outputs flatten to the exact anchor order of :func:`facepyr.anchors.
build_anchors` (level-major, then row, column, scale).

After each context module sits a per-level 3x3 convolution: the plug point
for a modulated deformable convolution. The default build substitutes a
standard convolution there so the model runs on any backend; the
substitution is recorded in run metadata.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..anchors import PyramidSpec
from .backbones import TAP_STRIDES, build_backbone
from .context import build_context_module
from .fpn import FeaturePyramid


class ModulatedDeformBlock(nn.Module):
    """DCNv2-style 3x3 convolution with learned offsets and masks."""

    def __init__(self, channels):
        super().__init__()
        from torchvision.ops import DeformConv2d

        self.offset_mask = nn.Conv2d(channels, 27, 3, padding=1)
        nn.init.zeros_(self.offset_mask.weight)
        nn.init.zeros_(self.offset_mask.bias)
        self.conv = DeformConv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        om = self.offset_mask(x)
        offset, mask = om[:, :18], torch.sigmoid(om[:, 18:])
        return self.conv(x, offset, mask)


@dataclass
class LevelPrediction:
    cls: torch.Tensor  # (B, 2k, H, W)
    box: torch.Tensor  # (B, 4k, H, W)
    lmk: torch.Tensor  # (B, 10k, H, W)


def flatten_predictions(levels):
    """Flatten per-level maps to (B, A, C) tensors in anchor order.

    The anchor index of level l, cell (i, j), scale m is
    offset_l + (i * W_l + j) * k + m, matching ``build_anchors``.
    """
    def flat(t, c):
        b = t.shape[0]
        return t.permute(0, 2, 3, 1).reshape(b, -1, c)

    cls = torch.cat([flat(lv.cls, 2) for lv in levels], dim=1)
    box = torch.cat([flat(lv.box, 4) for lv in levels], dim=1)
    lmk = torch.cat([flat(lv.lmk, 10) for lv in levels], dim=1)
    return cls, box, lmk


class FaceDetector(nn.Module):
    """Single-stage face and landmark detector.

    Args:
        backbone: identifier for :func:`build_backbone`.
        context_variant: one of the ten context module names.
        context_filters: pyramid/context channel width n.
        pyramid: PyramidSpec; its level count and scale multipliers fix the
            number of pyramid levels and anchors per cell.
        deformable: use the modulated deformable post-context convolution
            instead of the standard 3x3 substitute.
    """

    def __init__(
        self,
        backbone="tiny-stub",
        backbone_width=0.25,
        backbone_depth=101,
        pretrained_path=None,
        context_variant="retina2",
        context_filters=64,
        pyramid: PyramidSpec | None = None,
        deformable=False,
    ):
        super().__init__()
        self.pyramid_spec = pyramid if pyramid is not None else PyramidSpec()
        strides = self.pyramid_spec.strides
        if strides[0] not in TAP_STRIDES:
            raise ValueError(
                f"first pyramid stride {strides[0]} has no backbone tap; taps sit at {TAP_STRIDES}"
            )
        self._tap_start = TAP_STRIDES.index(strides[0])
        lateral = tuple(s for s in strides if s <= TAP_STRIDES[-1])
        expected = TAP_STRIDES[self._tap_start : self._tap_start + len(lateral)]
        if lateral != expected:
            raise ValueError(
                f"pyramid strides {strides} do not align with backbone taps {TAP_STRIDES}"
            )
        self._num_lateral = len(lateral)
        self.deformable = bool(deformable)

        n = context_filters
        k = self.pyramid_spec.anchors_per_cell
        self.anchors_per_cell = k

        self._backbone_loaded = pretrained_path is not None
        self.backbone = build_backbone(
            backbone, width=backbone_width, depth=backbone_depth, pretrained_path=pretrained_path
        )
        tap_channels = self.backbone.tap_channels[
            self._tap_start : self._tap_start + self._num_lateral
        ]
        self.fpn = FeaturePyramid(tap_channels, n, num_levels=self.pyramid_spec.num_levels)
        self.contexts = nn.ModuleList(
            build_context_module(context_variant, n, n)
            for _ in range(self.pyramid_spec.num_levels)
        )
        post = ModulatedDeformBlock if self.deformable else (
            lambda c: nn.Conv2d(c, c, 3, padding=1)
        )
        self.post_context = nn.ModuleList(post(n) for _ in range(self.pyramid_spec.num_levels))

        self.cls_head = nn.Conv2d(n, 2 * k, 1)
        self.box_head = nn.Conv2d(n, 4 * k, 1)
        self.lmk_head = nn.Conv2d(n, 10 * k, 1)

        self._init_weights()

    def _init_weights(self):
        # kaiming for fresh convs; a backbone with loaded weights is left as is
        fresh = [self.fpn, self.contexts, self.post_context,
                 self.cls_head, self.box_head, self.lmk_head]
        if not self._backbone_loaded:
            fresh.append(self.backbone)
        for module in fresh:
            for m in module.modules():
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, a=0.1, nonlinearity="leaky_relu")
                    if m.bias is not None:
                        nn.init.zeros_(m.bias)
        for block in self.post_context:
            if isinstance(block, ModulatedDeformBlock):
                # offsets and masks start at zero so the block begins as a
                # plain convolution
                nn.init.zeros_(block.offset_mask.weight)
                nn.init.zeros_(block.offset_mask.bias)

    def run_metadata(self):
        """Facts about the build recorded alongside checkpoints and logs."""
        return {
            "deformable": self.deformable,
            "post_context": "modulated-deform-conv" if self.deformable else "standard-conv-substitute",
            "anchors_per_cell": self.anchors_per_cell,
            "num_levels": self.pyramid_spec.num_levels,
        }

    def forward(self, images):
        """images: (B, 3, H, W) normalized floats -> list of LevelPrediction."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(images.shape)}")
        taps = self.backbone(images)
        taps = taps[self._tap_start : self._tap_start + self._num_lateral]
        levels = self.fpn(taps)
        out = []
        for feat, ctx, post in zip(levels, self.contexts, self.post_context):
            feat = F.leaky_relu(post(ctx(feat)), 0.1)
            out.append(
                LevelPrediction(
                    cls=self.cls_head(feat), box=self.box_head(feat), lmk=self.lmk_head(feat)
                )
            )
        return out
