"""Six-level feature pyramid over four backbone taps.

Lateral 1x1 projections bring every tap to the pyramid width; the top-down
pathway upsamples (nearest, to the exact lateral size so ceiling-divided
grids line up) and adds. Levels beyond the deepest tap are synthesized by
stride-2 3x3 convolutions on the previous pyramid level. There are no
post-merge smoothing convolutions: the context module that follows each
level performs the 3x3 mixing.
"""

import torch.nn as nn
import torch.nn.functional as F


class FeaturePyramid(nn.Module):
    def __init__(self, tap_channels, out_channels, num_levels=6):
        super().__init__()
        if num_levels < len(tap_channels):
            raise ValueError(
                f"num_levels {num_levels} smaller than the {len(tap_channels)} backbone taps"
            )
        self.num_levels = num_levels
        self.laterals = nn.ModuleList(
            nn.Conv2d(c, out_channels, 1) for c in tap_channels
        )
        self.extras = nn.ModuleList(
            nn.Conv2d(out_channels, out_channels, 3, stride=2, padding=1)
            for _ in range(num_levels - len(tap_channels))
        )

    def forward(self, taps):
        if len(taps) != len(self.laterals):
            raise ValueError(f"expected {len(self.laterals)} taps, got {len(taps)}")
        laterals = [conv(t) for conv, t in zip(self.laterals, taps)]
        for i in range(len(laterals) - 2, -1, -1):
            up = F.interpolate(laterals[i + 1], size=laterals[i].shape[-2:], mode="nearest")
            laterals[i] = laterals[i] + up
        levels = laterals
        x = levels[-1]
        for i, extra in enumerate(self.extras):
            x = extra(x if i == 0 else F.leaky_relu(x, 0.1))
            levels.append(x)
        return levels
