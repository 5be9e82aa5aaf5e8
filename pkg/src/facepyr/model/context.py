"""The ten interchangeable context modules.

Every variant maps an ``in_channels`` feature map to exactly ``filters``
output channels at the same spatial size, so they are drop-in replacements
for one another. All convolutions are 3x3, stride 1, same padding, with
bias. A convolution is followed by a leaky rectifier when its output feeds
another convolution; branch outputs that feed only the merge stay linear,
and one shared rectifier is applied after the merge. There is no
normalization inside the modules, so the trainable parameter count of each
variant is exactly its closed-form convolution arithmetic.

Wiring notes for the two ambiguous three-branch variants: Retina merges as
concat(y1, y2 + y3) and Retina2 as concat(y3, y1 + y2); the dense variants
feed each convolution the concatenation of the module input and all
previous branch outputs but merge only the branch outputs.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.1


def _conv3(cin, cout):
    return nn.Conv2d(cin, cout, 3, padding=1)


def _act(x):
    return F.leaky_relu(x, LEAKY_SLOPE)


class _ContextBase(nn.Module):
    divisor = 1

    def __init__(self, in_channels, filters):
        super().__init__()
        if filters % self.divisor != 0:
            raise ValueError(
                f"{type(self).__name__} needs filters divisible by {self.divisor}, got {filters}"
            )
        self.in_channels = in_channels
        self.filters = filters


class Basic1(_ContextBase):
    """Single 3x3 convolution."""

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        self.conv = _conv3(in_channels, filters)

    def forward(self, x):
        return _act(self.conv(x))


class Basic2(_ContextBase):
    """Two chained 3x3 convolutions, outputs concatenated."""

    divisor = 2

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        half = filters // 2
        self.conv1 = _conv3(in_channels, half)
        self.conv2 = _conv3(half, half)

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = self.conv2(y1)
        return _act(torch.cat([y1, y2], dim=1))


class SSH(_ContextBase):
    """Three chained convolutions; concatenation of the final two."""

    divisor = 2

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        half = filters // 2
        self.conv1 = _conv3(in_channels, filters)
        self.conv2 = _conv3(filters, half)
        self.conv3 = _conv3(half, half)

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = _act(self.conv2(y1))
        y3 = self.conv3(y2)
        return _act(torch.cat([y2, y3], dim=1))


class SSH2(_ContextBase):
    """Four chained quarter-width convolutions, all outputs concatenated."""

    divisor = 4

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        quarter = filters // 4
        self.conv1 = _conv3(in_channels, quarter)
        self.conv2 = _conv3(quarter, quarter)
        self.conv3 = _conv3(quarter, quarter)
        self.conv4 = _conv3(quarter, quarter)

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = _act(self.conv2(y1))
        y3 = _act(self.conv3(y2))
        y4 = self.conv4(y3)
        return _act(torch.cat([y1, y2, y3, y4], dim=1))


class RSSH(_ContextBase):
    """Three chained convolutions with all outputs concatenated."""

    divisor = 4

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        self.conv1 = _conv3(in_channels, filters // 2)
        self.conv2 = _conv3(filters // 2, filters // 4)
        self.conv3 = _conv3(filters // 4, filters // 4)

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = _act(self.conv2(y1))
        y3 = self.conv3(y2)
        return _act(torch.cat([y1, y2, y3], dim=1))


class RSSH2(_ContextBase):
    """RSSH with a halved third convolution plus a fourth, all concatenated."""

    divisor = 8

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        self.conv1 = _conv3(in_channels, filters // 2)
        self.conv2 = _conv3(filters // 2, filters // 4)
        self.conv3 = _conv3(filters // 4, filters // 8)
        self.conv4 = _conv3(filters // 8, filters // 8)

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = _act(self.conv2(y1))
        y3 = _act(self.conv3(y2))
        y4 = self.conv4(y3)
        return _act(torch.cat([y1, y2, y3, y4], dim=1))


class Retina(_ContextBase):
    """Three half-width convolutions; concat of the first with the summed rest."""

    divisor = 2

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        half = filters // 2
        self.conv1 = _conv3(in_channels, half)
        self.conv2 = _conv3(half, half)
        self.conv3 = _conv3(half, half)

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = _act(self.conv2(y1))
        y3 = self.conv3(y2)
        return _act(torch.cat([y1, y2 + y3], dim=1))


class Retina2(Retina):
    """Retina with addition and concatenation swapped."""

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = _act(self.conv2(y1))
        y3 = self.conv3(y2)
        return _act(torch.cat([y3, y1 + y2], dim=1))


class Dense(_ContextBase):
    """Densely connected convolutions; branch outputs concatenated."""

    divisor = 4

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        half, quarter = filters // 2, filters // 4
        self.conv1 = _conv3(in_channels, half)
        self.conv2 = _conv3(in_channels + half, quarter)
        self.conv3 = _conv3(in_channels + half + quarter, quarter)

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = _act(self.conv2(torch.cat([x, y1], dim=1)))
        y3 = self.conv3(torch.cat([x, y1, y2], dim=1))
        return _act(torch.cat([y1, y2, y3], dim=1))


class Dense2(_ContextBase):
    """Dense with a fourth densely connected convolution."""

    divisor = 8

    def __init__(self, in_channels, filters):
        super().__init__(in_channels, filters)
        half, quarter, eighth = filters // 2, filters // 4, filters // 8
        self.conv1 = _conv3(in_channels, half)
        self.conv2 = _conv3(in_channels + half, quarter)
        self.conv3 = _conv3(in_channels + half + quarter, eighth)
        self.conv4 = _conv3(in_channels + half + quarter + eighth, eighth)

    def forward(self, x):
        y1 = _act(self.conv1(x))
        y2 = _act(self.conv2(torch.cat([x, y1], dim=1)))
        y3 = _act(self.conv3(torch.cat([x, y1, y2], dim=1)))
        y4 = self.conv4(torch.cat([x, y1, y2, y3], dim=1))
        return _act(torch.cat([y1, y2, y3, y4], dim=1))


CONTEXT_VARIANTS = {
    "ssh": SSH,
    "ssh2": SSH2,
    "rssh": RSSH,
    "rssh2": RSSH2,
    "retina": Retina,
    "retina2": Retina2,
    "dense": Dense,
    "dense2": Dense2,
    "basic1": Basic1,
    "basic2": Basic2,
}


def build_context_module(variant, in_channels, filters):
    """Instantiate a context module by name.

    Raises:
        ValueError: unknown variant, or filters not divisible by the
            variant's width divisor.
    """
    try:
        cls = CONTEXT_VARIANTS[variant.lower()]
    except KeyError:
        raise ValueError(
            f"unknown context variant {variant!r}; choose from {sorted(CONTEXT_VARIANTS)}"
        ) from None
    return cls(in_channels, filters)
