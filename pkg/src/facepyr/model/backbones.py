"""Pluggable backbones exposing feature taps at strides 4, 8, 16, 32.

Three families are available: a small from-scratch stub (no external
weights, used for desk-scale runs and gradient checks), MobileNetV2 at a
configurable width multiplier, and pre-activation ResNet at standard
depths. Every backbone returns four feature maps at strictly increasing
strides; levels beyond stride 32 are synthesized by the pyramid.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

TAP_STRIDES = (4, 8, 16, 32)


def _conv_gn(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.GroupNorm(4, cout),
        nn.LeakyReLU(0.1, inplace=True),
    )


class TinyStub(nn.Module):
    """Minimal convolutional trunk; trains from scratch in minutes on CPU."""

    def __init__(self, widths=(16, 24, 32, 48)):
        super().__init__()
        self.tap_channels = tuple(widths)
        self.stem = _conv_gn(3, 8, stride=2)
        stages = []
        cin = 8
        for cout in widths:
            stages.append(
                nn.Sequential(_conv_gn(cin, cout, stride=2), _conv_gn(cout, cout))
            )
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        x = self.stem(x)
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


class MobileNetV2Backbone(nn.Module):
    """torchvision MobileNetV2 trunk tapped at strides 4/8/16/32.

    The final 1x1 expansion conv and the classifier are dropped. Weights
    are randomly initialized unless a local state-dict path is supplied.
    """

    # indices into mobilenet_v2().features whose outputs sit at strides 4/8/16/32
    TAP_INDICES = (3, 6, 13, 17)

    def __init__(self, width_mult=0.25, pretrained_path=None):
        super().__init__()
        import torchvision

        net = torchvision.models.mobilenet_v2(width_mult=width_mult)
        if pretrained_path:
            net.load_state_dict(torch.load(pretrained_path, map_location="cpu"))
        self.features = net.features[: self.TAP_INDICES[-1] + 1]
        with torch.no_grad():
            self.tap_channels = tuple(
                t.shape[1] for t in self.forward(torch.zeros(1, 3, 64, 64))
            )

    def forward(self, x):
        taps = []
        for i, block in enumerate(self.features):
            x = block(x)
            if i in self.TAP_INDICES:
                taps.append(x)
        return taps


class _PreactBasic(nn.Module):
    expansion = 1

    def __init__(self, cin, width, stride=1):
        super().__init__()
        cout = width * self.expansion
        self.bn1 = nn.BatchNorm2d(cin)
        self.conv1 = nn.Conv2d(cin, width, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, cout, 3, padding=1, bias=False)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Conv2d(cin, cout, 1, stride=stride, bias=False)

    def forward(self, x):
        out = F.relu(self.bn1(x))
        residual = self.shortcut(out) if self.shortcut is not None else x
        out = self.conv1(out)
        out = self.conv2(F.relu(self.bn2(out)))
        return out + residual


class _PreactBottleneck(nn.Module):
    expansion = 4

    def __init__(self, cin, width, stride=1):
        super().__init__()
        cout = width * self.expansion
        self.bn1 = nn.BatchNorm2d(cin)
        self.conv1 = nn.Conv2d(cin, width, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=stride, padding=1, bias=False)
        self.bn3 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, cout, 1, bias=False)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Conv2d(cin, cout, 1, stride=stride, bias=False)

    def forward(self, x):
        out = F.relu(self.bn1(x))
        residual = self.shortcut(out) if self.shortcut is not None else x
        out = self.conv1(out)
        out = self.conv2(F.relu(self.bn2(out)))
        out = self.conv3(F.relu(self.bn3(out)))
        return out + residual


_RESNET_LAYOUTS = {
    18: (_PreactBasic, (2, 2, 2, 2)),
    34: (_PreactBasic, (3, 4, 6, 3)),
    50: (_PreactBottleneck, (3, 4, 6, 3)),
    101: (_PreactBottleneck, (3, 4, 23, 3)),
    152: (_PreactBottleneck, (3, 8, 36, 3)),
}


class PreactResNet(nn.Module):
    """Pre-activation (v2) ResNet trunk tapped after each stage."""

    def __init__(self, depth=101, pretrained_path=None):
        super().__init__()
        if depth not in _RESNET_LAYOUTS:
            raise ValueError(f"unsupported resnet depth {depth}; choose from {sorted(_RESNET_LAYOUTS)}")
        block, counts = _RESNET_LAYOUTS[depth]
        self.stem = nn.Sequential(
            nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        widths = (64, 128, 256, 512)
        stages = []
        cin = 64
        for i, (width, count) in enumerate(zip(widths, counts)):
            blocks = []
            for j in range(count):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(block(cin, width, stride=stride))
                cin = width * block.expansion
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.tap_channels = tuple(w * block.expansion for w in widths)
        if pretrained_path:
            self.load_state_dict(torch.load(pretrained_path, map_location="cpu"))

    def forward(self, x):
        x = self.stem(x)
        taps = []
        for stage in self.stages:
            x = stage(x)
            taps.append(x)
        return taps


def build_backbone(name, width=0.25, depth=101, pretrained_path=None):
    """Construct a backbone by identifier.

    Args:
        name: "tiny-stub", "mobilenet-v2", or "resnet-v2".
        width: MobileNetV2 width multiplier.
        depth: ResNet depth.
        pretrained_path: optional local state-dict to load.
    """
    if name == "tiny-stub":
        return TinyStub()
    if name == "mobilenet-v2":
        return MobileNetV2Backbone(width_mult=width, pretrained_path=pretrained_path)
    if name == "resnet-v2":
        return PreactResNet(depth=depth, pretrained_path=pretrained_path)
    raise ValueError(f"unknown backbone {name!r}")
