"""ResNet encoder with per-block stride control and per-unit dilation rates."""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import InvalidSpec
from .spec import ENCODERS, ArchSpec, StridePlan


def _conv3x3(in_ch, out_ch, stride=1, dilation=1):
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=dilation,
                     dilation=dilation, bias=False)


def _conv1x1(in_ch, out_ch, stride=1):
    return nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False)


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_ch, planes, stride=1, dilation=1, downsample=None):
        super().__init__()
        self.conv1 = _conv3x3(in_ch, planes, stride, dilation)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = _conv3x3(planes, planes, 1, dilation)
        self.bn2 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample

    def forward(self, x):
        identity = x
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu(out + identity)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch, planes, stride=1, dilation=1, downsample=None):
        super().__init__()
        self.conv1 = _conv1x1(in_ch, planes)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = _conv3x3(planes, planes, stride, dilation)
        self.bn2 = nn.BatchNorm2d(planes)
        self.conv3 = _conv1x1(planes, planes * self.expansion)
        self.bn3 = nn.BatchNorm2d(planes * self.expansion)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = downsample

    def forward(self, x):
        identity = x
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        if self.downsample is not None:
            identity = self.downsample(x)
        return self.relu(out + identity)


_BLOCKS = {"basic": BasicBlock, "bottleneck": Bottleneck}


class ResNetEncoder(nn.Module):
    """Stem (7x7/2 [+ 3x3/2 max pool]) followed by four configurable blocks."""

    def __init__(self, block_kind: str, layers, block_strides, block_dilations,
                 max_pool: bool):
        super().__init__()
        block = _BLOCKS[block_kind]
        self.conv1 = nn.Conv2d(3, 64, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(64)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1) if max_pool else None

        self._in_ch = 64
        planes = (64, 128, 256, 512)
        stages = []
        for i in range(4):
            stages.append(self._make_stage(block, planes[i], layers[i],
                                           block_strides[i], block_dilations[i]))
        self.layer1, self.layer2, self.layer3, self.layer4 = stages
        self.out_channels = {
            "stem_conv": 64,
            "stem": 64,
            "c1": planes[0] * block.expansion,
            "c2": planes[1] * block.expansion,
            "c3": planes[2] * block.expansion,
            "c4": planes[3] * block.expansion,
        }
        self._init_weights()

    def _make_stage(self, block, planes, n_units, stride, dilations):
        if len(dilations) != n_units:
            raise InvalidSpec(f"stage needs {n_units} dilation rates, "
                              f"got {len(dilations)}")
        downsample = None
        if stride != 1 or self._in_ch != planes * block.expansion:
            downsample = nn.Sequential(
                _conv1x1(self._in_ch, planes * block.expansion, stride),
                nn.BatchNorm2d(planes * block.expansion),
            )
        units = [block(self._in_ch, planes, stride, dilations[0], downsample)]
        self._in_ch = planes * block.expansion
        for j in range(1, n_units):
            units.append(block(self._in_ch, planes, 1, dilations[j]))
        return nn.Sequential(*units)

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out",
                                        nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.constant_(m.weight, 1.0)
                nn.init.constant_(m.bias, 0.0)

    def forward(self, x) -> dict[str, torch.Tensor]:
        x = self.relu(self.bn1(self.conv1(x)))
        stem_conv = x
        if self.maxpool is not None:
            x = self.maxpool(x)
        stem = x
        c1 = self.layer1(x)
        c2 = self.layer2(c1)
        c3 = self.layer3(c2)
        c4 = self.layer4(c3)
        return {"stem_conv": stem_conv, "stem": stem,
                "c1": c1, "c2": c2, "c3": c3, "c4": c4}


def build_encoder(spec: ArchSpec, plan: StridePlan) -> ResNetEncoder:
    block_kind, layers, _ = ENCODERS[spec.encoder]
    encoder = ResNetEncoder(block_kind, layers, plan.block_strides,
                            plan.block_dilations, spec.max_pool_in_stem)
    if spec.encoder_weights is not None:
        state = torch.load(spec.encoder_weights, map_location="cpu",
                           weights_only=True)
        encoder.load_state_dict(state)
    return encoder
