"""Segmentation heads: encoder-decoder U-Net and DeepLabV3+ with ASPP."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InvalidSpec
from .resnet import ResNetEncoder, build_encoder
from .spec import ArchSpec, StridePlan, stride_plan

ASPP_RATES = {32: (3, 6, 9), 16: (6, 12, 18), 8: (12, 24, 36), 4: (24, 48, 72)}

PAD_MULTIPLE = 32


class ConvBNReLU(nn.Sequential):
    def __init__(self, in_ch, out_ch, kernel=3, dilation=1):
        pad = dilation if kernel == 3 else 0
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel, padding=pad, dilation=dilation,
                      bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )


def make_upsampler(channels: int, factor: int, kind: str) -> nn.Module:
    if factor == 1:
        return nn.Identity()
    if kind == "bilinear":
        return nn.Upsample(scale_factor=factor, mode="bilinear",
                           align_corners=False)
    if kind == "transposed_conv":
        return nn.ConvTranspose2d(channels, channels, factor, stride=factor)
    raise InvalidSpec(f"unknown upsampling kind {kind!r}")


class ASPP(nn.Module):
    """Parallel dilated conv branches plus pooled context, fused by 1x1 conv."""

    def __init__(self, in_ch, out_ch, rates):
        super().__init__()
        self.branches = nn.ModuleList([ConvBNReLU(in_ch, out_ch, kernel=1)])
        for r in rates:
            self.branches.append(ConvBNReLU(in_ch, out_ch, kernel=3, dilation=r))
        # no norm on the 1x1 pooled map: BatchNorm needs >1 value per channel
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_ch, out_ch, 1),
            nn.ReLU(inplace=True),
        )
        self.project = ConvBNReLU(out_ch * (len(rates) + 2), out_ch, kernel=1)

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        pooled = self.pool(x)
        outs.append(F.interpolate(pooled, size=x.shape[2:], mode="bilinear",
                                  align_corners=False))
        return self.project(torch.cat(outs, dim=1))


class DeepLabHead(nn.Module):
    """ASPP over the deepest features, concatenated with a projected stem tap."""

    def __init__(self, encoder: ResNetEncoder, plan: StridePlan, spec: ArchSpec):
        super().__init__()
        ch = encoder.out_channels
        self.aspp = ASPP(ch["c4"], 256, ASPP_RATES[plan.high_level_stride])
        self.ll_project = ConvBNReLU(ch["stem"], 48, kernel=1)
        self.up_hl = make_upsampler(
            256, plan.high_level_stride // plan.low_level_stride,
            spec.decoder_upsampling)
        self.refine = nn.Sequential(ConvBNReLU(256 + 48, 256), ConvBNReLU(256, 256))
        self.classifier = nn.Conv2d(256, spec.num_classes, 1)
        self.up_final = make_upsampler(spec.num_classes, plan.low_level_stride,
                                       spec.decoder_upsampling)

    def forward(self, feats):
        hl = self.up_hl(self.aspp(feats["c4"]))
        ll = self.ll_project(feats["stem"])
        x = self.refine(torch.cat([hl, ll], dim=1))
        return self.up_final(self.classifier(x))


class UNetDecoderBlock(nn.Module):
    def __init__(self, in_ch, skip_ch, out_ch, factor, kind):
        super().__init__()
        self.up = make_upsampler(in_ch, factor, kind)
        self.conv = nn.Sequential(ConvBNReLU(in_ch + skip_ch, out_ch),
                                  ConvBNReLU(out_ch, out_ch))

    def forward(self, x, skip):
        return self.conv(torch.cat([self.up(x), skip], dim=1))


class UNetHead(nn.Module):
    """Mirrored decoder merging skip features at every encoder stride."""

    WIDTHS = (256, 128, 64, 48)

    def __init__(self, encoder: ResNetEncoder, plan: StridePlan, spec: ArchSpec):
        super().__init__()
        ch = encoder.out_channels
        taps = ["c3", "c2", "c1", "stem_conv"]
        strides = [plan.stage_cumulative_strides[4],
                   plan.stage_cumulative_strides[3],
                   plan.stage_cumulative_strides[2], 2]
        blocks = []
        cur_ch = ch["c4"]
        cur_stride = plan.stage_cumulative_strides[5]
        for tap, tap_stride, width in zip(taps, strides, self.WIDTHS):
            blocks.append(UNetDecoderBlock(cur_ch, ch[tap], width,
                                           cur_stride // tap_stride,
                                           spec.decoder_upsampling))
            cur_ch, cur_stride = width, tap_stride
        self.blocks = nn.ModuleList(blocks)
        self.taps = taps
        self.up_final = make_upsampler(cur_ch, cur_stride, spec.decoder_upsampling)
        self.head = ConvBNReLU(cur_ch, cur_ch)
        self.classifier = nn.Conv2d(cur_ch, spec.num_classes, 1)

    def forward(self, feats):
        x = feats["c4"]
        for block, tap in zip(self.blocks, self.taps):
            x = block(x, feats[tap])
        return self.classifier(self.head(self.up_final(x)))


class SegModel(nn.Module):
    """Encoder+head pair honoring the pad-and-crop contract on any input size."""

    def __init__(self, spec: ArchSpec, plan: StridePlan,
                 encoder: ResNetEncoder, head: nn.Module):
        super().__init__()
        self.spec = spec
        self.plan = plan
        self.encoder = encoder
        self.head = head

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x):
        H, W = x.shape[2], x.shape[3]
        ph = (PAD_MULTIPLE - H % PAD_MULTIPLE) % PAD_MULTIPLE
        pw = (PAD_MULTIPLE - W % PAD_MULTIPLE) % PAD_MULTIPLE
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")
        out = self.head(self.encoder(x))
        if ph or pw:
            out = out[..., :H, :W]
        return out


def build_model(spec: ArchSpec) -> SegModel:
    spec.validate()
    plan = stride_plan(spec)
    encoder = build_encoder(spec, plan)
    if spec.family == "deeplabv3plus":
        head = DeepLabHead(encoder, plan, spec)
    else:
        head = UNetHead(encoder, plan, spec)
    return SegModel(spec, plan, encoder, head)
