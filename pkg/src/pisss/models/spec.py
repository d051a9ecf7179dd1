"""Architecture descriptions and symbolic stride/dilation planning.

The two control axes beyond the family/encoder choice are the encoder output
stride (ratio between input and the deepest feature map) and the presence of
the stem max-pooling layer (which fixes the low-level tap stride: 4 with the
pool, 2 without). Strides that must be removed to hit the requested output
stride are converted to dilation, doubling the rate of the converted block
and every later one; the first unit of a converted block keeps the previous
rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import InvalidSpec

FAMILIES = ("unet", "deeplabv3plus")
OUTPUT_STRIDES = (4, 8, 16, 32)
UPSAMPLING_KINDS = ("bilinear", "transposed_conv")

# Per-unit dilation schedules joining digressive and hybrid rate patterns,
# applied to encoder blocks 3 and 4 (requires 6 and 3 units respectively).
HLFE_BLOCK3 = (1, 3, 5, 5, 3, 1)
HLFE_BLOCK4 = (1, 3, 1)

# encoder name -> (block kind, units per block, channel expansion)
ENCODERS: dict[str, tuple[str, tuple[int, int, int, int], int]] = {
    "resnet34": ("basic", (3, 4, 6, 3), 1),
    "resnet50": ("bottleneck", (3, 4, 6, 3), 4),
    "resnet101": ("bottleneck", (3, 4, 23, 3), 4),
}


def register_encoder(name: str, block_kind: str, layers, expansion: int) -> None:
    """Extension point for additional encoder variants."""
    ENCODERS[name] = (block_kind, tuple(layers), int(expansion))


@dataclass(frozen=True)
class ArchSpec:
    family: str = "unet"
    encoder: str = "resnet34"
    output_stride: int = 16
    max_pool_in_stem: bool = True
    hlfe: bool = False
    decoder_upsampling: str = "bilinear"
    num_classes: int = 2
    encoder_weights: str | None = None

    def validate(self) -> "ArchSpec":
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}")
        if self.encoder not in ENCODERS:
            raise InvalidSpec(f"encoder not registered: {self.encoder!r}")
        if self.output_stride not in OUTPUT_STRIDES:
            raise InvalidSpec(f"output_stride must be one of {OUTPUT_STRIDES}, "
                              f"got {self.output_stride}")
        if self.decoder_upsampling not in UPSAMPLING_KINDS:
            raise InvalidSpec(f"unknown decoder_upsampling "
                              f"{self.decoder_upsampling!r}")
        if self.num_classes < 2:
            raise InvalidSpec("num_classes must be >= 2")
        if self.hlfe:
            if self.family != "deeplabv3plus":
                raise InvalidSpec("hlfe requires the deeplabv3plus family")
            if self.output_stride not in (4, 8):
                raise InvalidSpec(
                    f"hlfe requires output stride 4 or 8 (stride "
                    f"{self.output_stride} carries no dilation to rescale)"
                )
            layers = ENCODERS[self.encoder][1]
            if (layers[2], layers[3]) != (len(HLFE_BLOCK3), len(HLFE_BLOCK4)):
                raise InvalidSpec(
                    f"hlfe needs {len(HLFE_BLOCK3)} units in block 3 and "
                    f"{len(HLFE_BLOCK4)} in block 4; {self.encoder} has "
                    f"{layers[2]} and {layers[3]}"
                )
        return self

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "encoder": self.encoder,
            "output_stride": self.output_stride,
            "max_pool_in_stem": self.max_pool_in_stem,
            "hlfe": self.hlfe,
            "decoder_upsampling": self.decoder_upsampling,
            "num_classes": self.num_classes,
            "encoder_weights": self.encoder_weights,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(**d).validate()


@dataclass(frozen=True)
class StridePlan:
    """Cumulative stage strides plus the per-unit dilation layout."""

    stage_cumulative_strides: tuple[int, int, int, int, int, int]
    low_level_stride: int
    high_level_stride: int
    block_strides: tuple[int, int, int, int]
    block_dilations: tuple[tuple[int, ...], ...]
    hlfe: bool

    def to_dict(self) -> dict:
        return {
            "stage_cumulative_strides": list(self.stage_cumulative_strides),
            "low_level_stride": self.low_level_stride,
            "high_level_stride": self.high_level_stride,
            "block_strides": list(self.block_strides),
            "block_dilations": [list(d) for d in self.block_dilations],
            "hlfe": self.hlfe,
        }


def stride_plan(spec: ArchSpec) -> StridePlan:
    """Compute stage strides and per-unit dilations symbolically."""
    spec.validate()
    _, layers, _ = ENCODERS[spec.encoder]
    stem_cum = 4 if spec.max_pool_in_stem else 2

    if spec.family == "unet":
        # U-Net keeps natural strides; output_stride is ignored.
        block_strides = (1, 2, 2, 2)
        dilations = tuple(tuple(1 for _ in range(n)) for n in layers)
        cums = []
        cum = stem_cum
        for s in block_strides:
            cum *= s
            cums.append(cum)
        return StridePlan(
            (2, stem_cum, *cums),
            stem_cum, cums[-1], block_strides, dilations, False,
        )

    target = spec.output_stride
    ratio = target // stem_cum
    if stem_cum * ratio != target or ratio not in (1, 2, 4, 8, 16):
        raise InvalidSpec(f"output stride {target} unreachable from stem "
                          f"stride {stem_cum}")
    n_strided = ratio.bit_length() - 1  # log2
    if n_strided > 4:
        raise InvalidSpec(f"output stride {target} needs more than 4 strided blocks")

    # Block 1 only strides when blocks 2-4 cannot supply enough reduction.
    block_strides = [2 if n_strided == 4 else 1]
    remaining = n_strided - (1 if n_strided == 4 else 0)
    for _ in range(3):
        if remaining > 0:
            block_strides.append(2)
            remaining -= 1
        else:
            block_strides.append(1)

    dilations: list[tuple[int, ...]] = []
    factors: list[int] = []
    cum = stem_cum
    rate = 1
    cums = []
    for b in range(4):
        natural = 1 if b == 0 else 2
        assigned = block_strides[b]
        n_units = layers[b]
        if natural == 2 and assigned == 1:
            prev = rate
            rate *= 2
            dilations.append((prev,) + (rate,) * (n_units - 1))
        else:
            dilations.append((rate,) * n_units)
        factors.append(rate)
        cum *= assigned
        cums.append(cum)
    if cum != target:
        raise InvalidSpec(f"planned stride {cum} != requested {target}")

    if spec.hlfe:
        dilations[2] = tuple(d * factors[2] for d in HLFE_BLOCK3)
        dilations[3] = tuple(d * factors[3] for d in HLFE_BLOCK4)

    return StridePlan(
        (2, stem_cum, *cums),
        stem_cum, cum, tuple(block_strides), tuple(dilations), spec.hlfe,
    )


def apply_hlfe(spec: ArchSpec) -> dict[int, tuple[int, ...]]:
    """Per-unit dilation schedules for blocks 3 and 4 under the hybrid layout."""
    if not spec.hlfe:
        spec = ArchSpec(**{**spec.to_dict(), "hlfe": True})
    plan = stride_plan(spec)
    return {3: plan.block_dilations[2], 4: plan.block_dilations[3]}
