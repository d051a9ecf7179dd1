from .spec import (ArchSpec, StridePlan, ENCODERS, HLFE_BLOCK3, HLFE_BLOCK4,
                   apply_hlfe, register_encoder, stride_plan)
from .resnet import ResNetEncoder, build_encoder
from .nets import ASPP_RATES, PAD_MULTIPLE, SegModel, build_model

__all__ = [
    "ASPP_RATES", "ArchSpec", "ENCODERS", "HLFE_BLOCK3", "HLFE_BLOCK4",
    "PAD_MULTIPLE", "ResNetEncoder", "SegModel", "StridePlan", "apply_hlfe",
    "build_encoder", "build_model", "register_encoder", "stride_plan",
]
