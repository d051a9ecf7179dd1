"""Model introspection: gradient-ascent input optimization, spurious blobs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
import torch

from .errors import ConfigError
from .models import SegModel

_CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class OptimizationTrace:
    """Image ascended toward one class plus the per-step objective values."""

    image: np.ndarray  # HxWx3 float in [0, 1]
    objective_history: list[float]
    class_id: int
    steps: int
    step_size: float
    aborted: bool = False


def optimize_input(model: SegModel, class_id: int, steps: int,
                   step_size: float, seed: int, *,
                   dims: tuple[int, int] = (64, 64),
                   objective: str = "logit") -> OptimizationTrace:
    """Gradient-ascend an input image to maximize the mean class response.

    The image starts as uniform noise in the middle 10% of the intensity
    range and is clamped to [0, 1] after every step. The objective is the
    mean target-class logit over all pixels (or softmax probability with
    objective="probability").
    """
    if not 0 <= class_id < model.spec.num_classes:
        raise ConfigError(f"class id {class_id} out of range")
    if objective not in ("logit", "probability"):
        raise ConfigError(f"unknown objective {objective!r}")
    model.eval()
    gen = torch.Generator().manual_seed(seed)
    x = 0.45 + 0.1 * torch.rand((1, 3, dims[0], dims[1]), generator=gen)
    x = x.clone().requires_grad_(True)

    def score(inp):
        out = model(inp)
        if objective == "probability":
            out = torch.softmax(out, dim=1)
        return out[:, class_id].mean()

    history = []
    aborted = False
    done = 0
    for t in range(steps + 1):
        obj = score(x)
        history.append(float(obj.item()))
        if t == steps:
            break
        (grad,) = torch.autograd.grad(obj, x)
        if not torch.isfinite(grad).all():
            aborted = True
            break
        with torch.no_grad():
            x = torch.clamp(x + step_size * grad, 0.0, 1.0)
        x.requires_grad_(True)
        done = t + 1
    image = x.detach()[0].permute(1, 2, 0).numpy()
    return OptimizationTrace(image, history, class_id, done, step_size, aborted)


def count_spurious_blobs(predicted: np.ndarray, reference: np.ndarray,
                         min_area: int | None = None) -> int:
    """Small predicted components whose class is not modal in the reference.

    A component is spurious when its area is below min_area (default 0.1% of
    the image) and its predicted class is not among the most frequent
    reference classes under the component footprint.
    """
    if predicted.shape != reference.shape:
        raise ConfigError(f"map shapes differ: {predicted.shape} vs "
                          f"{reference.shape}")
    if min_area is None:
        min_area = max(1, round(0.001 * predicted.size))
    count = 0
    for c in np.unique(predicted):
        labeled, _ = ndi.label(predicted == c, structure=_CONN4)
        for idx, sl in enumerate(ndi.find_objects(labeled), start=1):
            comp = labeled[sl] == idx
            if int(comp.sum()) >= min_area:
                continue
            counts = np.bincount(reference[sl][comp])
            c_count = counts[c] if c < len(counts) else 0
            if c_count < counts.max():
                count += 1
    return count


def trace_to_image(trace: OptimizationTrace) -> np.ndarray:
    """Trace image as HxWx3 uint8 for export."""
    return np.clip(trace.image * 255.0, 0, 255).astype(np.uint8)


def write_objective_tsv(fp, trace: OptimizationTrace) -> None:
    for t, v in enumerate(trace.objective_history):
        fp.write(f"{t}\t{repr(v)}\n")
