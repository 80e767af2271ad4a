"""Registry of ImageNet-pretrained CNN backbones with replaceable classifier heads.

The "head" is exactly the final affine classification layer; everything
else (including pooling) belongs to the backbone. Parameter-group handles
let the training strategies freeze or train each group independently.
"""

from __future__ import annotations

import copy
import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import torch
from torch import nn
import torchvision.models as tvm


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class BackboneDef:
    ctor: Callable[..., nn.Module]
    weights: object  # torchvision weights enum member
    feature_dim: int
    head_attr: str  # dotted attribute path to the final nn.Linear


REGISTRY: dict[str, BackboneDef] = {
    "resnet18": BackboneDef(tvm.resnet18, tvm.ResNet18_Weights.IMAGENET1K_V1, 512, "fc"),
    "resnet50": BackboneDef(tvm.resnet50, tvm.ResNet50_Weights.IMAGENET1K_V1, 2048, "fc"),
    "resnet152": BackboneDef(tvm.resnet152, tvm.ResNet152_Weights.IMAGENET1K_V1, 2048, "fc"),
    "resnext50": BackboneDef(
        tvm.resnext50_32x4d, tvm.ResNeXt50_32X4D_Weights.IMAGENET1K_V1, 2048, "fc"
    ),
    "densenet121": BackboneDef(
        tvm.densenet121, tvm.DenseNet121_Weights.IMAGENET1K_V1, 1024, "classifier"
    ),
    "efficientnet_b0": BackboneDef(
        tvm.efficientnet_b0, tvm.EfficientNet_B0_Weights.IMAGENET1K_V1, 1280, "classifier.1"
    ),
}


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    pretrained: bool = True

    def __post_init__(self):
        if self.name not in REGISTRY:
            raise ModelError(
                f"unknown backbone {self.name!r}; registry: {sorted(REGISTRY)}"
            )

    @property
    def feature_dim(self) -> int:
        return REGISTRY[self.name].feature_dim


def _get_attr(module: nn.Module, dotted: str) -> nn.Module:
    obj = module
    for part in dotted.split("."):
        obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
    return obj


def _set_attr(module: nn.Module, dotted: str, value: nn.Module) -> None:
    parts = dotted.split(".")
    obj = module
    for part in parts[:-1]:
        obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
    last = parts[-1]
    if last.isdigit():
        obj[int(last)] = value
    else:
        setattr(obj, last, value)


@dataclass
class ClassifierModel:
    """A backbone network plus a k-way head, with named parameter groups."""

    network: nn.Module
    spec: BackboneSpec
    num_classes: int
    head_param_names: tuple[str, ...]
    backbone_trainable: bool = True
    head_trainable: bool = True

    def __post_init__(self):
        all_names = {n for n, _ in self.network.named_parameters()}
        head = set(self.head_param_names)
        if not head <= all_names:
            raise ModelError(f"head parameters {head - all_names} missing from network")
        # backbone group is everything not in the head: exact partition

    @property
    def backbone_param_names(self) -> tuple[str, ...]:
        head = set(self.head_param_names)
        return tuple(n for n, _ in self.network.named_parameters() if n not in head)

    def parameters_of(self, group: str) -> list[nn.Parameter]:
        names = set(
            self.head_param_names if group == "head" else self.backbone_param_names
        )
        return [p for n, p in self.network.named_parameters() if n in names]

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.network.parameters() if p.requires_grad]

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        return self.network(batch)


def build_classifier(
    spec: BackboneSpec, num_classes: int, head_seed: int,
    weights_dir: str | None = None,
) -> ClassifierModel:
    """Instantiate a registry backbone and replace its head with a fresh
    seeded num_classes-way affine layer.

    With pretrained=False the whole network is randomly initialized from
    head_seed (fast test mode, no weight download).
    """
    if num_classes < 2:
        raise ModelError(f"num_classes must be >= 2, got {num_classes}")
    bdef = REGISTRY[spec.name]
    if weights_dir:
        os.environ["TORCH_HOME"] = str(Path(weights_dir))
    torch.manual_seed(head_seed)  # covers random backbone init when not pretrained
    if spec.pretrained:
        try:
            network = bdef.ctor(weights=bdef.weights)
        except Exception as exc:
            raise ModelError(
                f"failed to fetch pretrained weights for {spec.name!r}: {exc}; "
                "check network access or set a local weights cache, then retry"
            ) from exc
    else:
        network = bdef.ctor(weights=None)

    old_head = _get_attr(network, bdef.head_attr)
    if not isinstance(old_head, nn.Linear):
        raise ModelError(f"head of {spec.name} is not an affine layer")
    head = nn.Linear(bdef.feature_dim, num_classes)
    gen = torch.Generator().manual_seed(head_seed)
    bound = 1.0 / math.sqrt(bdef.feature_dim)
    with torch.no_grad():
        head.weight.uniform_(-bound, bound, generator=gen)
        head.bias.uniform_(-bound, bound, generator=gen)
    _set_attr(network, bdef.head_attr, head)

    head_names = tuple(
        f"{bdef.head_attr}.{suffix}" for suffix in ("weight", "bias")
    )
    return ClassifierModel(network, spec, num_classes, head_names)


def set_trainability(
    model: ClassifierModel, backbone_trainable: bool, head_trainable: bool
) -> ClassifierModel:
    """Enable/disable gradients per parameter group. Freezing both is fatal."""
    if not backbone_trainable and not head_trainable:
        raise ModelError("both parameter groups frozen: nothing to optimize")
    head = set(model.head_param_names)
    for name, param in model.network.named_parameters():
        param.requires_grad = head_trainable if name in head else backbone_trainable
    model.backbone_trainable = backbone_trainable
    model.head_trainable = head_trainable
    return model


def parameter_digest(model: ClassifierModel, group: str) -> str:
    """Content hash of one parameter group, stable under copy, sensitive to
    any value change. Parameters are walked in canonical name order."""
    if group not in ("backbone", "head"):
        raise ValueError(f"group must be 'backbone' or 'head', got {group!r}")
    names = sorted(
        model.head_param_names if group == "head" else model.backbone_param_names
    )
    params = dict(model.network.named_parameters())
    h = hashlib.sha256()
    for name in names:
        t = params[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(str(t.dtype).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Checkpoints: parameter collections plus an embedded metadata record.
# ---------------------------------------------------------------------------


def save_checkpoint(model: ClassifierModel, path: str | Path, metadata: dict) -> None:
    payload = {
        "state_dict": {k: v.cpu() for k, v in model.network.state_dict().items()},
        "metadata": {
            "backbone": model.spec.name,
            "pretrained": model.spec.pretrained,
            "num_classes": model.num_classes,
            **metadata,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Returns (state_dict, metadata)."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    return payload["state_dict"], payload["metadata"]


def restore_model(path: str | Path, weights_dir: str | None = None) -> tuple[ClassifierModel, dict]:
    """Rebuild a ClassifierModel from a checkpoint file."""
    state, meta = load_checkpoint(path)
    spec = BackboneSpec(meta["backbone"], pretrained=False)
    model = build_classifier(spec, meta["num_classes"], head_seed=0, weights_dir=weights_dir)
    model.network.load_state_dict(state)
    model.spec = BackboneSpec(meta["backbone"], pretrained=meta.get("pretrained", False))
    return model, meta


def clone_model(model: ClassifierModel) -> ClassifierModel:
    return ClassifierModel(
        copy.deepcopy(model.network),
        model.spec,
        model.num_classes,
        model.head_param_names,
        model.backbone_trainable,
        model.head_trainable,
    )
