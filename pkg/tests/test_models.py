import pytest
import torch

from habclass.models import (
    REGISTRY,
    BackboneSpec,
    ModelError,
    build_classifier,
    clone_model,
    load_checkpoint,
    parameter_digest,
    restore_model,
    save_checkpoint,
    set_trainability,
)


@pytest.fixture(scope="module")
def small_model():
    return build_classifier(BackboneSpec("resnet18", pretrained=False), 11, head_seed=3)


class TestRegistry:
    def test_unknown_name_lists_registry(self):
        with pytest.raises(ModelError, match="resnet18"):
            BackboneSpec("vgg16")

    def test_feature_dims(self):
        assert BackboneSpec("resnet18", False).feature_dim == 512
        assert BackboneSpec("resnet50", False).feature_dim == 2048
        assert BackboneSpec("densenet121", False).feature_dim == 1024
        assert BackboneSpec("efficientnet_b0", False).feature_dim == 1280


class TestBuildClassifier:
    def test_head_shape(self, small_model):
        params = dict(small_model.network.named_parameters())
        w = params[small_model.head_param_names[0]]
        assert tuple(w.shape) == (11, 512)

    def test_resnet50_head_parameter_count(self):
        m = build_classifier(BackboneSpec("resnet50", pretrained=False), 11, head_seed=0)
        n = sum(p.numel() for p in m.parameters_of("head"))
        assert n == 11 * 2048 + 11

    def test_two_way_head(self):
        m = build_classifier(BackboneSpec("resnet18", pretrained=False), 2, head_seed=0)
        x = torch.randn(3, 3, 64, 64)
        assert m.forward(x).shape == (3, 2)

    def test_num_classes_lower_bound(self):
        with pytest.raises(ModelError, match=">= 2"):
            build_classifier(BackboneSpec("resnet18", pretrained=False), 1, head_seed=0)

    def test_head_seed_deterministic(self):
        m1 = build_classifier(BackboneSpec("resnet18", pretrained=False), 5, head_seed=9)
        m2 = build_classifier(BackboneSpec("resnet18", pretrained=False), 5, head_seed=9)
        assert parameter_digest(m1, "head") == parameter_digest(m2, "head")
        assert parameter_digest(m1, "backbone") == parameter_digest(m2, "backbone")

    def test_head_replacement_preserves_backbone(self):
        # same init seed, different head widths: backbone group identical
        m1 = build_classifier(BackboneSpec("resnet18", pretrained=False), 3, head_seed=4)
        m2 = build_classifier(BackboneSpec("resnet18", pretrained=False), 7, head_seed=4)
        assert parameter_digest(m1, "backbone") == parameter_digest(m2, "backbone")
        assert parameter_digest(m1, "head") != parameter_digest(m2, "head")

    def test_parameter_partition(self):
        for name in REGISTRY:
            m = build_classifier(BackboneSpec(name, pretrained=False), 4, head_seed=0)
            all_names = {n for n, _ in m.network.named_parameters()}
            head = set(m.head_param_names)
            backbone = set(m.backbone_param_names)
            assert head | backbone == all_names
            assert not head & backbone


class TestDigest:
    def test_copy_equality(self, small_model):
        assert parameter_digest(small_model, "backbone") == parameter_digest(
            clone_model(small_model), "backbone"
        )

    def test_sensitivity_to_perturbation(self, small_model):
        m = clone_model(small_model)
        before = parameter_digest(m, "backbone")
        with torch.no_grad():
            next(iter(m.parameters_of("backbone"))).view(-1)[0] += 1e-3
        assert parameter_digest(m, "backbone") != before

    def test_bad_group(self, small_model):
        with pytest.raises(ValueError):
            parameter_digest(small_model, "everything")


class TestTrainability:
    def test_head_only(self, small_model):
        m = clone_model(small_model)
        set_trainability(m, backbone_trainable=False, head_trainable=True)
        for p in m.parameters_of("backbone"):
            assert not p.requires_grad
        for p in m.parameters_of("head"):
            assert p.requires_grad

    def test_all_trainable(self, small_model):
        m = clone_model(small_model)
        set_trainability(m, True, True)
        assert all(p.requires_grad for p in m.network.parameters())

    def test_both_frozen_fatal(self, small_model):
        with pytest.raises(ModelError, match="nothing to optimize"):
            set_trainability(clone_model(small_model), False, False)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, small_model, tmp_path):
        path = tmp_path / "ckpt.pt"
        save_checkpoint(small_model, path, {"epoch": 7, "val_accuracy": 0.5})
        state, meta = load_checkpoint(path)
        assert meta["epoch"] == 7
        assert meta["backbone"] == "resnet18"
        assert meta["num_classes"] == 11
        original = small_model.network.state_dict()
        assert set(state) == set(original)
        for k in original:
            assert torch.equal(state[k], original[k].cpu())

    def test_restore_model(self, small_model, tmp_path):
        path = tmp_path / "ckpt.pt"
        save_checkpoint(small_model, path, {"epoch": 1, "val_accuracy": 0.1})
        restored, meta = restore_model(path)
        assert parameter_digest(restored, "backbone") == parameter_digest(
            small_model, "backbone"
        )
        assert parameter_digest(restored, "head") == parameter_digest(
            small_model, "head"
        )
