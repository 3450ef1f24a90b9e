"""Architecture structure, parameter counting, forwards, and BN folding."""

import numpy as np
import pytest

from conftest import random_patch
from sawnet import models
from sawnet.errors import ConfigError, StructureError, ValidationError
from sawnet.frontend import LogMelPatch


class TestBuilders:
    def test_aug_parameter_count_is_exact(self):
        assert models.count_params(models.build_aug_vggish(50)) == 4_647_346

    def test_fcn_parameter_count_is_exact(self):
        assert models.count_params(models.build_fcn_vggish(50)) == 18_716_338

    def test_binary_classifier_contribution(self):
        # head shrinks from 256*50+50 to 256*2+2 parameters
        full = models.count_params(models.build_aug_vggish(50))
        binary = models.count_params(models.build_aug_vggish(2))
        assert full - binary == (256 * 50 + 50) - (256 * 2 + 2)
        assert 256 * 2 + 2 == 514

    def test_num_classes_lower_bound(self):
        for build in (models.build_aug_vggish, models.build_fcn_vggish):
            with pytest.raises(ConfigError):
                build(1)

    def test_aug_structure(self):
        spec = models.build_aug_vggish(50)
        layers = spec.layers
        convs = [l for l in layers if l.kind == "conv"]
        bns = [l for l in layers if l.kind == "batchnorm"]
        assert len(convs) == 6 and len(bns) == 6
        # each conv immediately followed by its batch norm
        for i, layer in enumerate(layers[:-1]):
            if layer.kind == "conv":
                follower = layers[i + 1]
                assert follower.kind == "batchnorm" and follower.channels == layer.out_ch
        assert sum(l.kind == "global_avg_pool" for l in layers) == 1
        denses = [l for l in layers if l.kind == "dense"]
        assert [d.out_units for d in denses] == [256, 50]
        assert not any(d.out_units == 128 for d in denses)

    def test_fcn_structure(self):
        spec = models.build_fcn_vggish(50)
        feature_convs = [l for l in spec.layers if l.kind == "conv" and l.kernel == 3]
        classifier = [l for l in spec.layers if l.kind == "conv" and l.kernel == 1]
        assert len(feature_convs) == 8
        assert len(classifier) == 1 and classifier[0].out_ch == 50
        assert not any(l.kind == "dense" for l in spec.layers)
        assert sum(l.kind == "batchnorm" for l in spec.layers) == 8

    def test_count_params_empty_spec(self):
        empty = models.ModelSpec(arch_id="aug_vggish", num_classes=2, layers=(),
                                 embedding_layer="", embedding_dim=0)
        assert models.count_params(empty) == 0


class TestForward:
    def test_zero_weights_uniform_softmax(self):
        for build, k in ((models.build_aug_vggish, 5), (models.build_fcn_vggish, 4)):
            bundle = models.init_bundle(build(k), init="zeros")
            probs = models.forward_probs(bundle, LogMelPatch(values=np.zeros((96, 64))))
            np.testing.assert_allclose(probs, np.full(k, 1.0 / k), atol=1e-12)

    def test_probabilities_sum_to_one(self, aug_bundle_small):
        probs = models.forward_probs(aug_bundle_small, random_patch(1))
        assert probs.min() >= 0.0
        assert abs(probs.sum() - 1.0) < 1e-6

    def test_classifier_bias_dominates_zero_network(self):
        spec = models.build_aug_vggish(3)
        bundle = models.init_bundle(spec, init="zeros")
        bundle.params["head/bias"] = np.array([10.0, -10.0, 0.0], np.float32)
        bundle.validate()
        probs = models.forward_probs(bundle, LogMelPatch(values=np.zeros((96, 64))))
        assert int(np.argmax(probs)) == 0

    def test_forward_deterministic(self, aug_bundle_small):
        patch = random_patch(2)
        first = models.forward_probs(aug_bundle_small, patch)
        second = models.forward_probs(aug_bundle_small, patch)
        assert np.array_equal(first, second)

    def test_fcn_accepts_variable_frame_counts(self, fcn_bundle_small):
        for frames in (32, 96, 192):
            x = np.random.default_rng(frames).normal(0, 1, (1, frames, 64))
            out = models.run_layers(fcn_bundle_small, x)
            assert out.shape == (3,)


class TestEmbeddings:
    def test_aug_embedding_width(self, aug_bundle_small):
        emb = models.forward_embedding(aug_bundle_small, random_patch(3))
        assert emb.values.shape == (256,)

    def test_fcn_embedding_width(self, fcn_bundle_small):
        emb = models.forward_embedding(fcn_bundle_small, random_patch(4))
        assert emb.values.shape == (1024,)

    def test_zero_weights_zero_embedding(self):
        bundle = models.init_bundle(models.build_aug_vggish(2), init="zeros")
        emb = models.forward_embedding(bundle, random_patch(5))
        assert np.all(emb.values == 0.0)


class TestFoldBatchnorm:
    def test_identity_fold_keeps_conv(self):
        bundle = models.init_bundle(models.build_aug_vggish(2), init="random", seed=1,
                                    epsilon=1e-12)
        folded = models.fold_batchnorm(bundle)
        assert folded.folded
        np.testing.assert_allclose(folded.params["conv1/kernels"],
                                   bundle.params["conv1/kernels"], atol=1e-9)
        np.testing.assert_allclose(folded.params["conv1/bias"],
                                   bundle.params["conv1/bias"], atol=1e-9)

    def test_single_channel_fold_formula(self):
        bundle = models.init_bundle(models.build_aug_vggish(2), init="random", seed=2,
                                    epsilon=1e-12)
        bundle.params["bn1/gamma"] = np.full(64, 2.0, np.float32)
        bundle.params["bn1/beta"] = np.full(64, 3.0, np.float32)
        bundle.validate()
        folded = models.fold_batchnorm(bundle)
        np.testing.assert_allclose(folded.params["conv1/kernels"],
                                   2.0 * bundle.params["conv1/kernels"], rtol=1e-6)
        np.testing.assert_allclose(folded.params["conv1/bias"],
                                   2.0 * bundle.params["conv1/bias"] + 3.0, rtol=1e-6)

    def test_forward_equivalence(self, aug_bundle_small):
        folded = models.fold_batchnorm(aug_bundle_small)
        assert not any(l.kind == "batchnorm" for l in folded.spec.layers)
        for seed in range(5):
            patch = random_patch(seed)
            unfolded_probs = models.forward_probs(aug_bundle_small, patch)
            folded_probs = models.forward_probs(folded, patch)
            assert np.abs(unfolded_probs - folded_probs).max() < 1e-4
            assert int(np.argmax(unfolded_probs)) == int(np.argmax(folded_probs))

    def test_fcn_fold_keeps_embedding_path(self, fcn_bundle_small):
        folded = models.fold_batchnorm(fcn_bundle_small)
        assert folded.spec.embedding_layer == "conv8"
        patch = random_patch(6)
        a = models.forward_embedding(fcn_bundle_small, patch).values
        b = models.forward_embedding(folded, patch).values
        assert np.abs(a - b).max() < 1e-4

    def test_bn_without_conv_rejected(self):
        layers = (
            models.LayerDef("pool1", "maxpool"),
            models.LayerDef("bn1", "batchnorm", channels=1, relu=True),
            models.LayerDef("gap", "global_avg_pool"),
            models.LayerDef("head", "dense", in_units=1, out_units=2),
        )
        spec = models.ModelSpec(arch_id="aug_vggish", num_classes=2, layers=layers,
                                embedding_layer="gap", embedding_dim=1)
        bundle = models.init_bundle(spec, init="zeros")
        with pytest.raises(StructureError):
            models.fold_batchnorm(bundle)


class TestBundleValidation:
    def test_missing_tensor(self):
        bundle = models.init_bundle(models.build_aug_vggish(2), init="zeros")
        del bundle.params["conv3/bias"]
        with pytest.raises(ValidationError):
            bundle.validate()

    def test_extra_tensor(self):
        bundle = models.init_bundle(models.build_aug_vggish(2), init="zeros")
        bundle.params["mystery/weights"] = np.zeros(3, np.float32)
        with pytest.raises(ValidationError):
            bundle.validate()

    def test_shape_mismatch(self):
        bundle = models.init_bundle(models.build_aug_vggish(2), init="zeros")
        bundle.params["fc1/weights"] = np.zeros((256, 511), np.float32)
        with pytest.raises(ValidationError):
            bundle.validate()

    def test_inconsistent_chain_rejected(self):
        layers = (
            models.LayerDef("conv1", "conv", in_ch=1, out_ch=8, kernel=3),
            models.LayerDef("bn1", "batchnorm", channels=4, relu=True),  # wrong width
            models.LayerDef("gap", "global_avg_pool"),
            models.LayerDef("head", "dense", in_units=8, out_units=2),
        )
        spec = models.ModelSpec(arch_id="aug_vggish", num_classes=2, layers=layers,
                                embedding_layer="gap", embedding_dim=8)
        with pytest.raises(ValidationError):
            models.init_bundle(spec, init="zeros")
