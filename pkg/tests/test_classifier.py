import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffscan.classifier import (
    Dataset,
    LabelMapping,
    PoisonSpec,
    TrainConfig,
    apply_trigger,
    attack_success_rate,
    blocky_pattern,
    corner_patch,
    default_arch,
    evaluate,
    penultimate_class_means,
    poison_dataset,
    train,
)

SHAPE = (1, 16, 16)


def blended(alpha, target=1, rate=0.1):
    pattern = blocky_pattern(SHAPE, 4, np.random.default_rng(0))
    return PoisonSpec("blended", pattern, LabelMapping("all-to-one", target=target), rate, alpha=alpha)


def patch(size=3, mapping=None, rate=0.1, corner="TL"):
    pattern, mask = corner_patch(SHAPE, size, corner, np.random.default_rng(1))
    return PoisonSpec("patch", pattern, mapping or LabelMapping("all-to-one", target=2), rate, mask=mask)


class TestApplyTrigger:
    def test_tiny_blend_is_near_identity(self):
        x = np.random.default_rng(2).uniform(-1, 1, SHAPE)
        # alpha must be positive; the limit alpha -> 0 leaves x unchanged
        np.testing.assert_allclose(apply_trigger(x, blended(1e-12)), x, atol=1e-11)

    def test_full_mask_overwrites(self):
        pattern = np.random.default_rng(3).choice([-1.0, 1.0], size=SHAPE)
        spec = PoisonSpec("patch", pattern, LabelMapping("all-to-one", target=0), 0.1, mask=np.ones(SHAPE))
        np.testing.assert_array_equal(apply_trigger(np.zeros(SHAPE), spec), pattern)

    def test_corner_patch_changes_nine_pixels(self):
        out = apply_trigger(np.zeros(SHAPE), patch(3))
        assert np.count_nonzero(out != 0) == 9

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="incompatible"):
            apply_trigger(np.zeros((1, 8, 8)), patch())

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_patch_idempotent(self, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, (3,) + SHAPE)
        once = apply_trigger(x, patch())
        np.testing.assert_array_equal(apply_trigger(once, patch()), once)

    def test_clamped(self):
        x = np.full(SHAPE, 1.0)
        spec = PoisonSpec("blended", np.full(SHAPE, 3.0), LabelMapping("all-to-one", target=0), 0.1, alpha=0.5)
        assert apply_trigger(x, spec).max() == 1.0


class TestPoisonSpec:
    def test_non_binary_mask(self):
        with pytest.raises(ValueError, match="binary"):
            PoisonSpec("patch", np.zeros(SHAPE), LabelMapping("all-to-one", target=0), 0.1,
                       mask=np.full(SHAPE, 0.5))

    @pytest.mark.parametrize("rate", [0.0, 0.6])
    def test_rate_bounds(self, rate):
        with pytest.raises(ValueError, match="rate"):
            blended(0.2, rate=rate)

    def test_round_trip(self):
        spec = patch(mapping=LabelMapping("one-to-one", target=1, source=3))
        again = PoisonSpec.from_dict(spec.to_dict())
        assert again.mapping == spec.mapping
        np.testing.assert_array_equal(again.mask, spec.mask)


def dataset(n, k=4, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.uniform(-1, 1, (n,) + SHAPE), np.arange(n) % k, k)


class TestPoisonDataset:
    def test_rounds_to_one_sample(self):
        _, idx = poison_dataset(dataset(100), patch(rate=0.01), seed=0)
        assert idx.size == 1

    def test_all_to_all_shift(self):
        m = LabelMapping("all-to-all", shift=1)
        assert m.map(np.array([3]), 4).tolist() == [0]
        out, idx = poison_dataset(dataset(40), patch(mapping=m, rate=0.5), seed=1)
        d = dataset(40)
        assert np.array_equal(out.labels[idx], (d.labels[idx] + 1) % 4)

    def test_all_to_one_recount(self):
        d = dataset(200)
        out, idx = poison_dataset(d, patch(rate=0.1), seed=2)
        changed = np.flatnonzero(np.any(out.images != d.images, axis=(1, 2, 3)) | (out.labels != d.labels))
        assert changed.size == 20
        assert changed.tolist() == idx.tolist()
        assert (out.labels[changed] == 2).all()

    def test_complement_bit_identical(self):
        d = dataset(120)
        out, idx = poison_dataset(d, blended(0.2), seed=3)
        rest = np.setdiff1d(np.arange(120), idx)
        assert out.images[rest].tobytes() == d.images[rest].tobytes()
        assert out.labels[rest].tobytes() == d.labels[rest].tobytes()

    def test_deterministic(self):
        a = poison_dataset(dataset(80), patch(), seed=7)[1]
        b = poison_dataset(dataset(80), patch(), seed=7)[1]
        assert a.tolist() == b.tolist()

    def test_mapping_out_of_range(self):
        with pytest.raises(ValueError, match="K=4"):
            poison_dataset(dataset(40), patch(mapping=LabelMapping("all-to-one", target=4)), seed=0)

    def test_label_flip_keeps_half_labels(self):
        spec = PoisonSpec("label-flip", blocky_pattern(SHAPE, 4, np.random.default_rng(0)),
                          LabelMapping("all-to-one", target=1), 0.2, alpha=0.15)
        d = dataset(100)
        out, idx = poison_dataset(d, spec, seed=0)
        assert idx.size == 20
        assert (out.labels[idx] == 1).all()
        assert np.count_nonzero(d.labels[idx] == 1) == 10


def logistic_oracle(x, y, steps=500, lr=0.5):
    """Plain gradient-descent logistic regression on flattened inputs."""
    xf = np.c_[x.reshape(len(x), -1), np.ones(len(x))]
    w = np.zeros(xf.shape[1])
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-xf @ w))
        w -= lr * xf.T @ (p - y) / len(y)
    return float(np.mean((xf @ w > 0) == y))


class TestTrain:
    def blobs(self):
        rng = np.random.default_rng(0)
        y = np.arange(200) % 2
        centers = np.where(y[:, None, None, None] == 1, 0.5, -0.5)
        x = np.clip(centers + rng.normal(0, 0.15, (200, 1, 4, 4)), -1, 1)
        return Dataset(x, y, 2)

    def test_separable_blobs(self):
        d = self.blobs()
        assert logistic_oracle(d.images, d.labels) >= 0.99
        _, acc = train(d, default_arch(2, (1, 4, 4), width=4, hidden=8), TrainConfig(epochs=20, seed=0))
        assert acc >= 0.99

    def test_zero_epochs_returns_init(self):
        d = self.blobs()
        arch = default_arch(2, (1, 4, 4), width=4, hidden=8)
        a, _ = train(d, arch, TrainConfig(epochs=0, seed=5))
        init = arch.network().init_params(np.random.default_rng([5, 2]))
        for p, q in zip(a.params, init):
            np.testing.assert_array_equal(p, q)

    def test_deterministic(self, train_set):
        small = train_set.subset(np.arange(80))
        a, _ = train(small, default_arch(), TrainConfig(epochs=1, seed=1))
        b, _ = train(small, default_arch(), TrainConfig(epochs=1, seed=1))
        assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params, b.params))

    def test_poisoned_model_admissible(self, trojan_model, test_set, patch_poison):
        assert evaluate(trojan_model, test_set) >= 0.9
        asr = attack_success_rate(trojan_model, test_set, lambda x: apply_trigger(x, patch_poison), 2)
        assert asr >= 0.9


class TestMetrics:
    class Constant:
        num_classes = 4

        def __init__(self, y):
            self.y = y

        def predict(self, x):
            return np.full(len(x), self.y)

    def test_constant_target_asr_one(self):
        assert attack_success_rate(self.Constant(2), dataset(40), lambda x: x, 2) == 1.0

    def test_zero_effect_trigger(self, clean_model, test_set):
        perfect = evaluate(clean_model, test_set)
        assert perfect == 1.0
        assert attack_success_rate(clean_model, test_set, lambda x: x, 1) == 0.0

    def test_asr_recount(self, trojan_model, test_set, patch_poison):
        asr = attack_success_rate(trojan_model, test_set, lambda x: apply_trigger(x, patch_poison), 2)
        hits = [trojan_model.predict(apply_trigger(x, patch_poison)) == 2
                for x, y in zip(test_set.images, test_set.labels) if y != 2]
        assert abs(asr - np.mean(hits)) <= 0.02

    def test_empty_eligible(self):
        d = Dataset(np.zeros((3,) + SHAPE), np.full(3, 1), 4)
        with pytest.raises(ValueError, match="eligible"):
            attack_success_rate(self.Constant(1), d, lambda x: x, 1)

    def test_evaluate_empty(self, clean_model):
        with pytest.raises(ValueError):
            evaluate(clean_model, Dataset(np.zeros((0,) + SHAPE), np.zeros(0), 4))


class TestFeatureMeans:
    def test_single_sample_per_class(self, clean_model, test_set):
        probe = test_set.subset(np.arange(4))
        np.testing.assert_array_equal(penultimate_class_means(clean_model, probe), clean_model.features(probe.images))

    def test_duplicated_probe(self, clean_model, test_set):
        dup = Dataset(np.concatenate([test_set.images] * 2), np.concatenate([test_set.labels] * 2), 4)
        np.testing.assert_allclose(penultimate_class_means(clean_model, dup),
                                   penultimate_class_means(clean_model, test_set), rtol=1e-12)

    def test_hand_computed(self, clean_model, test_set):
        feats = clean_model.features(test_set.images)
        phi = penultimate_class_means(clean_model, test_set)
        for y in (0, 1):
            rows = [feats[i] for i in range(len(test_set)) if test_set.labels[i] == y]
            np.testing.assert_allclose(phi[y], sum(rows) / len(rows), rtol=1e-12)

    def test_shuffle_invariant(self, clean_model, test_set):
        perm = np.random.default_rng(0).permutation(len(test_set))
        np.testing.assert_allclose(penultimate_class_means(clean_model, test_set.subset(perm)),
                                   penultimate_class_means(clean_model, test_set), rtol=1e-12)

    def test_missing_class(self, clean_model, test_set):
        probe = test_set.subset(np.flatnonzero(test_set.labels != 3))
        with pytest.raises(ValueError, match="class 3"):
            penultimate_class_means(clean_model, probe)
