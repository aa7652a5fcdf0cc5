import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from diffscan.classifier import corner_patch
from diffscan.detect import (
    CornerSpec,
    DetectorPoison,
    DetectorTrainConfig,
    Scenes,
    SceneLaw,
    corner_log_prob,
    corner_shift_grad,
    default_detector_arch,
    detection_accuracy,
    detection_terms,
    detector_asr,
    detector_trojan_score,
    invert_detection_trigger,
    membership,
    poison_scenes,
    random_corner,
    scan_detector,
    train_detector,
)
from diffscan.detect.detector import Detector
from diffscan.inversion import GuidanceConfig, TriggerCandidate, invert_trigger
from diffscan.numerics import max_relative_error, numeric_gradient, relu_pattern, stencil_kinks

LAW = SceneLaw()


@pytest.fixture(scope="module")
def scenes():
    return LAW.sample(800, np.random.default_rng([1, 1]))


@pytest.fixture(scope="module")
def poison():
    pattern, mask = corner_patch(LAW.shape, 3, "TR", np.random.default_rng(2))
    return DetectorPoison(pattern, mask, 1, "TR", 0.15, CornerSpec("TR").center)


@pytest.fixture(scope="module")
def clean_det(scenes):
    return train_detector(scenes, default_detector_arch(4, LAW.shape), DetectorTrainConfig(epochs=12, seed=0))


@pytest.fixture(scope="module")
def trojan_det(scenes, poison):
    ps, _ = poison_scenes(scenes, poison, 3)
    return train_detector(ps, default_detector_arch(4, LAW.shape), DetectorTrainConfig(epochs=12, seed=0))


@pytest.fixture(scope="module")
def det_heldout():
    return LAW.heldout_per_class(32, 3)


def fixed_box_detector(center, scale=1e-2, seed=0):
    """Tiny random backbone whose box head is dominated by a bias placing the center at ``center``."""
    arch = default_detector_arch(4, LAW.shape)
    rng = np.random.default_rng(seed)
    params = [scale * rng.normal(size=s) for s in arch.param_shapes()]
    logit = np.log(np.array(center) / (1 - np.array(center)))
    params[-1] = np.array([logit[0], logit[1], 0.0, 0.0])
    return Detector(arch, params)


class TestMembership:
    def test_region_corner_is_quarter(self):
        d, r, tau = sp.symbols("d r tau", positive=True)
        sig = 1 / (1 + sp.exp(-(r - d) / tau))
        expr = (sig * sig).subs(d, r)
        assert sp.limit(expr, tau, 0, "+") == sp.Rational(1, 4)
        c = CornerSpec("TL")
        cx0, cy0 = c.center
        for tau_v in (0.05, 0.01, 1e-4):
            assert membership(cx0 + c.radius, cy0 - c.radius, c, tau_v) == pytest.approx(0.25, abs=1e-15)

    @settings(max_examples=80, deadline=None)
    @given(st.sampled_from(["TL", "TR", "BL", "BR"]), st.floats(0, 1), st.floats(0, 1), st.floats(0.001, 0.3))
    def test_open_unit_interval_and_monotone(self, name, cx, cy, step):
        c = CornerSpec(name)
        p = membership(cx, cy, c)
        assert 0.0 < p < 1.0
        cx0, _ = c.center
        # moving along x toward the region center never lowers membership
        closer = cx + np.sign(cx0 - cx) * min(step, abs(cx0 - cx))
        assert membership(closer, cy, c) >= p

    def test_region_inside_unit_square(self):
        for name in ("TL", "TR", "BL", "BR"):
            c = CornerSpec(name, 0.3)
            assert all(c.radius <= v <= 1 - c.radius for v in c.center)

    @pytest.mark.parametrize("radius", [0.0, 0.5])
    def test_radius_bounds(self, radius):
        with pytest.raises(ValueError):
            CornerSpec("TL", radius)

    def test_random_corner(self):
        names = {random_corner(np.random.default_rng(s)).corner for s in range(40)}
        assert names == {"TL", "TR", "BL", "BR"}


class TestCornerGradient:
    def test_saturated_inside(self):
        x = np.random.default_rng(0).uniform(-1, 1, LAW.shape)
        c = CornerSpec("TL")
        inside = fixed_box_detector((0.21, 0.19))
        edge = fixed_box_detector((0.4, 0.19))
        assert np.exp(corner_log_prob(inside, x, c)) > 0.95
        g_in = np.linalg.norm(corner_shift_grad(inside, x, c))
        g_edge = np.linalg.norm(corner_shift_grad(edge, x, c))
        assert g_in < 0.05 * g_edge

    @pytest.mark.parametrize("which", ["clean_det", "trojan_det"])
    @pytest.mark.parametrize("name", ["TL", "BR"])
    def test_finite_difference(self, request, which, name):
        det = request.getfixturevalue(which)
        c = CornerSpec(name)
        x = np.random.default_rng(4).uniform(-0.8, 0.8, LAW.shape)
        h = 1e-4
        g = corner_shift_grad(det, x, c)
        fd = numeric_gradient(lambda z: float(corner_log_prob(det, z, c)), x, h)
        kinks = stencil_kinks(lambda z: relu_pattern(det.net, det.params, z), x, h)
        assert kinks.mean() < 0.05
        assert max_relative_error(g[~kinks], fd[~kinks]) < 1e-4

    def test_batched(self, clean_det):
        x = np.random.default_rng(5).uniform(-1, 1, (3,) + LAW.shape)
        c = CornerSpec("BL")
        np.testing.assert_allclose(corner_shift_grad(clean_det, x, c),
                                   [corner_shift_grad(clean_det, xi, c) for xi in x], rtol=1e-9, atol=1e-15)


class TestDetectorModel:
    def test_boxes_in_unit_square(self, clean_det, scenes):
        b = clean_det.boxes(scenes.images[:50])
        assert b.min() >= 0 and b.max() <= 1

    def test_admissible(self, clean_det, trojan_det, poison):
        test = LAW.sample(300, np.random.default_rng([1, 2]))
        acc, err = detection_accuracy(clean_det, test)
        assert acc >= 0.9 and err < 0.1
        assert detector_asr(trojan_det, test, poison) >= 0.9

    def test_poison_moves_boxes(self, scenes, poison):
        ps, idx = poison_scenes(scenes, poison, 3)
        assert (ps.labels[idx] == 1).all()
        np.testing.assert_array_equal(ps.boxes[idx, :2], np.tile(poison.box_center, (len(idx), 1)))

    def test_scene_validation(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            Scenes(np.zeros((1,) + LAW.shape), [0], [[0.5, 0.5, 1.2, 0.5]], 4)


class TestInvertDetection:
    def test_zero_weight_reduces_to_classification(self, generator, clean_det):
        cfg = GuidanceConfig()
        a = invert_detection_trigger(generator, clean_det, 0, 3, CornerSpec("BR"), cfg, seed=2, corner_weight=0.0)
        b = invert_trigger(generator, clean_det, 0, 3, cfg, seed=2)
        assert type(a) is type(b)
        assert a.retries_used == b.retries_used
        if isinstance(a, TriggerCandidate):
            assert a.pattern.tobytes() == b.pattern.tobytes()

    def test_corner_term_changes_pass(self, generator, clean_det):
        cfg = GuidanceConfig(lambda2_valid=1e-9)
        a = invert_detection_trigger(generator, clean_det, 0, 3, CornerSpec("BR"), cfg, seed=2, corner_weight=0.0)
        b = invert_detection_trigger(generator, clean_det, 0, 3, CornerSpec("BR"), cfg, seed=2, corner_weight=1.0)
        assert not np.array_equal(a.pattern, b.pattern)

    def test_planted_corner_approach(self, generator, trojan_det, det_heldout):
        rep = scan_detector(trojan_det, generator, GuidanceConfig(), det_heldout, seed=0, corners=("TR",))
        approach = [r.corner_shift for r in rep.runs if r.accepted]
        assert max(approach) >= 0.1


class TestTrojanScore:
    def test_zero_trigger(self, clean_det, det_heldout):
        held = det_heldout[2]
        cand = TriggerCandidate(np.zeros(LAW.shape), 2, 0, 1.0, 1)
        rep = detector_trojan_score(clean_det, cand, held)
        _, err = detection_accuracy(clean_det, held)
        assert rep.displacement == pytest.approx(err, abs=1e-12)
        probs = clean_det.probs(held.images)
        assert rep.class_shift == pytest.approx(np.mean(probs[:, 0] - probs[:, 2]), abs=1e-12)
        assert rep.combined == rep.class_shift + rep.displacement

    def test_displacement_recount(self, trojan_det, det_heldout):
        held = det_heldout[0]
        pattern = np.random.default_rng(6).uniform(-0.5, 0.5, LAW.shape)
        _, disp, _ = detection_terms(trojan_det, pattern, 0, 1, held)
        per = []
        for x, box in zip(held.images, held.boxes):
            c = trojan_det.boxes(np.clip(x + pattern, -1, 1))[:2]
            per.append(np.hypot(*(c - box[:2])))
        assert abs(disp - np.mean(per)) <= 1e-9
        assert 0.0 <= disp <= np.sqrt(2)

    def test_empty(self, clean_det):
        empty = Scenes(np.zeros((0,) + LAW.shape), np.zeros(0), np.zeros((0, 4)), 4)
        with pytest.raises(ValueError, match="empty"):
            detector_trojan_score(clean_det, TriggerCandidate(np.zeros(LAW.shape), 0, 1, 1.0, 1), empty)

    def test_scan_report_decomposes(self, generator, clean_det, det_heldout):
        rep = scan_detector(clean_det, generator, GuidanceConfig(), det_heldout, seed=0, threshold=1.2,
                            corners=("TL", "BR"))
        assert len(rep.runs) == 24
        best = max(r.combined for r in rep.runs)
        assert rep.combined == best == rep.class_shift + rep.displacement
        assert rep.to_dict()["combined"] == rep.combined
