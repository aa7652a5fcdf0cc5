import itertools
import json
from decimal import ROUND_HALF_UP, Decimal, localcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffscan.classifier import Classifier, default_arch
from diffscan.detect import Detector, default_detector_arch
from diffscan.diffusion import DenoiserHyper, NoiseSchedule, isotropic_prior, train_denoiser
from diffscan.harness import (
    ConfigError,
    RunConfig,
    ZooSpec,
    auc,
    build_zoo,
    calibrate_threshold,
    load_benchmark,
    load_manifest,
    parse_config,
    recheck_entry,
    run_ablation,
    run_benchmark,
)
from diffscan.harness.formats import (
    BadMagicError,
    HeaderMismatchError,
    TruncatedError,
    export_trigger,
    load_model,
    parse,
    pixel_levels,
    read_pnm,
    render,
    save_model,
)

TINY = ZooSpec(n_clean=2, n_trojaned=2, n_calib_clean=1, n_calib_trojaned=1, n_det_clean=0, n_det_trojaned=0,
               n_one_to_one=0, n_all_to_all=0)


@pytest.fixture(scope="module")
def tiny_zoo(tmp_path_factory):
    out = tmp_path_factory.mktemp("zoo")
    build_zoo(TINY, 3, out)
    return out


class TestModelFormat:
    def test_classifier_round_trip(self, tmp_path, clean_model, test_set):
        save_model(clean_model, tmp_path / "m.dstl", {"note": "x"})
        again = load_model(tmp_path / "m.dstl")
        a, b = clean_model.logits(test_set.images), again.logits(test_set.images)
        # relative to each sample's logit vector; single logits can sit near zero
        assert np.max(np.linalg.norm(a - b, axis=1) / np.linalg.norm(a, axis=1)) < 1e-5

    def test_rounded_is_exact(self, tmp_path, clean_model):
        m = clean_model.rounded()
        save_model(m, tmp_path / "m.dstl")
        assert all(p.tobytes() == q.tobytes() for p, q in zip(load_model(tmp_path / "m.dstl").params, m.params))

    def test_detector_and_denoiser(self, tmp_path):
        arch = default_detector_arch()
        det = Detector(arch, [np.random.default_rng(0).normal(size=s) for s in arch.param_shapes()]).rounded()
        save_model(det, tmp_path / "d.dstl")
        x = np.random.default_rng(1).uniform(-1, 1, (3, 1, 16, 16))
        np.testing.assert_array_equal(load_model(tmp_path / "d.dstl").boxes(x), det.boxes(x))
        den = train_denoiser(isotropic_prior((2,), 1.0).draw, (2,), NoiseSchedule.linear(10),
                             DenoiserHyper(steps=0, hidden=(4,)))
        save_model(den, tmp_path / "e.dstl")
        back = load_model(tmp_path / "e.dstl")
        assert back.schedule.T == 10
        np.testing.assert_allclose(back.eps(np.ones(2), 3), den.eps(np.ones(2), 3), rtol=1e-5)

    def test_layout(self, tmp_path, clean_model):
        save_model(clean_model, tmp_path / "m.dstl")
        blob = (tmp_path / "m.dstl").read_bytes()
        assert blob[:8] == b"DSTLMDL1"
        n = int.from_bytes(blob[8:12], "little")
        header = json.loads(blob[12:12 + n].decode("utf-8"))
        w = np.frombuffer(blob, "<f4", count=header["shapes"][0][0] * 9, offset=12 + n)
        np.testing.assert_array_equal(w, clean_model.params[0].astype("<f4").ravel())

    def test_bad_magic(self, tmp_path, clean_model):
        save_model(clean_model, tmp_path / "m.dstl")
        blob = bytearray((tmp_path / "m.dstl").read_bytes())
        blob[0] ^= 0xFF
        (tmp_path / "m.dstl").write_bytes(bytes(blob))
        with pytest.raises(BadMagicError, match="bad magic"):
            load_model(tmp_path / "m.dstl")

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.dstl").write_bytes(b"")
        with pytest.raises(TruncatedError, match="truncated"):
            load_model(tmp_path / "e.dstl")

    def test_truncated_payload(self, tmp_path, clean_model):
        save_model(clean_model, tmp_path / "m.dstl")
        (tmp_path / "t.dstl").write_bytes((tmp_path / "m.dstl").read_bytes()[:-4])
        with pytest.raises(TruncatedError, match="payload"):
            load_model(tmp_path / "t.dstl")

    def test_shape_mismatch(self, tmp_path):
        small = Classifier(default_arch(width=4), default_arch(width=4).network().init_params(np.random.default_rng(0)))
        save_model(small, tmp_path / "m.dstl")
        blob = (tmp_path / "m.dstl").read_bytes()
        n = int.from_bytes(blob[8:12], "little")
        header = json.loads(blob[12:12 + n])
        header["arch"] = default_arch(width=8).to_dict()
        raw = render(header).encode()
        (tmp_path / "x.dstl").write_bytes(blob[:8] + len(raw).to_bytes(4, "little") + raw + blob[12 + n:])
        with pytest.raises(HeaderMismatchError, match="shapes"):
            load_model(tmp_path / "x.dstl")

    def test_trailing_bytes(self, tmp_path, clean_model):
        save_model(clean_model, tmp_path / "m.dstl")
        (tmp_path / "m.dstl").write_bytes((tmp_path / "m.dstl").read_bytes() + b"\0\0\0\0")
        with pytest.raises(HeaderMismatchError, match="beyond"):
            load_model(tmp_path / "m.dstl")


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-10**6, 10**6) | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=8),
    lambda kids: st.lists(kids, max_size=4) | st.dictionaries(st.text(max_size=6), kids, max_size=4),
    max_leaves=20)


class TestDocuments:
    @settings(max_examples=100, deadline=None)
    @given(json_values)
    def test_round_trip(self, doc):
        assert parse(render(doc)) == doc
        assert render(parse(render(doc))) == render(doc)

    def test_key_order_stable(self):
        assert render({"b": 1, "a": 2}) == render({"a": 2, "b": 1})


def half_up(p):
    # binary64 values expand exactly within ~1100 significant digits
    with localcontext() as ctx:
        ctx.prec = 1200
        return int(((Decimal(p) + 1) * Decimal("127.5")).quantize(Decimal(1), rounding=ROUND_HALF_UP))


class TestTriggerExport:
    @pytest.mark.parametrize("value,level", [(-1.0, 0), (1.0, 255), (0.0, 128)])
    def test_constant_patterns(self, tmp_path, value, level):
        export_trigger(np.full((1, 3, 4), value), tmp_path / "t.pgm")
        text = (tmp_path / "t.pgm").read_text().split()
        assert text[:4] == ["P2", "4", "3", "255"]
        assert set(text[4:]) == {str(level)}

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1, 1))
    def test_levels_match_decimal_oracle(self, p):
        assert pixel_levels(np.array([p]))[0] == half_up(p)

    def test_color_row_major(self, tmp_path):
        pat = np.zeros((3, 2, 2))
        pat[0, 0, 1] = 1.0
        pat[2, 1, 0] = -1.0
        export_trigger(pat, tmp_path / "t.ppm")
        lines = (tmp_path / "t.ppm").read_text().splitlines()
        assert lines[:3] == ["P3", "2 2", "255"]
        assert lines[3] == "128 128 128 255 128 128"
        assert lines[4] == "128 128 0 128 128 128"
        np.testing.assert_array_equal(read_pnm(tmp_path / "t.ppm"), pixel_levels(pat))

    def test_channel_count(self, tmp_path):
        with pytest.raises(ValueError, match="1- or 3-channel"):
            export_trigger(np.zeros((2, 4, 4)), tmp_path / "t.pgm")


def brute_auc(clean, troj):
    wins = [1.0 if t > c else 0.5 if t == c else 0.0 for c, t in itertools.product(clean, troj)]
    return sum(wins) / len(wins)


class TestMetrics:
    def test_perfect(self):
        assert auc([0.1, 0.2], [0.8, 0.9]) == 1.0

    def test_all_equal(self):
        assert auc([0.3] * 4, [0.3] * 5) == 0.5

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from([-1.0, 0.0, 0.25, 0.5, 1.0]), min_size=1, max_size=12),
           st.lists(st.sampled_from([-1.0, 0.0, 0.25, 0.5, 1.0]), min_size=1, max_size=12))
    def test_brute_force(self, clean, troj):
        assert auc(clean, troj) == pytest.approx(brute_auc(clean, troj), abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            auc([], [1.0])

    def test_threshold(self):
        assert calibrate_threshold([0.1, 0.3], [0.7, 0.9]) == 0.5
        assert calibrate_threshold([], [0.7], fallback=0.42) == 0.42


class TestConfig:
    def test_defaults(self):
        g = RunConfig().guidance
        assert (g.lambda1, g.lambda2_valid, g.T, g.max_retries) == (0.3, 0.95, 50, 5)

    def test_parse(self):
        run = parse_config("# comment\nlambda1 = 0.1\n\nt_scaling = false\nT=20  # inline\nprior_var = 0.1\n")
        assert run.guidance.lambda1 == 0.1 and run.guidance.T == 20 and not run.guidance.t_scaling
        assert run.prior_var == 0.1

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key 'lamda1'"):
            parse_config("lamda1 = 0.3")

    @pytest.mark.parametrize("text,msg", [("T = 1.5", "bad value"), ("lambda1 = 0.1\nlambda1 = 0.2", "duplicate"),
                                          ("t_scaling = maybe", "boolean"), ("just words", "key = value"),
                                          ("lambda2_valid = 1.5", "lambda2_valid")])
    def test_errors(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config(text)


class TestZoo:
    def test_entries(self, tiny_zoo):
        m = load_manifest(tiny_zoo)
        ids = [e["id"] for e in m["entries"]]
        assert ids == ["eval-c00", "eval-c01", "eval-t00", "eval-t01", "calib-c00", "calib-t00"]
        for e in m["entries"]:
            if e["ground_truth"] == "clean":
                assert e["attack"] is None
            else:
                assert {"kind", "mapping", "target", "rate", "file"} <= set(e["attack"])
                if e["admission"]["status"] == "admitted":
                    assert e["admission"]["asr"] >= 0.9 and e["admission"]["acc"] >= 0.85

    def test_rebuild_byte_identical(self, tiny_zoo, tmp_path):
        build_zoo(TINY, 3, tmp_path)
        assert (tmp_path / "manifest.json").read_bytes() == (tiny_zoo / "manifest.json").read_bytes()
        for e in load_manifest(tiny_zoo)["entries"]:
            assert (tmp_path / e["model"]).read_bytes() == (tiny_zoo / e["model"]).read_bytes()

    def test_recheck(self, tiny_zoo):
        for e in load_manifest(tiny_zoo)["entries"]:
            acc, asr = recheck_entry(tiny_zoo, e)
            assert abs(acc - e["admission"]["acc"]) <= 1e-9
            if e["attack"] is not None:
                assert abs(asr - e["admission"]["asr"]) <= 1e-9

    def test_spec_round_trip(self):
        assert ZooSpec.from_dict(json.loads(render(TINY.to_dict()))) == TINY
        with pytest.raises(KeyError, match="bogus"):
            ZooSpec.from_dict({"bogus": 1})

    def test_spec_needs_both_kinds(self):
        with pytest.raises(ValueError):
            ZooSpec(n_trojaned=0)


@pytest.fixture(scope="module")
def ablation(tiny_zoo, tmp_path_factory):
    out = tmp_path_factory.mktemp("abl")
    return run_ablation(tiny_zoo, RunConfig(), ("G", "B", "D"), out), out


class TestBenchmark:
    def test_metrics_recount(self, ablation):
        results, _ = ablation
        r = results["G"]
        clean = [r.reports[i].overall for i in r.reports if r.entries[i]["ground_truth"] == "clean"]
        troj = [r.reports[i].overall for i in r.reports if r.entries[i]["ground_truth"] == "trojaned"]
        assert r.auc == pytest.approx(brute_auc(clean, troj), abs=1e-12)
        assert 0.0 <= r.auc <= 1.0
        th = r.summary.threshold
        correct = sum((rep.overall >= th) == (r.entries[i]["ground_truth"] == "trojaned")
                      for i, rep in r.reports.items())
        assert r.accuracy == correct / len(r.reports)
        assert th == calibrate_threshold([r.calibration["calib-c00"].overall], [r.calibration["calib-t00"].overall])

    def test_setup_counters(self, ablation):
        results, _ = ablation
        assert {rep.inversions for rep in results["G"].reports.values()} == {12}
        assert {rep.inversions for rep in results["D"].reports.values()} == {4}
        assert all(rep.config["lambda1"] == 0.0 for rep in results["B"].reports.values())
        assert results["B"].summary.n_clean == 2

    def test_reload_recomputes(self, ablation):
        results, out = ablation
        for s, r in results.items():
            back = load_benchmark(out / s)
            assert back.summary == r.summary
            assert {i: rep.to_dict() for i, rep in back.reports.items()} == \
                {i: rep.to_dict() for i, rep in r.reports.items()}

    def test_reports_deterministic(self, tiny_zoo, ablation, tmp_path):
        _, out = ablation
        run_benchmark(tiny_zoo, RunConfig(), "full", "G", tmp_path)
        for p in sorted((out / "G" / "reports").glob("*.json")):
            assert (tmp_path / "reports" / p.name).read_bytes() == p.read_bytes()
        assert (tmp_path / "summary.json").read_bytes() == (out / "G" / "summary.json").read_bytes()

    def test_unreadable_entry_skipped(self, tiny_zoo, tmp_path):
        import shutil

        shutil.copytree(tiny_zoo, tmp_path / "z")
        (tmp_path / "z" / "entries" / "eval-c01" / "model.dstl").write_bytes(b"junk")
        r = run_benchmark(tmp_path / "z", RunConfig())
        assert [s["id"] for s in r.skipped] == ["eval-c01"]
        assert "eval-c01" not in r.reports
