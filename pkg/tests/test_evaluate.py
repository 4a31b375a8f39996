import math

import numpy as np
import pytest

from rppgbench.core import FrameSequence, GroundTruth, HrSeries
from rppgbench.evaluate import (DegradationSpec, MitigationSpec, Subject,
                                SynthSpec, derive_seed, evaluate_cell, mae,
                                pcc, psnr, reference_hr, run_matrix, ssim,
                                synth_phase, synth_subject, synth_trace)
from rppgbench.hr import WindowConfig
from rppgbench.methods import METHOD_NAMES, extract
from rppgbench.report import report_csv_text, report_json_text


def series(values, start=0.0):
    t = start + np.arange(len(values), dtype=float)
    return HrSeries(t, np.asarray(values, dtype=float))


class TestMae:
    def test_identical_is_zero(self):
        s = series([72.0, 75.0, 80.0])
        assert mae(s, s) == 0.0

    def test_simple_case(self):
        assert mae(series([70.0, 74.0]), series([72.0, 72.0])) == pytest.approx(2.0)

    def test_missing_excluded_pairwise(self):
        est = series([70.0, np.nan, 74.0])
        ref = series([72.0, 72.0, 72.0])
        assert mae(est, ref) == pytest.approx(2.0)

    def test_no_pairs_is_error(self):
        est = series([np.nan, np.nan])
        ref = series([72.0, 72.0])
        with pytest.raises(ValueError, match="pairs"):
            mae(est, ref)

    def test_symmetric(self):
        a = series([70.0, 80.0, 90.0])
        b = series([75.0, 72.0, 95.0])
        assert mae(a, b) == mae(b, a)

    def test_alignment_on_window_starts(self):
        est = series([100.0, 70.0, 74.0])          # starts 0, 1, 2
        ref = series([72.0, 72.0, 100.0], start=1)  # starts 1, 2, 3
        assert mae(est, ref) == pytest.approx(2.0)


class TestPcc:
    def test_affine_invariance(self):
        ref = series([60.0, 70.0, 80.0, 90.0])
        scaled = series(2 * ref.hr_bpm + 3)
        assert pcc(scaled, ref) == pytest.approx(1.0, abs=1e-12)

    def test_anticorrelation(self):
        ref = series([60.0, 70.0, 80.0])
        neg = series([80.0, 70.0, 60.0])
        assert pcc(neg, ref) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_is_missing(self):
        assert math.isnan(pcc(series([72.0, 72.0, 72.0]), series([60.0, 70.0, 80.0])))


class TestPsnr:
    def test_identical_is_infinite(self):
        img = np.full((8, 8, 3), 50, np.uint8)
        assert psnr(img, img) == math.inf

    def test_uniform_difference_one(self):
        a = np.full((16, 16), 100, np.uint8)
        b = a + 1
        assert psnr(a, b) == pytest.approx(48.1308, abs=0.001)

    def test_full_scale_difference(self):
        a = np.zeros((8, 8), np.uint8)
        b = np.full((8, 8), 255, np.uint8)
        assert psnr(a, b) == pytest.approx(0.0, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((5, 5)))

    def test_strictly_decreasing_in_mse(self):
        base = np.full((32, 32), 128.0)
        vals = [psnr(base, base + d) for d in (1.0, 2.0, 4.0, 8.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestSsim:
    def test_identical_is_one(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (32, 32, 3), np.uint8)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_less_than_one(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (32, 32), np.uint8)
        assert ssim(img, 255 - img) < 1.0

    def test_matches_reference_implementation(self):
        from skimage.metrics import structural_similarity
        rng = np.random.default_rng(3)
        a = rng.integers(0, 256, (48, 48), np.uint8).astype(np.float64)
        b = np.clip(a + rng.normal(0, 12, a.shape), 0, 255)
        mine = ssim(a, b)
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, data_range=255)
        assert mine == pytest.approx(ref, abs=1e-6)

    def test_shift_by_constant_matches_reference(self):
        from skimage.metrics import structural_similarity
        rng = np.random.default_rng(4)
        a = rng.integers(30, 220, (40, 40), np.uint8).astype(np.float64)
        b = a + 10.0
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, data_range=255)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a = rng.integers(0, 256, (32, 32), np.uint8)
        b = rng.integers(0, 256, (32, 32), np.uint8)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_undersized_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestSynth:
    def test_constant_profile_reference_is_flat_72(self):
        spec = SynthSpec(duration_s=30.0)
        _, gt = synth_subject(SynthSpec(duration_s=30.0, frame_size=8))
        ref = reference_hr(gt, WindowConfig())
        assert len(ref) == 21
        assert np.all(np.abs(ref.hr_bpm - 72.0) <= 0.44)

    def test_zero_amplitude_constant_frames(self):
        seq, _ = synth_subject(SynthSpec(duration_s=10.0, amplitude=0.0, frame_size=8))
        assert len(np.unique(seq.frames.reshape(-1, 3), axis=0)) == 1
        trace = synth_trace(SynthSpec(duration_s=10.0, amplitude=0.0))
        for method in METHOD_NAMES:
            sig = extract(trace, method)
            assert np.abs(sig.samples).max() < 1e-9

    def test_trace_fft_peak_at_profile_frequency(self):
        spec = SynthSpec(duration_s=40.0, hr_bpm=90.0)
        trace = synth_trace(spec)
        g = trace.g - trace.g.mean()
        nfft = 1 << 16
        freqs = np.fft.rfftfreq(nfft, 1 / spec.fps)
        peak = freqs[np.argmax(np.abs(np.fft.rfft(g, n=nfft)))]
        assert peak == pytest.approx(1.5, abs=0.01)

    def test_amplitude_overflow_rejected(self):
        with pytest.raises(ValueError, match="255"):
            synth_trace(SynthSpec(base_color=(254, 254, 254), amplitude=4.0))

    def test_seeded_noise_deterministic(self):
        a, _ = synth_subject(SynthSpec(duration_s=2.0, noise_variance=0.004,
                                       seed=5, frame_size=8))
        b, _ = synth_subject(SynthSpec(duration_s=2.0, noise_variance=0.004,
                                       seed=5, frame_size=8))
        assert np.array_equal(a.frames, b.frames)

    def test_hr_bounds_validated(self):
        with pytest.raises(ValueError):
            SynthSpec(hr_bpm=30.0)


def tone_subject(duration=60.0):
    spec = SynthSpec(duration_s=duration)
    trace = synth_trace(spec)
    _, phase = synth_phase(spec)
    gt = GroundTruth.from_ppg(np.sin(phase), spec.fps)
    return Subject("tone", trace, gt)


class TestRunMatrix:
    def test_baseline_only_when_no_degradations(self):
        rep = run_matrix([tone_subject(20.0)], [], [MitigationSpec()], ["pos"])
        assert len(rep.rows) == 1
        row = rep.rows[0]
        assert row.degradation == "none"
        assert row.error == ""
        assert row.mae < 1.0

    def test_row_count_contract(self):
        degs = [DegradationSpec(kind="drop", fraction=0.5)]
        mits = [MitigationSpec(drop_strategy=s) for s in ("s0", "s1", "s2")]
        rep = run_matrix([tone_subject(30.0)], degs, mits, ["pos"], base_seed=3)
        assert len(rep.rows) == 4  # baseline + 3 strategies
        assert rep.rows[0].degradation == "none"

    def test_reports_are_reproducible(self):
        degs = [DegradationSpec(kind="drop", fraction=0.2)]
        mits = [MitigationSpec(drop_strategy="s2")]
        a = run_matrix([tone_subject(20.0)], degs, mits, ["green"], base_seed=9)
        b = run_matrix([tone_subject(20.0)], degs, mits, ["green"], base_seed=9)
        assert report_csv_text(a) == report_csv_text(b)
        assert report_json_text(a) == report_json_text(b)

    def test_parallel_matches_serial(self):
        degs = [DegradationSpec(kind="drop", fraction=0.3)]
        mits = [MitigationSpec(drop_strategy=s) for s in ("s0", "s2")]
        serial = run_matrix([tone_subject(20.0)], degs, mits, ["pos"], base_seed=2, jobs=1)
        parallel = run_matrix([tone_subject(20.0)], degs, mits, ["pos"], base_seed=2, jobs=4)
        assert report_csv_text(serial) == report_csv_text(parallel)

    def test_cell_failure_recorded_not_raised(self):
        # a bare trace cannot take a spatial degradation: the row records it
        degs = [DegradationSpec(kind="noise")]
        rep = run_matrix([tone_subject(20.0)], degs, [MitigationSpec()], ["pos"])
        errors = [r for r in rep.rows if r.error]
        assert len(errors) == 1
        assert "frames" in errors[0].error
        assert rep.rows[0].error == ""  # baseline still fine

    def test_seed_carried_in_rows(self):
        degs = [DegradationSpec(kind="drop", fraction=0.5)]
        rep = run_matrix([tone_subject(20.0)], degs, [MitigationSpec()], ["green"],
                         base_seed=7)
        assert all(r.seed is not None for r in rep.rows)
        assert rep.rows[1].seed == derive_seed(7, "tone", "green", "drop50", "s0")

    def test_different_seeds_change_drop_cells(self):
        degs = [DegradationSpec(kind="drop", fraction=0.5)]
        a = run_matrix([tone_subject(20.0)], degs, [MitigationSpec()], ["green"], base_seed=1)
        b = run_matrix([tone_subject(20.0)], degs, [MitigationSpec()], ["green"], base_seed=2)
        assert a.rows[1].mae != b.rows[1].mae


class TestOcclusionCells:
    def test_facemask_and_skin_only_run_clean(self):
        seq, gt = synth_subject(SynthSpec(duration_s=12.0, frame_size=32))
        subject = Subject("vid", seq, gt)
        occluded = evaluate_cell(subject, DegradationSpec(kind="facemask"),
                                 MitigationSpec(), "pos", WindowConfig(), seed=0)
        assert occluded.error == ""
        assert occluded.ssim is not None and occluded.ssim < 1.0
        repaired = evaluate_cell(subject, DegradationSpec(kind="facemask"),
                                 MitigationSpec(occlusion="os"), "pos",
                                 WindowConfig(), seed=0)
        assert repaired.error == ""
        # blacked occluder pixels are excluded from the means entirely
        assert repaired.mae < 1.0

    def test_sunglasses_cell(self):
        seq, gt = synth_subject(SynthSpec(duration_s=12.0, frame_size=32))
        res = evaluate_cell(Subject("vid", seq, gt),
                            DegradationSpec(kind="sunglasses"),
                            MitigationSpec(), "green", WindowConfig(), seed=0)
        assert res.error == ""
        assert res.mae < 1.0

    def test_occlusion_needs_landmarks(self):
        seq, gt = synth_subject(SynthSpec(duration_s=12.0, frame_size=32))
        bare = FrameSequence(seq.frames, seq.timestamps, seq.nominal_fps)
        res = evaluate_cell(Subject("vid", bare, gt),
                            DegradationSpec(kind="facemask"),
                            MitigationSpec(), "green", WindowConfig(), seed=0)
        assert "landmarks" in res.error


class TestEvaluateCellFrames:
    def test_spatial_metrics_present(self):
        seq, gt = synth_subject(SynthSpec(duration_s=12.0, frame_size=24,
                                          noise_variance=0.0))
        subject = Subject("vid", seq, gt)
        res = evaluate_cell(subject, DegradationSpec(kind="color_depth", nb=6),
                            MitigationSpec(), "pos", WindowConfig(), seed=0)
        assert res.error == ""
        assert res.psnr is not None and res.psnr > 30
        assert res.ssim is not None and 0 < res.ssim <= 1

    def test_baseline_has_no_image_metrics(self):
        seq, gt = synth_subject(SynthSpec(duration_s=12.0, frame_size=24))
        res = evaluate_cell(Subject("vid", seq, gt), DegradationSpec(),
                            MitigationSpec(), "green", WindowConfig(), seed=0)
        assert res.psnr is None and res.ssim is None
        assert res.mae < 1.0
