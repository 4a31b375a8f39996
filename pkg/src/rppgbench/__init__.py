"""Desk-scale rPPG benchmark: degrade, extract, mitigate, evaluate."""

__version__ = "0.1.0"

from .core import (BvpSignal, FrameSequence, GroundTruth, HrSeries,
                   LandmarkSet, RgbTrace, mean_rgb, resample_check,
                   uniform_sequence)
from .degrade import (BlurSpec, ColorDepthSpec, NoiseSpec, OcclusionAsset,
                      add_gaussian_noise, apply_facemask, apply_sunglasses,
                      estimate_homography, gaussian_blur, reduce_color_depth,
                      resize)
from .evaluate import (DegradationSpec, EvaluationReport, MitigationSpec,
                       Subject, SynthSpec, mae, pcc, psnr, run_matrix, ssim,
                       synth_subject, synth_trace)
from .hr import (WindowConfig, bandpass_zero_phase, estimate_hr_window,
                 hr_series, sliding_windows, welch_psd)
from .methods import (METHOD_NAMES, extract, extract_chrom, extract_green,
                      extract_omit, extract_pos)
from .mitigate import (LabStats, NlmParams, TvParams, color_transfer_lab,
                       nlm_denoise, skin_only, strategy0_passthrough,
                       strategy1_effective_fps, strategy2_reconstruct,
                       strategy2_reconstruct_trace, tv_denoise_image,
                       tv_denoise_signal)
from .temporal import DropManifest, downsample_uniform, drop_random
