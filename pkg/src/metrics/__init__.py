from src.metrics.quality import psnr, ssim, warp_error, warp_error_gt
from src.metrics.report import ClipReport, FrameScore, MetricsReport, comparison_table

__all__ = [
    "ClipReport",
    "FrameScore",
    "MetricsReport",
    "comparison_table",
    "psnr",
    "ssim",
    "warp_error",
    "warp_error_gt",
]
