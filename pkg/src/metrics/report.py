"""
MetricsReport
-------------
Per-frame and per-clip scores plus aggregates, exported as JSON and CSV.
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from src.utils.io import write_json


class FrameScore(BaseModel):
    frame: int
    psnr: float
    ssim: float = Field(..., ge=-1.0, le=1.0)


class ClipReport(BaseModel):
    clip_id: str
    per_frame: List[FrameScore] = Field(default_factory=list)
    warp_error: Optional[float] = Field(default=None, ge=0.0)
    epe: Optional[float] = Field(default=None, ge=0.0)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([f.psnr for f in self.per_frame])) if self.per_frame else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([f.ssim for f in self.per_frame])) if self.per_frame else float("nan")

    def to_json(self) -> Dict:
        aggregates = {"psnr": self.mean_psnr, "ssim": self.mean_ssim}
        if self.warp_error is not None:
            aggregates["warp_error"] = self.warp_error
        if self.epe is not None:
            aggregates["epe"] = self.epe
        return {
            "clip_id": self.clip_id,
            "per_frame": [f.model_dump() for f in self.per_frame],
            "aggregates": aggregates,
        }


class MetricsReport(BaseModel):
    """
    Collection of clip reports for one evaluated method.

    Attributes:
        name: label of the evaluated variant (e.g. "full", "no_spatial").
        clips: one entry per clip.
    """

    name: str = "full"
    clips: List[ClipReport] = Field(default_factory=list)

    def frame_table(self) -> pd.DataFrame:
        rows = [
            {"method": self.name, "clip_id": c.clip_id, "frame": f.frame, "psnr": f.psnr, "ssim": f.ssim}
            for c in self.clips
            for f in c.per_frame
        ]
        return pd.DataFrame(rows, columns=["method", "clip_id", "frame", "psnr", "ssim"])

    def clip_table(self) -> pd.DataFrame:
        rows = [
            {
                "method": self.name,
                "clip_id": c.clip_id,
                "psnr": c.mean_psnr,
                "ssim": c.mean_ssim,
                "warp_error": c.warp_error,
                "epe": c.epe,
            }
            for c in self.clips
        ]
        return pd.DataFrame(rows, columns=["method", "clip_id", "psnr", "ssim", "warp_error", "epe"])

    def aggregates(self) -> Dict[str, Dict[str, float]]:
        frames = self.frame_table()
        clips = self.clip_table()
        out: Dict[str, Dict[str, float]] = {}
        for col, table in (("psnr", frames), ("ssim", frames), ("warp_error", clips), ("epe", clips)):
            values = pd.to_numeric(table[col], errors="coerce").dropna()
            if len(values):
                out[col] = {"mean": float(values.mean()), "std": float(values.std(ddof=0))}
        return out

    def to_json(self) -> Dict:
        return {
            "method": self.name,
            "clips": [c.to_json() for c in self.clips],
            "aggregates": self.aggregates(),
        }

    def save(self, out_dir: Union[str, Path], stem: Optional[str] = None) -> Path:
        out_dir = Path(out_dir)
        stem = stem or f"metrics_{self.name}"
        write_json(out_dir / f"{stem}.json", self.to_json())
        self.clip_table().to_csv(out_dir / f"{stem}_clips.csv", index=False)
        self.frame_table().to_csv(out_dir / f"{stem}_frames.csv", index=False)
        return out_dir / f"{stem}.json"


def comparison_table(reports: List[MetricsReport]) -> pd.DataFrame:
    """One row per method: mean PSNR, SSIM and E_warp (the ablation-table layout)."""
    rows = []
    for r in reports:
        agg = r.aggregates()
        rows.append(
            {
                "method": r.name,
                "psnr": agg.get("psnr", {}).get("mean"),
                "ssim": agg.get("ssim", {}).get("mean"),
                "warp_error": agg.get("warp_error", {}).get("mean"),
            }
        )
    return pd.DataFrame(rows, columns=["method", "psnr", "ssim", "warp_error"])
