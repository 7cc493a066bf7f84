from src.synth.contaminant import ContaminantSpec, BlobSpec, composite, composite_contaminants, derive_gt_attention
from src.synth.corpus import ClipData, Corpus, Sample, emit_corpus, generate_clip
from src.synth.scene import SceneSpec, analytic_flow, gen_background_clip, translation

__all__ = [
    "BlobSpec",
    "ClipData",
    "ContaminantSpec",
    "Corpus",
    "Sample",
    "SceneSpec",
    "analytic_flow",
    "composite",
    "composite_contaminants",
    "derive_gt_attention",
    "emit_corpus",
    "gen_background_clip",
    "generate_clip",
    "translation",
]
