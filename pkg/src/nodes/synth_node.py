from pathlib import Path

from src.states.config import ClearLensConfig
from src.states.pipeline_state import PipelineState
from src.synth.corpus import emit_corpus
from src.utils.logging import get_logger

logger = get_logger(__name__)


class SynthNode:
    def __init__(self, config: ClearLensConfig):
        self.config = config

    def process(self, state: PipelineState) -> PipelineState:
        """Emit the train and test corpus under ``<run_dir>/corpus``."""
        corpus_dir = Path(state.run_dir) / "corpus"
        manifest = emit_corpus(self.config.synth, corpus_dir)
        logger.info(f"Corpus ready: {len(manifest['clips'])} clips")
        return state.advance("synth", corpus_dir=str(corpus_dir))
