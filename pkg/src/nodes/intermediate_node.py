from pathlib import Path

from src.pipelines.training import generate_intermediate
from src.states.config import ClearLensConfig
from src.states.pipeline_state import PipelineState
from src.synth.corpus import Corpus


class IntermediateNode:
    def __init__(self, config: ClearLensConfig):
        self.config = config

    def process(self, state: PipelineState) -> PipelineState:
        """Run the trained stage one over the corpus to build stage two's inputs."""
        state.require("corpus_dir", "stage1_checkpoint")
        out_dir = Path(state.run_dir) / "intermediate"
        generate_intermediate(self.config, Corpus(state.corpus_dir), state.stage1_checkpoint, out_dir)
        return state.advance("gen_intermediate", intermediate_dir=str(out_dir))
