from src.pipelines.training import train_single_stage
from src.states.config import ClearLensConfig
from src.states.pipeline_state import PipelineState
from src.synth.corpus import Corpus


class TrainSingleNode:
    def __init__(self, config: ClearLensConfig):
        self.config = config

    def process(self, state: PipelineState) -> PipelineState:
        state.require("corpus_dir")
        result = train_single_stage(self.config, Corpus(state.corpus_dir), state.run_dir)
        return state.advance("train_single", stage1_checkpoint=str(result.checkpoint))
