from src.pipelines.training import IntermediateCorpus, train_multi_stage
from src.states.config import ClearLensConfig
from src.states.pipeline_state import PipelineState
from src.synth.corpus import Corpus


class TrainMultiNode:
    def __init__(self, config: ClearLensConfig):
        self.config = config

    def process(self, state: PipelineState) -> PipelineState:
        state.require("corpus_dir", "stage1_checkpoint", "intermediate_dir")
        corpus = Corpus(state.corpus_dir)
        intermediate = IntermediateCorpus(state.intermediate_dir, corpus)
        result = train_multi_stage(self.config, corpus, intermediate, state.stage1_checkpoint, state.run_dir)
        return state.advance("train_multi", stage2_checkpoint=str(result.checkpoint))
