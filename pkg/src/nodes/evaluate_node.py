from pathlib import Path

from src.metrics.evaluate import ablation_study, evaluate, restore_corpus
from src.pipelines.inference import load_multi_frame, load_single_frame
from src.states.config import ClearLensConfig
from src.states.pipeline_state import PipelineState
from src.synth.corpus import Corpus


class EvaluateNode:
    def __init__(self, config: ClearLensConfig, ablations: bool = False):
        self.config = config
        self.ablations = ablations

    def process(self, state: PipelineState) -> PipelineState:
        """Restore the held-out split with both stages and score {I}, {P} and {O}."""
        state.require("corpus_dir", "stage1_checkpoint", "stage2_checkpoint")
        corpus = Corpus(state.corpus_dir)
        single = load_single_frame(state.stage1_checkpoint, self.config)
        multi = load_multi_frame(state.stage2_checkpoint, self.config)
        eval_dir = Path(state.run_dir) / "eval"
        results = restore_corpus(self.config, corpus, single, multi, eval_dir / "results")

        metrics = {}
        for name, results_dir in results.items():
            report = evaluate(results_dir, corpus, self.config, name=name, out_dir=eval_dir)
            metrics[name] = report.aggregates()
        if self.ablations:
            table = ablation_study(single, corpus, self.config, eval_dir / "ablations")
            metrics["ablations"] = table.to_dict(orient="records")
        return state.advance("evaluate", metrics=metrics)
