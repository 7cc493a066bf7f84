from langgraph.graph import END, StateGraph

from src.nodes.evaluate_node import EvaluateNode
from src.nodes.intermediate_node import IntermediateNode
from src.nodes.synth_node import SynthNode
from src.nodes.train_multi_node import TrainMultiNode
from src.nodes.train_single_node import TrainSingleNode
from src.states.config import ClearLensConfig
from src.states.pipeline_state import PipelineState


class PipelineGraph:
    """synth -> train_single -> gen_intermediate -> train_multi -> evaluate"""

    def __init__(self, config: ClearLensConfig, ablations: bool = False):
        self.graph = StateGraph(PipelineState)
        self.config = config
        self.ablations = ablations

    def build_graph(self):
        synth = SynthNode(self.config)
        train_single = TrainSingleNode(self.config)
        intermediate = IntermediateNode(self.config)
        train_multi = TrainMultiNode(self.config)
        evaluate = EvaluateNode(self.config, ablations=self.ablations)

        self.graph.add_node("synth", synth.process)
        self.graph.add_node("train_single", train_single.process)
        self.graph.add_node("gen_intermediate", intermediate.process)
        self.graph.add_node("train_multi", train_multi.process)
        self.graph.add_node("evaluate", evaluate.process)

        self.graph.set_entry_point("synth")
        self.graph.add_edge("synth", "train_single")
        self.graph.add_edge("train_single", "gen_intermediate")
        self.graph.add_edge("gen_intermediate", "train_multi")
        self.graph.add_edge("train_multi", "evaluate")
        self.graph.add_edge("evaluate", END)

        return self.graph.compile()


def run_pipeline(config: ClearLensConfig, state: PipelineState, ablations: bool = False) -> PipelineState:
    app = PipelineGraph(config, ablations=ablations).build_graph()
    result = app.invoke(state)
    return result if isinstance(result, PipelineState) else PipelineState(**result)
