"""
PipelineState
-------------
Typed state passed between the nodes of the end-to-end graph.

Every node receives the state, does its stage and returns an updated copy;
paths are filled in as artifacts appear on disk.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from src.utils.errors import ConfigError


class PipelineState(BaseModel):
    """
    Attributes:
        config_path (str): INI file or preset name the run was configured with.
        seed (Optional[int]): ``--seed`` override.
        run_dir (str): root of every artifact of the run.
        corpus_dir (Optional[str]): emitted corpus.
        stage1_checkpoint (Optional[str]): last stage-one checkpoint.
        intermediate_dir (Optional[str]): stage-one outputs over the corpus.
        stage2_checkpoint (Optional[str]): last stage-two checkpoint.
        metrics (Dict[str, Any]): aggregates keyed by evaluated method.
        completed (List[str]): names of the nodes that have finished.
    """

    config_path: str = Field(default="desk", description="INI path or preset name.")
    seed: Optional[int] = Field(default=None, description="Seed override for synth and train.")
    run_dir: str = Field(..., description="Root directory for all artifacts.")
    corpus_dir: Optional[str] = None
    stage1_checkpoint: Optional[str] = None
    intermediate_dir: Optional[str] = None
    stage2_checkpoint: Optional[str] = None
    metrics: Dict[str, Any] = Field(default_factory=dict)
    completed: List[str] = Field(default_factory=list)

    def require(self, *fields: str) -> None:
        missing = [f for f in fields if getattr(self, f) is None]
        if missing:
            raise ConfigError(f"PipelineState is missing {missing}; did the upstream node run?")

    def advance(self, node: str, **updates: Any) -> "PipelineState":
        return self.model_copy(update={**updates, "completed": self.completed + [node]})

    def summary(self) -> str:
        return (
            f"PipelineState ({self.run_dir}):\n"
            f" - completed: {', '.join(self.completed) or 'nothing'}\n"
            f" - corpus: {self.corpus_dir}\n"
            f" - stage-one checkpoint: {self.stage1_checkpoint}\n"
            f" - stage-two checkpoint: {self.stage2_checkpoint}\n"
        )
