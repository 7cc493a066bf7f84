"""
clearlens command line.

    clearlens synth             emit the paired synthetic corpus
    clearlens train-single      train the single-frame stage
    clearlens gen-intermediate  run stage one over the corpus
    clearlens train-multi       train the sequential refinement stage
    clearlens infer             restore a clip directory
    clearlens eval              score results, ablations and studies
    clearlens gradcheck         finite-difference checks of ops and losses
    clearlens run-all           every step above, chained in a graph

Every subcommand accepts ``--config``, ``--seed`` and ``--out``; ``--out``
is the run directory and defaults to ``$CLEARLENS_DATA_DIR``
(``runs/default`` when unset). ``infer --debug-panels`` dumps the
per-iteration images.
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from src.graph.pipeline_graph import run_pipeline
from src.metrics.evaluate import (
    ablation_study,
    evaluate,
    flow_ablation,
    flow_completion_report,
    frame_count_study,
    recurrence_trace,
    restore_corpus,
    summarize_flow_report,
)
from src.pipelines.inference import infer, load_multi_frame, load_single_frame
from src.pipelines.single_frame import ABLATIONS
from src.pipelines.training import (
    STAGE_ONE,
    STAGE_TWO,
    IntermediateCorpus,
    generate_intermediate,
    stage_dir,
    train_multi_stage,
    train_single_stage,
)
from src.scripts.gradcheck_suite import run_suite
from src.states.config import ClearLensConfig, load_config
from src.states.pipeline_state import PipelineState
from src.synth.corpus import Corpus, emit_corpus
from src.utils.errors import ClearLensError
from src.utils.io import write_json
from src.utils.logging import get_logger

load_dotenv()

logger = get_logger("clearlens")

DEFAULT_RUN_DIR = "runs/default"


# ---------------------------------------------------------------------- #
#  Argument parsing
# ---------------------------------------------------------------------- #
def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("Run options")
    group.add_argument("--config", default="desk", help="INI file or preset name (desk, full). Default: desk")
    group.add_argument("--seed", type=int, default=None, help="Override train.seed and synth.seed")
    group.add_argument("--out", default=None, help="Run directory (default: $CLEARLENS_DATA_DIR or runs/default)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clearlens",
        description="Two-stage recurrent restoration of videos seen through a contaminated lens.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("synth", parents=[common], help="Emit the synthetic corpus to <out>/corpus")
    p.add_argument("--splits", nargs="+", default=["train", "test"], choices=["train", "test"])

    p = sub.add_parser("train-single", parents=[common], help="Train the single-frame stage")
    p.add_argument("--corpus", default=None, help="Corpus root (default: <out>/corpus)")

    p = sub.add_parser("gen-intermediate", parents=[common], help="Run stage one over the corpus")
    p.add_argument("--corpus", default=None)
    p.add_argument("--checkpoint", default=None, help="Stage-one checkpoint (default: newest in <out>)")
    p.add_argument("--dest", default=None, help="Output directory (default: <out>/intermediate)")

    p = sub.add_parser("train-multi", parents=[common], help="Train the sequential refinement stage")
    p.add_argument("--corpus", default=None)
    p.add_argument("--intermediate", default=None, help="Stage-one outputs (default: <out>/intermediate)")
    p.add_argument("--init", default=None, help="Stage-one checkpoint to start from (default: newest in <out>)")

    p = sub.add_parser("infer", parents=[common], help="Restore a directory of numbered PNG frames")
    p.add_argument("--input", required=True, help="Clip directory")
    p.add_argument("--single", default=None, help="Stage-one checkpoint (default: newest in <out>)")
    p.add_argument("--multi", default=None, help="Stage-two checkpoint (default: newest in <out>)")
    p.add_argument("--stage-one-only", action="store_true", help="Emit {P_t} and skip stage two")
    p.add_argument("--debug-panels", action="store_true", help="Dump per-iteration T, M and A_eff images")
    p.add_argument("--neighbors", type=int, default=None, help="Neighbour iterations per frame (default: train.neighbors)")
    p.add_argument("--dest", default=None, help="Output directory (default: <out>/infer/<clip>)")

    p = sub.add_parser("eval", parents=[common], help="Evaluate results and run studies")
    p.add_argument("--corpus", default=None)
    p.add_argument("--results", default=None, help="Existing results directory (<dir>/<clip>/frame_*) to score")
    p.add_argument("--name", default="results", help="Method label for --results")
    p.add_argument("--single", default=None)
    p.add_argument("--multi", default=None)
    p.add_argument("--restore", action="store_true", help="Restore the eval split with both stages and score P and O")
    p.add_argument("--ablations", nargs="*", default=None, choices=sorted(ABLATIONS), help="Ablation rows (all when empty)")
    p.add_argument("--frame-study", action="store_true", help="Quality against neighbour count")
    p.add_argument("--recurrence", action="store_true", help="Per-iteration PSNR trace")
    p.add_argument("--flow-report", action="store_true", help="Inside/outside-mask EPE of the completed flow")
    p.add_argument("--flow-ablation", nargs="+", default=None, metavar="CKPT", help="Compare flow completion across checkpoints")

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient checks")
    p.add_argument("--only", nargs="+", default=None, help="Run only the named cases")

    p = sub.add_parser("run-all", parents=[common], help="synth, both trainings, intermediate generation and eval")
    p.add_argument("--ablations", action="store_true", help="Also run the ablation study")
    return parser


# ---------------------------------------------------------------------- #
#  Commands
# ---------------------------------------------------------------------- #
def _run_dir(args: argparse.Namespace) -> Path:
    return Path(args.out or os.getenv("CLEARLENS_DATA_DIR") or DEFAULT_RUN_DIR)


def _corpus(args: argparse.Namespace, run_dir: Path) -> Corpus:
    return Corpus(args.corpus or run_dir / "corpus")


def cmd_synth(args, config: ClearLensConfig, run_dir: Path) -> None:
    emit_corpus(config.synth, run_dir / "corpus", splits=args.splits)


def cmd_train_single(args, config: ClearLensConfig, run_dir: Path) -> None:
    result = train_single_stage(config, _corpus(args, run_dir), run_dir)
    logger.info(f"Stage one finished; last checkpoint {result.checkpoint}")


def cmd_gen_intermediate(args, config: ClearLensConfig, run_dir: Path) -> None:
    checkpoint = args.checkpoint or stage_dir(run_dir, STAGE_ONE)
    generate_intermediate(config, _corpus(args, run_dir), checkpoint, args.dest or run_dir / "intermediate")


def cmd_train_multi(args, config: ClearLensConfig, run_dir: Path) -> None:
    corpus = _corpus(args, run_dir)
    intermediate = IntermediateCorpus(args.intermediate or run_dir / "intermediate", corpus)
    init = args.init or stage_dir(run_dir, STAGE_ONE)
    result = train_multi_stage(config, corpus, intermediate, init, run_dir)
    logger.info(f"Stage two finished; last checkpoint {result.checkpoint}")


def cmd_infer(args, config: ClearLensConfig, run_dir: Path) -> None:
    dest = args.dest or run_dir / "infer" / Path(args.input).name
    infer(
        config,
        args.input,
        dest,
        single_ckpt=args.single or stage_dir(run_dir, STAGE_ONE),
        multi_ckpt=None if args.stage_one_only else (args.multi or stage_dir(run_dir, STAGE_TWO)),
        stage_one_only=args.stage_one_only,
        debug_panels=args.debug_panels,
        n_neighbors=args.neighbors,
    )


def cmd_eval(args, config: ClearLensConfig, run_dir: Path) -> None:
    wants_single = args.restore or args.ablations is not None or args.frame_study or args.recurrence or args.flow_report
    if not (wants_single or args.results or args.flow_ablation):
        raise ClearLensError("Nothing to evaluate: pass --results, --restore or one of the study flags")
    corpus = _corpus(args, run_dir)
    eval_dir = run_dir / "eval"
    if args.results:
        evaluate(args.results, corpus, config, name=args.name, out_dir=eval_dir)
    if args.flow_ablation:
        flow_ablation(args.flow_ablation, corpus, config, eval_dir)
    if not wants_single:
        return
    single = load_single_frame(args.single or stage_dir(run_dir, STAGE_ONE), config)
    if args.restore:
        multi = load_multi_frame(args.multi or stage_dir(run_dir, STAGE_TWO), config)
        for name, results_dir in restore_corpus(config, corpus, single, multi, eval_dir / "results").items():
            evaluate(results_dir, corpus, config, name=name, out_dir=eval_dir)
    if args.ablations is not None:
        ablation_study(single, corpus, config, eval_dir / "ablations", names=args.ablations or tuple(ABLATIONS))
    if args.frame_study:
        frame_count_study(single, corpus, config, eval_dir)
    if args.recurrence:
        recurrence_trace(single, corpus, config, eval_dir)
    if args.flow_report:
        table = flow_completion_report(single, corpus, config)
        eval_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(eval_dir / "flow_completion.csv", index=False)
        summary = summarize_flow_report(table)
        write_json(eval_dir / "flow_completion.json", summary)
        logger.info(f"Flow completion: {summary}")


def cmd_gradcheck(args, config: ClearLensConfig, run_dir: Path) -> None:
    reports = run_suite(seed=config.train.seed, only=args.only)
    failed = [r.name for r in reports if not r.passed]
    logger.info(f"{len(reports) - len(failed)}/{len(reports)} gradient checks passed")
    if failed:
        raise ClearLensError(f"Gradient check failed for {failed}")


def cmd_run_all(args, config: ClearLensConfig, run_dir: Path) -> None:
    state = PipelineState(config_path=str(args.config), seed=args.seed, run_dir=str(run_dir))
    final = run_pipeline(config, state, ablations=args.ablations)
    write_json(run_dir / "pipeline_state.json", final.model_dump(mode="json"))
    logger.info(final.summary())


COMMANDS = {
    "synth": cmd_synth,
    "train-single": cmd_train_single,
    "gen-intermediate": cmd_gen_intermediate,
    "train-multi": cmd_train_multi,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "run-all": cmd_run_all,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config).with_seed(args.seed)
        run_dir = _run_dir(args)
        COMMANDS[args.command](args, config, run_dir)
    except ClearLensError as e:
        logger.error(str(e))
        print(f"clearlens: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
