from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, ClassVar

import numpy as np

from xmoco.cli.command_registry import CommandRegistry
from xmoco.cli.service import EmbeddingService, serve
from xmoco.constants import CommandID, Modality, SplitTag
from xmoco.data.pairs import PairDataset, load_pairs, split, write_pairs
from xmoco.data.synthetic import generate_synthetic
from xmoco.errors import DatasetFormatError, InvalidArgumentError
from xmoco.model.encoders import embed_matrix, encode
from xmoco.model.moco import TwoTowerState
from xmoco.retrieval.evaluate import evaluate
from xmoco.retrieval.index import RankedList, build_index, top_k
from xmoco.retrieval.metrics import MetricsReport, graded_summary, judgment_map, load_judgments
from xmoco.training.checkpoint import load_checkpoint, save_checkpoint
from xmoco.training.trainer import Trainer
from xmoco.utils.file import append_jsonl, canonical_json, iter_jsonl, write_jsonl

if TYPE_CHECKING:
    from xmoco.cli.config import RunConfig

LOGGER = logging.getLogger(__name__)


def emit(payload: Any) -> None:  # noqa: ANN401
    """Write one canonical JSON document to standard output."""
    sys.stdout.write(canonical_json(payload) + "\n")
    sys.stdout.flush()


def _json_vector(text: str, flag: str) -> list[float]:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"{flag} must be a JSON list of numbers ({e.msg})") from e
    if not isinstance(value, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise InvalidArgumentError(f"{flag} must be a JSON list of numbers")
    return [float(x) for x in value]


# -- Operations -----------------------------------------------------------------------------------------


def cmd_gen_data(config: RunConfig, out_path: Path) -> dict[str, Any]:
    """
    Generate the synthetic dataset described by ``config.synth`` and write it as a pair file.

    Returns:
        dict[str, Any]: Summary with the pair count, dimensions, correlation mode and path.

    """
    dataset = generate_synthetic(config.synth)
    write_pairs(dataset, out_path)
    return {
        "n_pairs": len(dataset),
        "dim_a": dataset.dim_a,
        "dim_b": dataset.dim_b,
        "correlation_mode": config.synth.correlation_mode.value,
        "path": str(out_path),
    }


def holdout(dataset: PairDataset, config: RunConfig) -> tuple[PairDataset, PairDataset]:
    """Split a pair file into its training and held-out test parts, per ``train.split`` and ``train.seed``."""
    train_set, _val_set, test_set = split(dataset, config.train.split, config.train.seed)
    return train_set, test_set


def cmd_train(config: RunConfig, resume: Path | None = None) -> dict[str, Any]:
    """
    Train on ``train.data_path``, write the checkpoint and the JSONL history.

    The pair file is split per ``train.split``; the test part is evaluated during and after training.

    Args:
        config (RunConfig): Validated configuration.
        resume (Path | None): Checkpoint (or folder) to continue from; history is then appended.

    Returns:
        dict[str, Any]: Summary with the step reached, the paths written, the last loss and the last evaluation.

    """
    dataset = load_pairs(Path(config.train.data_path))
    train_set, test_set = holdout(dataset, config)
    checkpoint = load_checkpoint(resume) if resume is not None else None
    trainer = Trainer(config.train, config.towers, test_set if len(test_set) else None, checkpoint)
    history = trainer.run(train_set)
    ckpt_path = save_checkpoint(Path(config.train.checkpoint_path), trainer.checkpoint(train_set))

    history_path = Path(config.train.history_path)
    if resume is None:
        write_jsonl(history_path, history.records())
    else:
        for record in history.records():
            append_jsonl(history_path, record)

    return {
        "step": trainer.step,
        "checkpoint": str(ckpt_path),
        "history": str(history_path),
        "final_loss": history.steps[-1].loss_total if history.steps else None,
        "eval": history.evals[-1].recall if history.evals else None,
    }


def cmd_eval(
    config: RunConfig,
    checkpoint: Path | None,
    data_path: Path,
    *,
    use_holdout: bool = False,
    judgments_path: Path | None = None,
) -> MetricsReport:
    """
    Evaluate a checkpoint (or freshly initialized encoders when ``checkpoint`` is None) on a pair file.

    Args:
        config (RunConfig): Evaluation options, and the towers/split used without a checkpoint.
        checkpoint (Path | None): Checkpoint file or folder.
        data_path (Path): Pair file.
        use_holdout (bool): Evaluate only the held-out test split (same split as training).
        judgments_path (Path | None): Graded judgments naming their candidates, used for NDCG/MAP.

    Returns:
        MetricsReport: The report.

    """
    if checkpoint is not None:
        ckpt = load_checkpoint(checkpoint)
        state, split_config = ckpt.state, replace(config, train=ckpt.train)
    else:
        state = TwoTowerState.create(
            config.towers,
            queue_capacity=config.train.queue_capacity,
            tau_init=config.train.tau_init,
            momentum=config.train.momentum,
        )
        split_config = config
        LOGGER.info("Evaluating freshly initialized encoders")
    dataset = load_pairs(data_path)
    if use_holdout:
        _train, dataset = holdout(dataset, split_config)
    judgments = judgment_map(load_judgments(judgments_path)) if judgments_path is not None else None
    return evaluate(
        state,
        dataset,
        config.eval.recall_ks,
        judgments,
        config.eval.gain,
        config.eval.ndcg_ks,
        config.eval.map_threshold,
    )


def read_feature_rows(path: Path, modality: Modality) -> tuple[list[str], list[list[float]]]:
    """
    Read ids and feature vectors of one modality.

    Each line is ``{"id": str, "features": [...]}`` or a pair record, whose ``feat_<modality>`` is used.

    Raises:
        DatasetFormatError: On a line without usable features.

    """
    ids: list[str] = []
    rows: list[list[float]] = []
    key = f"feat_{modality.value}"
    for line_number, record in iter_jsonl(path):
        features = record.get("features", record.get(key))
        if not isinstance(features, list):
            raise DatasetFormatError(f"{path}:{line_number}: expected 'features' or {key!r}")
        ids.append(str(record.get("id", line_number)))
        rows.append(features)
    return ids, rows


def cmd_embed(checkpoint: Path, modality: Modality, input_path: Path, out_path: Path | None = None) -> int:
    """
    Embed every row of a JSONL file with the query encoder of one modality.

    Writes ``{"id": ..., "embedding": [...]}`` lines to ``out_path`` (standard output when None).

    Returns:
        int: The number of embeddings written.

    """
    state = load_checkpoint(checkpoint).state
    ids, rows = read_feature_rows(input_path, modality)
    embeddings = embed_matrix(state.query_encoder(modality), rows)
    records = [{"id": item_id, "embedding": vector.tolist()} for item_id, vector in zip(ids, embeddings, strict=True)]
    if out_path is None:
        for record in records:
            emit(record)
        return len(records)
    return write_jsonl(out_path, records)


def cmd_retrieve(checkpoint: Path, corpus_path: Path, query: list[float], k: int, modality: Modality) -> RankedList:
    """
    Rank the corpus items of the other modality for one query of ``modality``.

    Returns:
        RankedList: The top-k corpus ids and scores.

    """
    state = load_checkpoint(checkpoint).state
    corpus = load_pairs(corpus_path)
    target = modality.other
    index = build_index(corpus.ids, embed_matrix(state.query_encoder(target), corpus.features(target)))
    return top_k(index, encode(state.query_encoder(modality), query), k)


def cmd_match(checkpoint: Path, feat_a: list[float], feat_b: list[float]) -> float:
    """Score a pair by the dot product of its two embeddings."""
    state = load_checkpoint(checkpoint).state
    return float(np.dot(encode(state.query_a, feat_a), encode(state.query_b, feat_b)))


def cmd_score(config: RunConfig, judgments_path: Path) -> dict[str, Any]:
    """Compute NDCG and MAP of graded judgments (reported x100)."""
    judgments = load_judgments(judgments_path)
    summary: dict[str, Any] = graded_summary(
        [list(j.grades) for j in judgments],
        config.eval.ndcg_ks,
        config.eval.gain,
        config.eval.map_threshold,
    )
    summary["num_queries"] = len(judgments)
    return summary


# -- Command classes ------------------------------------------------------------------------------------


class Command:
    """
    Base class for CLI subcommands.

    Attributes:
        config (RunConfig): The validated run configuration.

    """

    help: ClassVar[str] = ""
    flag_keys: ClassVar[dict[str, str]] = {}  # argparse dest -> config section.key

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        LOGGER.debug(f"[Command] Initialized: {type(self).__name__}")

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        """Declare the subcommand's own flags."""

    def run(self, args: argparse.Namespace) -> None:
        """Execute the subcommand."""
        raise NotImplementedError


class GenDataCommand(Command):
    help = "Generate a synthetic paired dataset"
    flag_keys: ClassVar[dict[str, str]] = {"seed": "synth.seed", "out": "train.data_path"}

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--out", help="Pair file to write (default: train.data_path)")
        parser.add_argument("--seed", type=int, help="Generation seed (synth.seed)")

    def run(self, args: argparse.Namespace) -> None:  # noqa: ARG002
        emit(cmd_gen_data(self.config, Path(self.config.train.data_path)))


class TrainCommand(Command):
    help = "Train both towers and write a checkpoint plus history"
    flag_keys: ClassVar[dict[str, str]] = {
        "data": "train.data_path",
        "out": "train.checkpoint_path",
        "history": "train.history_path",
        "seed": "train.seed",
        "epochs": "train.epochs",
    }

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", help="Pair file to train on")
        parser.add_argument("--out", help="Checkpoint to write")
        parser.add_argument("--history", help="JSONL history to write")
        parser.add_argument("--seed", type=int, help="Training seed")
        parser.add_argument("--epochs", type=int, help="Number of epochs")
        parser.add_argument("--resume", type=Path, help="Checkpoint (or folder) to continue from")

    def run(self, args: argparse.Namespace) -> None:
        emit(cmd_train(self.config, args.resume))


class EvalCommand(Command):
    help = "Evaluate retrieval quality and print the metrics report"
    flag_keys: ClassVar[dict[str, str]] = {"data": "train.data_path"}

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--checkpoint", type=Path, help="Checkpoint file or folder")
        source.add_argument("--random-init", action="store_true", help="Use freshly initialized encoders")
        parser.add_argument("--data", help="Pair file to evaluate on")
        parser.add_argument("--holdout", action="store_true", help="Evaluate only the held-out test split")
        parser.add_argument("--judgments", type=Path, help="Graded judgments for NDCG/MAP")

    def run(self, args: argparse.Namespace) -> None:
        report = cmd_eval(
            self.config,
            args.checkpoint,
            Path(self.config.train.data_path),
            use_holdout=args.holdout,
            judgments_path=args.judgments,
        )
        emit(report.to_json_dict())


class EmbedCommand(Command):
    help = "Embed feature vectors of one modality"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file or folder")
        parser.add_argument("--modality", choices=[m.value for m in Modality], required=True)
        parser.add_argument("--input", type=Path, required=True, help="JSONL of feature rows")
        parser.add_argument("--out", type=Path, help="Embeddings JSONL (default: standard output)")

    def run(self, args: argparse.Namespace) -> None:
        count = cmd_embed(args.checkpoint, Modality(args.modality), args.input, args.out)
        LOGGER.info(f"Embedded {count} rows")


class RetrieveCommand(Command):
    help = "Rank a corpus for one query"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file or folder")
        parser.add_argument("--corpus", type=Path, required=True, help="Pair file to search")
        parser.add_argument("--modality", choices=[m.value for m in Modality], required=True, help="Query modality")
        parser.add_argument("--query", required=True, help="Query features as a JSON list")
        parser.add_argument("-k", "--k", type=int, default=10, help="Number of results")

    def run(self, args: argparse.Namespace) -> None:
        query = _json_vector(args.query, "--query")
        emit(cmd_retrieve(args.checkpoint, args.corpus, query, args.k, Modality(args.modality)).to_json_dict())


class ServeCommand(Command):
    help = "Serve the embedding, matching and retrieval API over HTTP"
    flag_keys: ClassVar[dict[str, str]] = {"host": "service.host", "port": "service.port", "corpus": "service.corpus_path"}

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file or folder")
        parser.add_argument("--host", help="Interface to bind")
        parser.add_argument("--port", type=int, help="TCP port")
        parser.add_argument("--corpus", help="Pair file backing /v1/retrieve")

    def run(self, args: argparse.Namespace) -> None:
        options = self.config.service
        corpus = load_pairs(Path(options.corpus_path), SplitTag.ALL) if options.corpus_path else None
        service = EmbeddingService(load_checkpoint(args.checkpoint).state, corpus)
        serve(service, options.host, options.port)


class ScoreCommand(Command):
    help = "Compute NDCG and MAP of graded judgments"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--judgments", type=Path, required=True, help="JSONL of graded results per query")

    def run(self, args: argparse.Namespace) -> None:
        emit(cmd_score(self.config, args.judgments))


class MatchCommand(Command):
    help = "Score one cross-modal pair"

    @classmethod
    def add_arguments(cls, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file or folder")
        parser.add_argument("--feat-a", required=True, help="Modality-a features as a JSON list")
        parser.add_argument("--feat-b", required=True, help="Modality-b features as a JSON list")

    def run(self, args: argparse.Namespace) -> None:
        score = cmd_match(args.checkpoint, _json_vector(args.feat_a, "--feat-a"), _json_vector(args.feat_b, "--feat-b"))
        emit({"score": score})


def _register_commands() -> None:
    """Automatically register all Command subclasses with the registry using CommandID."""
    for subclass in Command.__subclasses__():
        # Normalize class name: remove 'Command', lowercase
        class_key = subclass.__name__.replace("Command", "").lower()
        for command_id in CommandID:
            # Normalize enum name: lowercase, remove underscores
            if class_key == command_id.name.replace("_", "").lower():
                CommandRegistry.register(command_id, subclass)
                break


_register_commands()
