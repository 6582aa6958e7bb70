"""Training loop, evaluation and ablation sweeps.

Accuracy is always the exact ratio of two integer counters, never an
average of per-batch floats. Every run resolves its seed (the KKT_SEED
environment variable overrides the config), and reports carry a fingerprint
hashing the resolved config together with the data, so identical
fingerprints imply byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import assign_named, checkpoint_bytes, parse_checkpoint
from .data import Dataset, dataset_hash
from .keyturns import LeadingProvider, NliHead, NliProvider, OracleProvider, train_nli_head
from .knowledge import KnowledgeStore, PosTagger, iter_kg_triples, load_kg, load_surfaces, rewrite_triple
from .model import ABLATIONS, KktParams, KktPipeline
from .optim import Adam
from .tokenizer import Tokenizer

_DTYPES = {"float32": np.float32, "float64": np.float64}


class ConfigurationError(ValueError):
    """Raised when a run configuration or checkpoint pairing is invalid."""


@dataclass
class RunConfig:
    d_model: int = 64
    h: int = 4
    layers: int = 2
    k: int = 6
    p: int = 5
    weight_threshold: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 20
    warmup_steps: int = 50
    seed: int = 0
    ablation: str = "full"
    max_length: int = 256
    dtype: str = "float32"
    key_turn_provider: str = "auto"
    nli_epochs: int = 30

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")
        if self.key_turn_provider not in ("auto", "nli", "leading", "oracle"):
            raise ConfigurationError(f"unknown key-turn provider {self.key_turn_provider!r}")
        if self.k < 0 or self.p < 0:
            raise ConfigurationError("k and p must be non-negative")

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigurationError(f"unknown config fields {unknown}")
        return cls(**obj)

    @classmethod
    def paper_defaults(cls, **overrides) -> "RunConfig":
        """The published fine-tuning hyperparameters, kept for documentation.

        They target a very large pre-trained encoder on a GPU cluster; on
        this desk-scale stand-in they train far too slowly to be useful.
        """
        base = {"learning_rate": 1e-5, "batch_size": 1, "epochs": 3, "warmup_steps": 50}
        base.update(overrides)
        return cls(**base)


def effective_seed(config: RunConfig) -> int:
    env = os.environ.get("KKT_SEED")
    return int(env) if env else int(config.seed)


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fingerprint(config: RunConfig, seed: int, data_hashes: dict) -> str:
    payload = {"config": config.to_dict(), "seed": seed, "data": data_hashes}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def build_vocab(dataset: Dataset, kg_path=None, weight_threshold: float = 0.0, surfaces=None) -> Tokenizer:
    """Vocabulary over the training texts plus the knowledge graph's facts.

    Graph words are included so retrieval-relevant tokens (including ones
    appearing only at evaluation time) have ids; their embeddings stay
    untrained unless the training text uses them.
    """
    texts = list(dataset.texts())
    if kg_path is not None:
        table = surfaces or {}
        for triple in iter_kg_triples(kg_path):
            if triple.weight >= weight_threshold:
                texts.append(rewrite_triple(triple, table).text)
    return Tokenizer.build(texts)


@dataclass
class EvalReport:
    n: int
    n_plus: int
    mean_loss: float
    predictions: list
    fingerprint: str
    ablation: str

    @property
    def accuracy(self) -> float:
        return self.n_plus / self.n

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_plus": self.n_plus,
            "accuracy": self.accuracy,
            "mean_loss": self.mean_loss,
            "ablation": self.ablation,
            "fingerprint": self.fingerprint,
            "predictions": self.predictions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def evaluate_pipeline(pipeline: KktPipeline, dataset: Dataset, fingerprint_str: str = "") -> EvalReport:
    """Exact N+/N accuracy of the pipeline over the dataset."""
    n = 0
    n_plus = 0
    loss_total = 0.0
    predictions = []
    for ex in dataset.examples:
        res = pipeline.predict(ex)
        n += 1
        correct = res.predicted == ex.gold
        n_plus += int(correct)
        loss_total += res.loss.item()
        predictions.append(
            {"example_id": ex.example_id, "predicted": res.predicted, "gold": ex.gold, "correct": correct}
        )
    if n == 0:
        raise ValueError("evaluate: empty dataset")
    return EvalReport(
        n=n,
        n_plus=n_plus,
        mean_loss=loss_total / n,
        predictions=predictions,
        fingerprint=fingerprint_str,
        ablation=pipeline.ablation,
    )


def _resolve_provider(config: RunConfig, vocab: Tokenizer, rng, nli_corpus=None, planted=None, dtype=np.float64):
    """Build the key-turn provider; returns (provider, nli_head, nli_report)."""
    choice = config.key_turn_provider
    if choice == "auto":
        choice = "nli" if nli_corpus else "leading"
    if choice == "leading":
        return LeadingProvider(), None, None
    if choice == "oracle":
        return OracleProvider(planted or {}), None, None
    head = NliHead.init(
        len(vocab), config.d_model, config.h, config.layers, config.d_ff, config.max_length, rng, dtype=dtype
    )
    report = None
    if nli_corpus:
        report = train_nli_head(head, vocab, nli_corpus, epochs=config.nli_epochs, seed=effective_seed(config) + 1)
    return NliProvider(head, vocab), head, report


@dataclass
class TrainResult:
    params: KktParams
    pipeline: KktPipeline
    vocab: Tokenizer
    store: KnowledgeStore | None
    nli_head: NliHead | None
    history: list
    best: dict
    final_blob: bytes
    fingerprint: str
    nli_report: dict | None = None

    def best_blob(self) -> bytes:
        return self.best["blob"]


def _all_named(params: KktParams, nli_head: NliHead | None) -> dict:
    named = params.named_parameters()
    if nli_head is not None:
        named.update(nli_head.named_parameters())
    return named


def train(config: RunConfig, train_dataset: Dataset, kg_path=None, dev_dataset: Dataset | None = None,
          out_dir=None, nli_corpus=None, surfaces_path=None, lexicon_path=None, planted=None,
          stop_at_train_accuracy: float | None = None, log=None) -> TrainResult:
    """Minimize per-example cross-entropy over the dataset.

    Emits a checkpoint per epoch when `out_dir` is given and tracks the best
    dev-accuracy epoch (earliest wins ties); without a dev set the final
    epoch is "best". Aborts with diagnostics on a non-finite loss.
    """
    if not train_dataset.examples:
        raise ValueError("train: empty dataset")
    seed = effective_seed(config)
    dtype = config.np_dtype
    surfaces = load_surfaces(surfaces_path) if surfaces_path else {}
    tagger = PosTagger.load(lexicon_path) if lexicon_path else PosTagger()
    vocab = build_vocab(train_dataset, kg_path, config.weight_threshold, surfaces)
    store = load_kg(kg_path, config.weight_threshold, vocab, surfaces, tagger) if kg_path else None
    init_rng = np.random.default_rng([seed, 1])
    params = KktParams.init(
        len(vocab), config.d_model, config.h, config.layers, config.d_ff, config.max_length,
        config.ablation, init_rng, dtype=dtype,
    )
    provider, nli_head, nli_report = _resolve_provider(config, vocab, init_rng, nli_corpus, planted, dtype)
    pipeline = KktPipeline(params, vocab, store, provider, k=config.k, p=config.p, max_len=config.max_length)
    hashes = {"train": dataset_hash(train_dataset)}
    if dev_dataset is not None:
        hashes["dev"] = dataset_hash(dev_dataset)
    if kg_path is not None:
        hashes["kg"] = _file_sha(kg_path)
    run_fp = fingerprint(config, seed, hashes)

    # The NLI head trains once up front (if at all) and stays frozen here.
    opt = Adam(params.named_parameters(), lr=config.learning_rate, warmup_steps=config.warmup_steps)
    order_rng = np.random.default_rng([seed, 2])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        vocab.save(out / "vocab.txt")
        (out / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")
    history = []
    best = {"epoch": 0, "dev_accuracy": None, "blob": checkpoint_bytes(_all_named(params, nli_head), config.ablation)}
    examples = train_dataset.examples
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(examples))
        loss_sum = 0.0
        n_correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            opt.zero_grad()
            for idx in batch:
                ex = examples[int(idx)]
                res = pipeline.predict(ex)
                loss = res.loss
                if not math.isfinite(loss.item()):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch} step {step} example {ex.example_id}: {loss.item()!r}"
                    )
                T.mul(loss, 1.0 / len(batch)).backward()
                loss_sum += loss.item()
                n_correct += int(res.predicted == ex.gold)
            opt.step()
            pipeline.fact_encoder.bump_version()
            step += 1
        train_acc = n_correct / len(examples)
        record = {"epoch": epoch, "train_loss": loss_sum / len(examples), "train_accuracy": train_acc}
        dev_acc = None
        if dev_dataset is not None:
            dev_report = evaluate_pipeline(pipeline, dev_dataset, run_fp)
            dev_acc = dev_report.accuracy
            record["dev_accuracy"] = dev_acc
        history.append(record)
        if log:
            log(record)
        blob = checkpoint_bytes(_all_named(params, nli_head), config.ablation)
        if out is not None:
            (out / f"epoch_{epoch:03d}.kkt").write_bytes(blob)
        if dev_dataset is None:
            best = {"epoch": epoch, "dev_accuracy": None, "blob": blob}
        elif best["dev_accuracy"] is None or dev_acc > best["dev_accuracy"]:
            best = {"epoch": epoch, "dev_accuracy": dev_acc, "blob": blob}
        if stop_at_train_accuracy is not None and train_acc >= stop_at_train_accuracy:
            break
    final_blob = checkpoint_bytes(_all_named(params, nli_head), config.ablation)
    if out is not None:
        (out / "model.kkt").write_bytes(best["blob"])
        report = {
            "fingerprint": run_fp,
            "seed": seed,
            "history": history,
            "best_epoch": best["epoch"],
            "best_dev_accuracy": best["dev_accuracy"],
        }
        if nli_report:
            report["nli"] = {k: v for k, v in nli_report.items() if k != "loss_curve"}
        (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return TrainResult(
        params=params,
        pipeline=pipeline,
        vocab=vocab,
        store=store,
        nli_head=nli_head,
        history=history,
        best=best,
        final_blob=final_blob,
        fingerprint=run_fp,
        nli_report=nli_report,
    )


def pipeline_from_checkpoint(blob_or_path, config: RunConfig, vocab: Tokenizer, kg_path=None,
                             surfaces_path=None, lexicon_path=None, planted=None,
                             ablation: str | None = None) -> KktPipeline:
    """Rebuild an inference pipeline from a serialized checkpoint.

    The requested ablation must match the checkpoint's tag; `None` adopts
    the tag. NLI scorer tensors, when present, restore the NLI provider.
    """
    if isinstance(blob_or_path, (bytes, bytearray)):
        ckpt = parse_checkpoint(bytes(blob_or_path))
    else:
        ckpt = parse_checkpoint(Path(blob_or_path).read_bytes(), label=str(blob_or_path))
    if ablation is not None and ablation != ckpt.ablation:
        raise ConfigurationError(
            f"checkpoint carries ablation {ckpt.ablation!r} but {ablation!r} was requested"
        )
    mode = ckpt.ablation
    dtype = config.np_dtype
    rng = np.random.default_rng(0)
    params = KktParams.init(
        len(vocab), config.d_model, config.h, config.layers, config.d_ff, config.max_length, mode, rng, dtype=dtype
    )
    main_arrays = {k: v for k, v in ckpt.tensors.items() if not k.startswith("nli.")}
    nli_arrays = {k: v for k, v in ckpt.tensors.items() if k.startswith("nli.")}
    assign_named(params.named_parameters(), main_arrays, dtype=dtype)
    nli_head = None
    if nli_arrays:
        nli_head = NliHead.init(
            len(vocab), config.d_model, config.h, config.layers, config.d_ff, config.max_length, rng, dtype=dtype
        )
        assign_named(nli_head.named_parameters(), nli_arrays, dtype=dtype)
    surfaces = load_surfaces(surfaces_path) if surfaces_path else {}
    tagger = PosTagger.load(lexicon_path) if lexicon_path else PosTagger()
    store = load_kg(kg_path, config.weight_threshold, vocab, surfaces, tagger) if kg_path else None
    if config.key_turn_provider == "oracle":
        provider = OracleProvider(planted or {})
    elif nli_head is not None and config.key_turn_provider in ("auto", "nli"):
        provider = NliProvider(nli_head, vocab)
    else:
        provider = LeadingProvider()
    return KktPipeline(params, vocab, store, provider, k=config.k, p=config.p, max_len=config.max_length)


def evaluate(blob_or_path, config: RunConfig, vocab: Tokenizer, dataset: Dataset, kg_path=None,
             ablation: str | None = None, surfaces_path=None, lexicon_path=None, planted=None) -> EvalReport:
    """Evaluate a checkpoint; see evaluate_pipeline for the report contract."""
    pipeline = pipeline_from_checkpoint(
        blob_or_path, config, vocab, kg_path, surfaces_path, lexicon_path, planted, ablation
    )
    seed = effective_seed(config)
    hashes = {"eval": dataset_hash(dataset)}
    if kg_path is not None:
        hashes["kg"] = _file_sha(kg_path)
    fp = fingerprint(config, seed, hashes)
    return evaluate_pipeline(pipeline, dataset, fp)


def ablation_sweep(config: RunConfig, train_dataset: Dataset, eval_dataset: Dataset, kg_path=None,
                   grid: dict | None = None, train_per_cell: bool = False, **train_kwargs) -> list:
    """Accuracy table over a {k: [...], p: [...]} grid.

    Key-turn count and knowledge depth are inference-time knobs, so by
    default one model is trained per config and every cell re-evaluates it;
    `train_per_cell` opts into retraining per cell instead.
    """
    grid = grid or {}
    ks = list(grid.get("k", [config.k]))
    ps = list(grid.get("p", [config.p]))
    if not ks or not ps:
        raise ConfigurationError("sweep grid must leave at least one k and one p value")
    rows = []
    shared = None if train_per_cell else train(config, train_dataset, kg_path, dev_dataset=None, **train_kwargs)
    for k in ks:
        for p in ps:
            cell_cfg = RunConfig.from_dict({**config.to_dict(), "k": int(k), "p": int(p)})
            if train_per_cell:
                result = train(cell_cfg, train_dataset, kg_path, dev_dataset=None, **train_kwargs)
            else:
                result = shared
            pipeline = pipeline_from_checkpoint(result.best_blob(), cell_cfg, result.vocab)
            # Reuse the trained run's store and provider; both are read-only here.
            pipeline.store = result.store
            pipeline.provider = result.pipeline.provider
            seed = effective_seed(cell_cfg)
            fp = fingerprint(cell_cfg, seed, {"eval": dataset_hash(eval_dataset)})
            report = evaluate_pipeline(pipeline, eval_dataset, fp)
            rows.append({"k": int(k), "p": int(p), "n": report.n, "n_plus": report.n_plus,
                         "accuracy": report.accuracy, "fingerprint": fp})
    return rows
