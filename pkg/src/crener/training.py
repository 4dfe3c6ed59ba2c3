"""Training loop, entity-level evaluation, and checkpoint persistence.

Training minimizes the multi-tag threshold loss with adaptive moment
estimation plus decoupled weight decay (matrices only). The whole
update vector (moment direction and decay together) is renormalized to
at most grad_clip_norm * learning_rate, so that bound holds exactly per
step. Each epoch logs one JSON record; the best dev-F1 parameters are
kept. A checkpoint is a directory: manifest.json plus one .npy blob per
parameter (and per optimizer moment), little-endian.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, config_from_flat, config_to_flat
from .corpus import (
    CharVocabulary,
    EntityMention,
    Sentence,
    TagVocabulary,
    build_tag_vocabulary,
    sentence_to_obj,
)
from .errors import ConfigError, CorpusError, DivergenceError
from .model import CrenerModel

CHECKPOINT_FORMAT_VERSION = 1


class Adam:
    """Adaptive moment estimation with decoupled weight decay and a hard
    cap on the global update norm."""

    def __init__(
        self,
        store,
        learning_rate: float,
        weight_decay: float = 0.0,
        grad_clip_norm: float | None = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = learning_rate
        self.weight_decay = weight_decay
        self.grad_clip_norm = grad_clip_norm
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        updates = {}
        sq_norm = 0.0
        for name, t in self.store.items():
            if t.grad is None:
                continue
            g = t.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            upd = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay > 0.0 and t.data.ndim >= 2:
                upd = upd + self.weight_decay * t.data
            upd = self.lr * upd
            updates[name] = upd
            sq_norm += float((upd.astype(np.float64) ** 2).sum())
        if self.grad_clip_norm is not None:
            limit = self.grad_clip_norm * self.lr
            norm = np.sqrt(sq_norm)
            if norm > limit:
                scale = limit / norm
                for upd in updates.values():
                    upd *= scale
        for name, upd in updates.items():
            self.store[name].data -= upd.astype(self.store[name].data.dtype)

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k]).copy()
            self.v[k] = np.asarray(state["v"][k]).copy()


@dataclass
class EvalReport:
    """Entity-level exact-match scores with a per-type breakdown."""

    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    correct: int
    per_type: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "gold": self.gold,
            "predicted": self.predicted,
            "correct": self.correct,
            "per_type": self.per_type,
        }

    def format_table(self) -> str:
        rows = [("ALL", self.precision, self.recall, self.f1, self.gold)]
        for t in sorted(self.per_type):
            d = self.per_type[t]
            rows.append((t, d["precision"], d["recall"], d["f1"], d["gold"]))
        width = max(len(r[0]) for r in rows)
        lines = [f"{'type':<{width}}  {'P':>8}  {'R':>8}  {'F1':>8}  {'gold':>6}"]
        for name, p, r, f1, gold in rows:
            lines.append(f"{name:<{width}}  {p:>8.4f}  {r:>8.4f}  {f1:>8.4f}  {gold:>6d}")
        return "\n".join(lines)


def _prf(gold: int, predicted: int, correct: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted > 0 else 0.0
    r = correct / gold if gold > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def evaluate_model(model: CrenerModel, sentences) -> EvalReport:
    """Exact (indices, type) matching of predicted vs gold mentions."""
    gold_n = pred_n = correct_n = 0
    per_type: dict[str, dict] = {}

    def bucket(t: str) -> dict:
        return per_type.setdefault(t, {"gold": 0, "predicted": 0, "correct": 0})

    for sentence in sentences:
        gold = sentence.entity_set()
        pred = model.predict_sentence(sentence)
        gold_n += len(gold)
        pred_n += len(pred)
        correct_n += len(gold & pred)
        for e in gold:
            bucket(e.type)["gold"] += 1
        for e in pred:
            bucket(e.type)["predicted"] += 1
        for e in gold & pred:
            bucket(e.type)["correct"] += 1

    p, r, f1 = _prf(gold_n, pred_n, correct_n)
    breakdown = {}
    for t, d in per_type.items():
        tp, tr, tf1 = _prf(d["gold"], d["predicted"], d["correct"])
        breakdown[t] = {**d, "precision": tp, "recall": tr, "f1": tf1}
    return EvalReport(
        precision=p, recall=r, f1=f1,
        gold=gold_n, predicted=pred_n, correct=correct_n,
        per_type=breakdown,
    )


# ----------------------------------------------------------------------
# checkpointing


def _param_path(directory: str, name: str) -> str:
    return os.path.join(directory, "params", name + ".npy")


@dataclass
class Checkpoint:
    config: ModelConfig
    char_vocab: CharVocabulary
    tag_vocab: TagVocabulary
    params: dict
    optimizer_state: dict | None
    epoch: int
    history: list

    def save(self, directory: str) -> None:
        os.makedirs(os.path.join(directory, "params"), exist_ok=True)
        manifest = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": config_to_flat(self.config),
            "chars": self.char_vocab.chars,
            "entity_types": list(self.tag_vocab.entity_types),
            "none_is_implicit": self.tag_vocab.none_is_implicit,
            "epoch": self.epoch,
            "history": self.history,
            "parameters": sorted(self.params),
        }
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, ensure_ascii=False, indent=2)
        le = "<f8" if self.config.optimizer.double_precision else "<f4"
        for name, array in self.params.items():
            np.save(_param_path(directory, name), np.asarray(array).astype(le))
        if self.optimizer_state is not None:
            odir = os.path.join(directory, "optim")
            os.makedirs(odir, exist_ok=True)
            with open(os.path.join(odir, "state.json"), "w", encoding="utf-8") as fh:
                json.dump({"step": self.optimizer_state["step"]}, fh)
            for key in ("m", "v"):
                for name, array in self.optimizer_state[key].items():
                    np.save(
                        os.path.join(odir, f"{key}.{name}.npy"),
                        np.asarray(array).astype(le),
                    )

    @classmethod
    def load(cls, directory: str) -> "Checkpoint":
        manifest_path = os.path.join(directory, "manifest.json")
        if not os.path.exists(manifest_path):
            raise CorpusError(f"no checkpoint manifest at {manifest_path}")
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint format {manifest.get('format_version')!r}"
            )
        config = config_from_flat(manifest["config"])
        chars = manifest["chars"]
        char_vocab = CharVocabulary(chars[2:])  # first two slots are pad/unk
        tag_vocab = TagVocabulary(
            manifest["entity_types"], none_is_implicit=manifest["none_is_implicit"]
        )
        params = {
            name: np.load(_param_path(directory, name))
            for name in manifest["parameters"]
        }
        optimizer_state = None
        odir = os.path.join(directory, "optim")
        if os.path.exists(os.path.join(odir, "state.json")):
            with open(os.path.join(odir, "state.json"), encoding="utf-8") as fh:
                step = json.load(fh)["step"]
            optimizer_state = {
                "step": step,
                "m": {n: np.load(os.path.join(odir, f"m.{n}.npy")) for n in manifest["parameters"]},
                "v": {n: np.load(os.path.join(odir, f"v.{n}.npy")) for n in manifest["parameters"]},
            }
        return cls(
            config=config,
            char_vocab=char_vocab,
            tag_vocab=tag_vocab,
            params=params,
            optimizer_state=optimizer_state,
            epoch=int(manifest["epoch"]),
            history=manifest.get("history", []),
        )

    def build_model(self, context_provider: dict | None = None) -> CrenerModel:
        model = CrenerModel(
            self.config, self.char_vocab, self.tag_vocab, context_provider
        )
        model.store.load_state_dict(self.params)
        return model


def evaluate(checkpoint: Checkpoint, sentences, context_provider=None) -> EvalReport:
    return evaluate_model(checkpoint.build_model(context_provider), sentences)


def predict(checkpoint: Checkpoint, sentences, context_provider=None) -> list[Sentence]:
    """Sentences with entities replaced by model predictions, input order kept."""
    model = checkpoint.build_model(context_provider)
    out = []
    for s in sentences:
        mentions = sorted(model.predict_sentence(s), key=lambda e: (e.indices, e.type))
        out.append(Sentence(s.id, list(s.chars), list(mentions)))
    return out


def predictions_to_jsonl(sentences) -> str:
    return "".join(json.dumps(sentence_to_obj(s), ensure_ascii=False) + "\n" for s in sentences)


# ----------------------------------------------------------------------
# training loop


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def train(
    config: ModelConfig,
    train_sentences,
    dev_sentences=None,
    context_provider: dict | None = None,
    log_path: str | None = None,
    progress: bool = False,
    stop_at_f1: float | None = None,
) -> Checkpoint:
    """Train from scratch and return the best-dev-F1 checkpoint.

    Vocabularies come from the training split. With no dev split the
    final parameters are kept. `stop_at_f1` stops early once the dev F1
    reaches the bound (useful for overfit probes).
    """
    config.validate()
    if not train_sentences:
        raise CorpusError("empty training corpus")
    char_vocab = CharVocabulary.from_sentences(train_sentences)
    tag_vocab = build_tag_vocabulary(
        train_sentences, none_is_implicit=config.predictor.mode == "threshold"
    )
    model = CrenerModel(config, char_vocab, tag_vocab, context_provider)
    opt_cfg = config.optimizer
    optimizer = Adam(
        model.store,
        learning_rate=opt_cfg.learning_rate,
        weight_decay=opt_cfg.weight_decay,
        grad_clip_norm=opt_cfg.grad_clip_norm,
    )
    shuffle_rng = np.random.default_rng(opt_cfg.seed + 1)
    dropout_rng = np.random.default_rng(opt_cfg.seed + 2)

    history: list[dict] = []
    best_f1 = -1.0
    best_params = model.store.state_dict()
    best_epoch = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, opt_cfg.epochs + 1):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(train_sentences))
            epoch_loss_sum = 0.0
            epoch_cells = 0
            for batch in _batches(order, opt_cfg.batch_size):
                model.store.zero_grad()
                total = None
                cells = 0
                for idx in batch:
                    loss, count = model.sentence_loss(
                        train_sentences[int(idx)],
                        training=True,
                        dropout_rng=dropout_rng,
                        reduction="sum",
                    )
                    total = loss if total is None else total + loss
                    cells += count
                batch_loss = total * (1.0 / max(cells, 1))
                value = batch_loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(
                        f"non-finite loss {value} at epoch {epoch}"
                    )
                batch_loss.backward()
                optimizer.step()
                epoch_loss_sum += value * cells
                epoch_cells += cells

            train_loss = epoch_loss_sum / max(epoch_cells, 1)
            record = {"epoch": epoch, "train_loss": train_loss}
            dev_f1 = None
            if dev_sentences is not None:
                report = evaluate_model(model, dev_sentences)
                record.update(
                    dev_p=report.precision, dev_r=report.recall, dev_f1=report.f1
                )
                dev_f1 = report.f1
                if report.f1 > best_f1:
                    best_f1 = report.f1
                    best_params = model.store.state_dict()
                    best_epoch = epoch
            else:
                best_params = model.store.state_dict()
                best_epoch = epoch
            record["seconds"] = round(time.perf_counter() - t0, 3)
            history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if progress:
                print(json.dumps(record))
            if stop_at_f1 is not None and dev_f1 is not None and dev_f1 >= stop_at_f1:
                break
    except FloatingPointError as exc:
        raise DivergenceError(str(exc)) from None
    finally:
        if log_fh:
            log_fh.close()

    return Checkpoint(
        config=config,
        char_vocab=char_vocab,
        tag_vocab=tag_vocab,
        params=best_params,
        optimizer_state=optimizer.state_dict(),
        epoch=best_epoch,
        history=history,
    )
