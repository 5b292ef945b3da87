"""The three downstream architectures and their shared training loop.

* single_stream: time-pooled embedding -> Dense(100)+SiLU -> heads
* fusion:        per-stream Dense(100)+SiLU -> concat -> Dense(100)+SiLU -> heads
* cnn_baseline:  Conv1d(100, k=3) -> Conv1d(100, k=5) -> global average pool
                 -> Dense(100)+SiLU -> heads, dropout 0.3 after each conv
                 activation and 0.4 after the dense layer

Heads are Dense(2)+softmax per symptom and a linear Dense(1) for the
normalized severity score. Layer parameters are seeded per layer *name*,
so a single-task model and the matching multi-task model start from
identical shared weights under the same seed.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import metrics
from .dataset import N_SYMPTOMS
from .features import FeatureSequence
from .neuralcore import (
    Conv1d,
    Dense,
    Dropout,
    GlobalAvgPool1d,
    OptimizerConfig,
    ParamTensor,
    ShapeError,
    SiLU,
    adam_step_all,
    mse_grad,
    mse_loss,
    nll_loss,
    softmax2,
    softmax_nll_grad,
)
from .seeding import derive_seed

MODEL_KINDS = ("single_stream", "fusion", "cnn_baseline")
HIDDEN_WIDTH = 100
_SYMPTOM_MODE = re.compile(r"^sym([1-9]|10)$")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: kind, input streams, and output heads."""

    kind: str
    streams: tuple[tuple[str, int], ...]
    head_mode: str = "multi_task"
    hidden_width: int = HIDDEN_WIDTH
    conv_dropout: float = 0.3
    dense_dropout: float = 0.4

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.streams:
            raise ValueError("model needs at least one input stream")
        if self.kind == "fusion" and len(self.streams) < 2:
            raise ValueError("fusion model requires at least two streams")
        if self.kind != "fusion" and len(self.streams) != 1:
            raise ValueError(f"{self.kind} model takes exactly one stream")
        for name, dim in self.streams:
            if dim < 1:
                raise ValueError(f"stream {name!r} has non-positive dim {dim}")
        if self.hidden_width != HIDDEN_WIDTH:
            raise ValueError(f"hidden width is fixed at {HIDDEN_WIDTH}, got {self.hidden_width}")
        if not (self.head_mode in ("multi_task", "single_task", "severity")
                or _SYMPTOM_MODE.match(self.head_mode)):
            raise ValueError(f"unknown head_mode {self.head_mode!r}")
        for rate in (self.conv_dropout, self.dense_dropout):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate {rate} outside [0, 1)")

    @property
    def symptom_heads(self) -> tuple[int, ...]:
        """0-based symptom indices this model carries heads for."""
        if self.head_mode in ("multi_task", "single_task"):
            return tuple(range(N_SYMPTOMS))
        match = _SYMPTOM_MODE.match(self.head_mode)
        if match:
            return (int(match.group(1)) - 1,)
        return ()

    @property
    def has_severity_head(self) -> bool:
        return self.head_mode in ("multi_task", "single_task", "severity")

    @property
    def single_task_modes(self) -> tuple[str, ...]:
        """The one-head modes a single_task spec expands into."""
        return tuple(f"sym{i + 1}" for i in range(N_SYMPTOMS)) + ("severity",)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    severity_scale: float = 60.0
    regression_weight: float = 1.0
    active_heads: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.severity_scale <= 0:
            raise ValueError(f"severity_scale must be positive, got {self.severity_scale}")
        if self.regression_weight < 0:
            raise ValueError(f"regression_weight must be >= 0, got {self.regression_weight}")


@dataclass
class ModelOutput:
    """Per-head outputs for one batch: 2-way probabilities and raw severity."""

    class_probs: dict[int, np.ndarray]
    severity: np.ndarray | None


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_macro_f: float | None = None
    val_rmse: float | None = None


def average_pool_time(seq: FeatureSequence) -> np.ndarray:
    """Mean feature vector over the temporal axis."""
    if seq.frames < 1:
        raise ValueError("cannot pool a sequence with no frames")
    return seq.values.mean(axis=0)


class SymptomModel:
    """One trained network: trunk layers plus classification/regression heads."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = dtype
        self.seed = seed
        self._dropout_rng = np.random.default_rng(derive_seed(seed, "dropout"))

        def rng_for(name: str):
            return np.random.default_rng(derive_seed(seed, "init", name))

        width = spec.hidden_width
        self._trunk: list = []
        if spec.kind == "single_stream":
            dim = spec.streams[0][1]
            self._trunk = [Dense("trunk", dim, width, rng_for("trunk"), dtype), SiLU()]
        elif spec.kind == "fusion":
            self._projections = [
                (Dense(f"proj.{name}", dim, width, rng_for(f"proj.{name}"), dtype), SiLU())
                for name, dim in spec.streams
            ]
            merged = width * len(spec.streams)
            self._trunk = [Dense("merge", merged, width, rng_for("merge"), dtype), SiLU()]
        else:
            channels = spec.streams[0][1]
            self._conv = [
                Conv1d("conv1", channels, width, 3, rng_for("conv1"), dtype),
                SiLU(),
                Dropout(spec.conv_dropout, self._dropout_rng),
                Conv1d("conv2", width, width, 5, rng_for("conv2"), dtype),
                SiLU(),
                Dropout(spec.conv_dropout, self._dropout_rng),
            ]
            self._pool = GlobalAvgPool1d()
            self._trunk = [
                Dense("trunk", width, width, rng_for("trunk"), dtype),
                SiLU(),
                Dropout(spec.dense_dropout, self._dropout_rng),
            ]

        self.class_heads: dict[int, Dense] = {
            i: Dense(f"head.sym{i + 1}", width, 2, rng_for(f"head.sym{i + 1}"), dtype)
            for i in spec.symptom_heads
        }
        self.severity_head: Dense | None = None
        if spec.has_severity_head:
            self.severity_head = Dense("head.reg", width, 1, rng_for("head.reg"), dtype)

    def params(self) -> list[ParamTensor]:
        out: list[ParamTensor] = []
        if self.spec.kind == "fusion":
            for dense, _ in self._projections:
                out.extend(dense.params())
        if self.spec.kind == "cnn_baseline":
            for layer in self._conv:
                out.extend(layer.params())
        for layer in self._trunk:
            out.extend(layer.params())
        for i in sorted(self.class_heads):
            out.extend(self.class_heads[i].params())
        if self.severity_head is not None:
            out.extend(self.severity_head.params())
        return out

    def zero_grad(self) -> None:
        for param in self.params():
            param.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def _forward_trunk(self, inputs: Sequence[np.ndarray], training: bool) -> np.ndarray:
        spec = self.spec
        if spec.kind == "fusion":
            if len(inputs) != len(spec.streams):
                raise ShapeError(
                    f"fusion model expects {len(spec.streams)} inputs, got {len(inputs)}"
                )
            parts = []
            for (dense, act), x in zip(self._projections, inputs):
                parts.append(act.forward(dense.forward(np.asarray(x, dtype=self.dtype))))
            h = np.concatenate(parts, axis=1)
        elif spec.kind == "single_stream":
            if len(inputs) != 1:
                raise ShapeError(f"single_stream model expects 1 input, got {len(inputs)}")
            h = np.asarray(inputs[0], dtype=self.dtype)
        else:
            if len(inputs) != 1:
                raise ShapeError(f"cnn_baseline model expects 1 input, got {len(inputs)}")
            h = np.asarray(inputs[0], dtype=self.dtype)
            for layer in self._conv:
                h = layer.forward(h, training) if isinstance(layer, Dropout) else layer.forward(h)
            h = self._pool.forward(h)
        for layer in self._trunk:
            h = layer.forward(h, training) if isinstance(layer, Dropout) else layer.forward(h)
        return h

    def forward(self, inputs: Sequence[np.ndarray], training: bool) -> ModelOutput:
        h = self._forward_trunk(inputs, training)
        self._head_input = h
        class_probs = {
            i: softmax2(head.forward(h)) for i, head in sorted(self.class_heads.items())
        }
        severity = None
        if self.severity_head is not None:
            severity = self.severity_head.forward(h)[:, 0]
        return ModelOutput(class_probs=class_probs, severity=severity)

    def backward(
        self,
        class_dlogits: Mapping[int, np.ndarray],
        severity_grad: np.ndarray | None = None,
    ) -> None:
        gh = np.zeros_like(self._head_input)
        for i, dlogits in class_dlogits.items():
            gh += self.class_heads[i].backward(np.asarray(dlogits, dtype=self.dtype))
        if severity_grad is not None:
            if self.severity_head is None:
                raise ShapeError("severity gradient given but model has no severity head")
            gh += self.severity_head.backward(
                np.asarray(severity_grad, dtype=self.dtype)[:, None]
            )
        for layer in reversed(self._trunk):
            gh = layer.backward(gh)
        if self.spec.kind == "fusion":
            width = self.spec.hidden_width
            for j, (dense, act) in enumerate(self._projections):
                g = gh[:, j * width:(j + 1) * width]
                dense.backward(act.backward(g))
        elif self.spec.kind == "cnn_baseline":
            gh = self._pool.backward(gh)
            for layer in reversed(self._conv):
                gh = layer.backward(gh)


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> SymptomModel:
    if spec.head_mode == "single_task":
        raise ValueError(
            "head_mode 'single_task' expands to one model per head; build each sub-mode instead"
        )
    return SymptomModel(spec, seed=seed, dtype=dtype)


def multitask_loss_and_grads(
    outputs: ModelOutput,
    present: np.ndarray | None,
    severity: np.ndarray | None,
    regression_weight: float = 1.0,
    active_heads: Sequence[int] | None = None,
    want_grads: bool = True,
) -> tuple[float, dict[int, np.ndarray], np.ndarray | None]:
    """Combined loss and the per-head gradients needed for backward.

    Loss = mean over active classification heads of NLL, plus
    regression_weight * MSE on the normalized severity when a severity
    head is present. Single-head regression models use plain MSE.
    """
    head_ids = sorted(outputs.class_probs)
    if active_heads is not None:
        missing = [i for i in active_heads if i not in outputs.class_probs]
        if missing:
            raise ValueError(f"active_heads {missing} not among model heads {head_ids}")
        head_ids = sorted(active_heads)

    class_terms: list[float] = []
    class_dlogits: dict[int, np.ndarray] = {}
    for i in head_ids:
        probs = outputs.class_probs[i]
        targets = np.asarray(present)[:, i]
        class_terms.append(nll_loss(probs, targets))
        if want_grads:
            class_dlogits[i] = softmax_nll_grad(probs, targets) / len(head_ids)

    severity_grad = None
    loss = float(np.mean(class_terms)) if class_terms else 0.0
    if outputs.severity is not None:
        if severity is None:
            raise ValueError("model has a severity head but no severity labels were given")
        severity = np.asarray(severity, dtype=outputs.severity.dtype)
        term = mse_loss(outputs.severity, severity)
        if class_terms:
            loss = loss + regression_weight * term
        else:
            loss = term
        if want_grads:
            severity_grad = mse_grad(outputs.severity, severity)
            if class_terms:
                severity_grad = regression_weight * severity_grad
    return loss, class_dlogits, severity_grad


def multitask_loss(
    outputs: ModelOutput,
    present: np.ndarray | None,
    severity: np.ndarray | None,
    regression_weight: float = 1.0,
    active_heads: Sequence[int] | None = None,
) -> float:
    loss, _, _ = multitask_loss_and_grads(
        outputs, present, severity, regression_weight, active_heads, want_grads=False
    )
    return loss


@dataclass
class SegmentBatch:
    """Segment-level training examples for one model kind.

    ``inputs`` holds one array per stream: (n, dim) pooled vectors for
    head models, or a single (n, channels, time) array for the CNN.
    Labels are inherited from each segment's source recording.
    """

    inputs: list[np.ndarray]
    present: np.ndarray
    severity: np.ndarray
    recording_ids: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.recording_ids)

    def take(self, idx: np.ndarray) -> list[np.ndarray]:
        return [x[idx] for x in self.inputs]


def predict_segments(
    model: SymptomModel, data: SegmentBatch, batch_size: int = 512
) -> ModelOutput:
    """Run the model in inference mode over a whole segment set."""
    probs: dict[int, list[np.ndarray]] = {i: [] for i in model.class_heads}
    severity: list[np.ndarray] = []
    for start in range(0, data.n, batch_size):
        idx = np.arange(start, min(start + batch_size, data.n))
        out = model.forward(data.take(idx), training=False)
        for i, p in out.class_probs.items():
            probs[i].append(p)
        if out.severity is not None:
            severity.append(out.severity)
    return ModelOutput(
        class_probs={i: np.concatenate(chunks) for i, chunks in probs.items()},
        severity=np.concatenate(severity) if severity else None,
    )


def _validation_metrics(
    model: SymptomModel, data: SegmentBatch, severity_scale: float
) -> tuple[float | None, float | None]:
    out = predict_segments(model, data)
    preds = metrics.PredictionSet.from_segments(
        data.recording_ids, out.class_probs, out.severity, severity_scale=severity_scale
    )
    rec_index = {rec: i for i, rec in enumerate(data.recording_ids)}
    macro = None
    if preds.symptom_decisions:
        f_values = []
        for i, decisions in preds.symptom_decisions.items():
            labels = np.array(
                [data.present[rec_index[rec], i] for rec in preds.recording_ids]
            )
            f_values.append(metrics.f_scores(decisions, labels)[2])
        macro = float(np.mean(f_values))
    sev_rmse = None
    if preds.severity is not None:
        targets = np.array(
            [data.severity[rec_index[rec]] * severity_scale for rec in preds.recording_ids]
        )
        sev_rmse = metrics.rmse(preds.severity, targets)
    return macro, sev_rmse


def train(
    model: SymptomModel,
    train_data: SegmentBatch,
    val_data: SegmentBatch | None,
    cfg: TrainConfig,
) -> list[EpochLog]:
    """Seeded mini-batch training; returns the per-epoch log.

    Batches are reshuffled every epoch from one seeded generator, the
    last batch may be short, and parameters after the final epoch are
    kept as-is (no early stopping or best-epoch selection).
    """
    if train_data.n == 0:
        raise ValueError("training set is empty")
    if cfg.active_heads is not None:
        missing = [i for i in cfg.active_heads if i not in model.class_heads]
        if missing:
            raise ValueError(f"active_heads {missing} not among model heads")
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))
    logs: list[EpochLog] = []
    step = 0
    params = model.params()
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(train_data.n)
        batch_losses: list[float] = []
        for start in range(0, train_data.n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            outputs = model.forward(train_data.take(idx), training=True)
            loss, class_dlogits, severity_grad = multitask_loss_and_grads(
                outputs,
                train_data.present[idx],
                train_data.severity[idx],
                cfg.regression_weight,
                cfg.active_heads,
            )
            model.zero_grad()
            model.backward(class_dlogits, severity_grad)
            step += 1
            adam_step_all(params, cfg.optimizer, step)
            batch_losses.append(loss)
        val_macro, val_rmse = (None, None)
        if val_data is not None and val_data.n > 0:
            val_macro, val_rmse = _validation_metrics(model, val_data, cfg.severity_scale)
        logs.append(
            EpochLog(
                epoch=epoch,
                train_loss=float(np.mean(batch_losses)),
                val_macro_f=val_macro,
                val_rmse=val_rmse,
            )
        )
    return logs


def save_model_config(spec: ModelSpec, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser["model"] = {
        "kind": spec.kind,
        "head_mode": spec.head_mode,
        "hidden_width": str(spec.hidden_width),
        "conv_dropout": str(spec.conv_dropout),
        "dense_dropout": str(spec.dense_dropout),
    }
    for name, dim in spec.streams:
        parser[f"stream:{name}"] = {"dim": str(dim)}
    with Path(path).open("w", encoding="utf-8") as fh:
        parser.write(fh)


def load_model_config(path: str | Path) -> ModelSpec:
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise FileNotFoundError(path)
    if "model" not in parser:
        raise ValueError(f"{path}: missing [model] section")
    section = parser["model"]
    streams = []
    for name in parser.sections():
        if name.startswith("stream:"):
            streams.append((name.split(":", 1)[1], parser[name].getint("dim")))
    return ModelSpec(
        kind=section.get("kind", "single_stream"),
        streams=tuple(streams),
        head_mode=section.get("head_mode", "multi_task"),
        hidden_width=section.getint("hidden_width", HIDDEN_WIDTH),
        conv_dropout=section.getfloat("conv_dropout", 0.3),
        dense_dropout=section.getfloat("dense_dropout", 0.4),
    )


def save_train_config(cfg: TrainConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser["train"] = {
        "epochs": str(cfg.epochs),
        "batch_size": str(cfg.batch_size),
        "seed": str(cfg.seed),
        "severity_scale": str(cfg.severity_scale),
        "regression_weight": str(cfg.regression_weight),
    }
    if cfg.active_heads is not None:
        parser["train"]["active_heads"] = ",".join(str(i) for i in cfg.active_heads)
    opt = cfg.optimizer
    parser["optimizer"] = {
        "learning_rate": str(opt.learning_rate),
        "weight_decay": str(opt.weight_decay),
        "beta1": str(opt.beta1),
        "beta2": str(opt.beta2),
        "epsilon": str(opt.epsilon),
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        parser.write(fh)


def load_train_config(path: str | Path) -> TrainConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise FileNotFoundError(path)
    train_sec = parser["train"] if "train" in parser else {}
    opt_sec = parser["optimizer"] if "optimizer" in parser else {}
    optimizer = OptimizerConfig(
        learning_rate=float(opt_sec.get("learning_rate", 1e-3)),
        weight_decay=float(opt_sec.get("weight_decay", 1e-5)),
        beta1=float(opt_sec.get("beta1", 0.9)),
        beta2=float(opt_sec.get("beta2", 0.99)),
        epsilon=float(opt_sec.get("epsilon", 1e-8)),
    )
    active = None
    if "active_heads" in train_sec:
        active = tuple(int(tok) for tok in train_sec["active_heads"].split(",") if tok.strip())
    return TrainConfig(
        epochs=int(train_sec.get("epochs", 5)),
        batch_size=int(train_sec.get("batch_size", 32)),
        optimizer=optimizer,
        seed=int(train_sec.get("seed", 0)),
        severity_scale=float(train_sec.get("severity_scale", 60.0)),
        regression_weight=float(train_sec.get("regression_weight", 1.0)),
        active_heads=active,
    )


def single_task_variant(spec: ModelSpec, mode: str) -> ModelSpec:
    """Narrow a spec to one head (used when expanding single_task runs)."""
    return replace(spec, head_mode=mode)
