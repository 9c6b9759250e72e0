"""Pretraining and distillation loops.

One optimizer step consumes `accumulation` micro-batches; distance
correlation is computed per micro-batch (it does not decompose across
batches) and the accumulated gradient is exactly the sum of the
per-micro-batch gradients. Adam with a cosine learning-rate schedule,
no warmup, no weight decay. Metrics are one JSON object per optimizer
step; in deterministic mode the wall-time field is zeroed so same-seed
runs produce bitwise-identical logs.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import seeds
from .augment import augment, resize_bilinear
from .config import ExperimentConfig, config_digest, serialize_config
from .data import Dataset, batch_indices, read_matrix
from .descriptors import DescriptorOutput, DescriptorSpec, compute_descriptor
from .errors import ConfigError, DataError, NumericAbort
from .losses import LossBreakdown, total_loss
from .model import Model, save_checkpoint
from .tensor import Tensor, set_default_dtype


class Adam:
    """Standard Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericAbort(f"non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        out["t"] = np.array([self.t], dtype=np.int64)
        return out

    def load_state_arrays(self, table: dict[str, np.ndarray]) -> None:
        self.t = int(table["t"][0])
        for k in self.m:
            self.m[k] = table[f"m/{k}"].astype(self.m[k].dtype).reshape(self.m[k].shape).copy()
            self.v[k] = table[f"v/{k}"].astype(self.v[k].dtype).reshape(self.v[k].shape).copy()


def cosine_lr(step: int, total_steps: int, base: float) -> float:
    """base * 0.5 * (1 + cos(pi * step / total)); no warmup."""
    if total_steps <= 0:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TeacherSource:
    """Teacher embedding matrix aligned by dataset index (row i <- sample i)."""

    values: np.ndarray  # N x D_t

    @classmethod
    def from_file(cls, path) -> "TeacherSource":
        return cls(values=read_matrix(path))

    def rows(self, indices: np.ndarray) -> np.ndarray:
        if indices.max(initial=-1) >= self.values.shape[0]:
            missing = int(indices[indices >= self.values.shape[0]][0])
            raise DataError(f"no teacher row for dataset index {missing}")
        return self.values[indices]


class DescriptorCache:
    """Full-dataset matrices for the deterministic descriptor kinds.

    Descriptors are pure functions of the resized original image, so
    rows can be computed once and indexed per batch across epochs.
    """

    def __init__(self, images: np.ndarray, specs: list[DescriptorSpec], chunk: int = 256):
        self.tables: dict[int, np.ndarray] = {}
        for si, spec in enumerate(specs):
            if not spec.deterministic:
                continue
            parts = [
                compute_descriptor(images[i : i + chunk], spec)
                for i in range(0, images.shape[0], chunk)
            ]
            self.tables[si] = np.concatenate(parts, axis=0)

    def get(self, spec_index: int, indices: np.ndarray) -> Optional[np.ndarray]:
        table = self.tables.get(spec_index)
        return None if table is None else table[indices]


class Trainer:
    """Owns the model, optimizer and seed streams for one run."""

    def __init__(
        self,
        config: ExperimentConfig,
        dataset: Dataset,
        out_dir: Optional[Path] = None,
        teacher: Optional[TeacherSource] = None,
        deterministic: bool = False,
        descriptor_cache: Optional[DescriptorCache] = None,
    ):
        config.validate()
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.deterministic = deterministic
        t = config.train
        set_default_dtype(np.float64 if t.float_width == "fp64" else np.float32)
        self.model = Model(config.model_config(), config.projector_config(), seed=t.seed)
        self.optimizer = Adam(
            self.model.params, lr=t.lr, beta1=t.adam_beta1, beta2=t.adam_beta2, eps=t.adam_eps
        )
        self.augment_params = config.augment_params()
        self.specs = config.descriptor_specs()
        self.weights = config.loss_weights()
        self.mode = t.mode
        self.teacher = teacher
        if self.mode == "distill":
            if teacher is None and t.teacher_path:
                self.teacher = TeacherSource.from_file(t.teacher_path)
            if self.teacher is None:
                raise ConfigError("distill mode needs a teacher embedding matrix")
        size = config.data.image_size
        if dataset.images.shape[2] != size or dataset.images.shape[3] != size:
            raise ConfigError(
                f"dataset images are {dataset.images.shape[2]}x{dataset.images.shape[3]}, "
                f"config wants {size}x{size}; resize at load"
            )
        self._use_bank = self.mode == "ssl" or t.teacher_mix
        self.cache = descriptor_cache
        if self.cache is None and t.descriptor_cache and self._use_bank:
            self.cache = DescriptorCache(dataset.images, self.specs)
        self.step = 0  # optimizer steps taken
        self.micro = 0  # micro-batches since last step
        # accumulated gradient = sum of per-micro-batch gradients, exactly:
        # each micro-batch gradient is formed in full, then added once
        self._accum_grads: dict[str, np.ndarray] = {}
        self._pending: list[LossBreakdown] = []
        self._std_min: list[float] = []
        self._std_mean: list[float] = []
        self.metrics: list[dict] = []
        self._epoch = 0
        self._metrics_file = None
        self._t0 = time.perf_counter()

    # -- descriptor / teacher assembly ---------------------------------------

    def _bank_outputs(self, images: np.ndarray, indices: np.ndarray, epoch: int):
        outputs: list[DescriptorOutput] = []
        betas: list[float] = []
        seen: dict[str, int] = {}
        if self._use_bank:
            for si, spec in enumerate(self.specs):
                cached = self.cache.get(si, indices) if self.cache is not None else None
                if cached is not None:
                    values = cached
                elif spec.deterministic:
                    values = compute_descriptor(images, spec)
                else:
                    seed = self.config.train.seed

                    def factory(i, _idx=indices, _e=epoch, _s=seed):
                        return seeds.stream(_s, seeds.FEATURE_AUGMENT, _e, int(_idx[i]))

                    values = compute_descriptor(
                        images, spec, rng_factory=factory, augment_params=self.augment_params
                    )
                name = spec.name
                if name in seen:
                    seen[name] += 1
                    name = f"{name}_{seen[spec.name]}"
                else:
                    seen[name] = 1
                outputs.append(DescriptorOutput(values=values, kind=spec.kind, name=name))
                betas.append(spec.beta)
        if self.mode == "distill":
            rows = self.teacher.rows(indices)
            outputs.append(DescriptorOutput(values=rows, kind="teacher", name="teacher"))
            betas.append(1.0)
        return outputs, betas

    # -- steps ------------------------------------------------------------------

    def _views(self, images: np.ndarray, indices: np.ndarray, epoch: int):
        size = self.config.data.image_size
        x = images
        if x.shape[2] != size or x.shape[3] != size:
            x = np.stack([resize_bilinear(im, size, size) for im in images])
        seed = self.config.train.seed
        xt = np.stack(
            [
                augment(x[i], self.augment_params, seeds.stream(seed, seeds.AUGMENT, epoch, int(indices[i])))
                for i in range(x.shape[0])
            ]
        )
        return x, xt

    def train_step(self, images: np.ndarray, indices: np.ndarray, epoch: int) -> LossBreakdown:
        """One micro-batch: forward, backward, step every `accumulation`."""
        if images.shape[0] < 2:
            raise ConfigError(f"training batch must be >= 2, got {images.shape[0]}")
        x, xt = self._views(images, indices, epoch)
        z = self.model.forward(x, mode="train")
        zt = self.model.forward(xt, mode="train")
        outputs, betas = self._bank_outputs(x, indices, epoch)
        loss, breakdown = total_loss(z, zt, outputs, self.weights, betas)
        if not math.isfinite(breakdown.total):
            raise NumericAbort(f"non-finite loss at optimizer step {self.step}")
        loss.backward()
        for name, p in self.model.params.items():
            if p.grad is None:
                continue
            if name in self._accum_grads:
                self._accum_grads[name] += p.grad
            else:
                self._accum_grads[name] = p.grad
            p.grad = None
        std = z.data.astype(np.float64).std(axis=0)
        self._std_min.append(float(std.min()))
        self._std_mean.append(float(std.mean()))
        self._pending.append(breakdown)
        self.micro += 1
        if self.micro >= self.config.train.accumulation:
            self._apply_step()
        return breakdown

    def _apply_step(self) -> None:
        lr = cosine_lr(self.step, self.total_steps(), self.config.train.lr)
        for name, p in self.model.params.items():
            p.grad = self._accum_grads.get(name)
        self._accum_grads = {}
        self.optimizer.step(lr=lr)
        self.optimizer.zero_grad()
        self.step += 1
        self.micro = 0
        group = self._pending
        record = {
            "step": self.step,
            "epoch": self._epoch,
            "lr": lr,
            "loss_total": float(np.mean([b.total for b in group])),
            "loss_mse": float(np.mean([b.mse for b in group])),
            "loss_var_z": float(np.mean([b.var_z for b in group])),
            "loss_var_zt": float(np.mean([b.var_zt for b in group])),
            "loss_dcor_zz": float(np.mean([b.dcor_zz for b in group])),
            "loss_dcor_desc": {
                k: float(np.mean([b.dcor_desc[k] for b in group])) for k in group[0].dcor_desc
            },
            "emb_std_min": float(np.min(self._std_min)),
            "emb_std_mean": float(np.mean(self._std_mean)),
            "seconds": 0.0 if self.deterministic else time.perf_counter() - self._t0,
        }
        self._t0 = time.perf_counter()
        self.metrics.append(record)
        if self._metrics_file is not None:
            self._metrics_file.write(json.dumps(record) + "\n")
            self._metrics_file.flush()
        self._pending = []
        self._std_min = []
        self._std_mean = []

    def micro_batches_per_epoch(self) -> int:
        return len(self.dataset) // self.config.train.batch_size

    def total_steps(self) -> int:
        per_epoch = self.micro_batches_per_epoch() // self.config.train.accumulation
        return max(per_epoch * self.config.train.epochs, 1)

    # -- full run -----------------------------------------------------------------

    def run(self) -> list[dict]:
        t = self.config.train
        self._t0 = time.perf_counter()
        self._metrics_file = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            toml_text = serialize_config(self.config)
            (self.out_dir / "config.toml").write_text(toml_text)
            (self.out_dir / "digest.txt").write_text(config_digest(self.config) + "\n")
            self._metrics_file = open(self.out_dir / "metrics.jsonl", "w")
        try:
            for epoch in range(t.epochs):
                self._epoch = epoch
                for idx in batch_indices(len(self.dataset), t.batch_size, t.seed, epoch):
                    self.train_step(self.dataset.images[idx], idx, epoch)
                if self.out_dir is not None and t.checkpoint_every and (
                    (epoch + 1) % t.checkpoint_every == 0
                ):
                    self.save(self.out_dir / "last.mvck")
            if self.out_dir is not None:
                self.save(self.out_dir / "last.mvck")
        finally:
            if self._metrics_file is not None:
                self._metrics_file.close()
                self._metrics_file = None
        return self.metrics

    def save(self, path) -> None:
        save_checkpoint(
            self.model,
            path,
            optimizer_state=self.optimizer.state_arrays(),
            config_toml=serialize_config(self.config),
            config_digest=config_digest(self.config),
        )


def train(config: ExperimentConfig, dataset: Dataset, out_dir=None,
          teacher: Optional[TeacherSource] = None, deterministic: bool = False) -> Trainer:
    """Run the configured number of epochs; returns the finished Trainer."""
    trainer = Trainer(config, dataset, out_dir=out_dir, teacher=teacher, deterministic=deterministic)
    trainer.run()
    return trainer
