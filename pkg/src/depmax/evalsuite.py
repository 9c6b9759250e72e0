"""Linear probing, accuracy metrics, collapse diagnostics, ablation grids.

The probe trains a single linear layer with cross-entropy on frozen
encoder outputs; the encoder is exercised strictly in eval mode and a
parameter checksum guards against accidental mutation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ExperimentConfig, config_digest
from .data import Dataset, SyntheticSpec, make_synthetic
from .dcor import dcor_stat
from .descriptors import DescriptorOutput
from .errors import ConfigError, DataError
from .model import Model
from .seeds import PROBE, epoch_permutation, stream
from .tensor import Tensor
from .train import Adam, DescriptorCache, Trainer


@dataclass
class ProbeConfig:
    epochs: int = 20
    lr: float = 1e-4
    batch_size: int = 256
    seed: int = 0


@dataclass
class EmbeddingStats:
    per_dim_std: np.ndarray
    std_min: float
    std_mean: float
    dcor: dict[str, float] = field(default_factory=dict)


def embed_dataset(model: Model, images: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Frozen eval-mode encoder outputs for a full image set."""
    parts = [
        model.encode(images[i : i + chunk], mode="eval").data
        for i in range(0, images.shape[0], chunk)
    ]
    return np.concatenate(parts, axis=0)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction with the true label among the k largest logits.

    Ties resolve to the lowest class index: classes are ranked by
    (-logit, class index), so among equal logits the smaller index wins.
    """
    n, c = logits.shape
    k = min(k, c)
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    hits = (order == labels[:, None]).any(axis=1)
    return float(hits.mean())


def _cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    # logsumexp with a detached shift: exact value and gradient
    shift = logits.data.max(axis=1, keepdims=True)
    centered = T.sub(logits, Tensor(shift))
    lse = T.add(T.log(T.sum_(T.exp(centered), axis=1)), Tensor(shift[:, 0]))
    truth = T.sum_(T.mul(logits, Tensor(onehot.astype(logits.data.dtype))), axis=1)
    return T.mean_(T.sub(lse, truth))


def train_probe_on_features(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    cfg: ProbeConfig,
) -> dict:
    """Single linear layer + cross-entropy on fixed feature matrices.

    Features are standardized per dimension with train-set statistics (a
    fixed affine preprocessing; only the linear layer is learned).
    """
    classes = int(max(train_y.max(), test_y.max())) + 1
    if train_y.min() < 0:
        raise DataError("labels must be zero-based non-negative")
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0) + 1e-6
    train_x = ((train_x - mu) / sd).astype(train_x.dtype)
    test_x = ((test_x - mu) / sd).astype(test_x.dtype)
    d = train_x.shape[1]
    rng = stream(cfg.seed, PROBE)
    w = Tensor(
        (rng.uniform(-1, 1, size=(d, classes)) * np.sqrt(6.0 / d)).astype(train_x.dtype),
        requires_grad=True,
    )
    b = Tensor(np.zeros(classes, dtype=train_x.dtype), requires_grad=True)
    opt = Adam({"w": w, "b": b}, lr=cfg.lr)
    onehot = np.eye(classes, dtype=train_x.dtype)[train_y]
    n = train_x.shape[0]
    for epoch in range(cfg.epochs):
        order = epoch_permutation(cfg.seed, epoch, n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue
            logits = T.add(T.matmul(Tensor(train_x[idx]), w), b)
            loss = _cross_entropy(logits, onehot[idx])
            loss.backward()
            opt.step()
            opt.zero_grad()
    test_logits = test_x @ w.data + b.data
    train_logits = train_x @ w.data + b.data
    return {
        "top1": topk_accuracy(test_logits, test_y, 1),
        "top5": topk_accuracy(test_logits, test_y, 5),
        "train_top1": topk_accuracy(train_logits, train_y, 1),
        "classes": classes,
    }


def linear_probe(model: Model, train_set: Dataset, test_set: Dataset, cfg: ProbeConfig) -> dict:
    """Probe frozen encoder representations; never mutates the encoder."""
    if train_set.labels is None or test_set.labels is None:
        raise DataError("probe needs labeled train and test sets")
    before = model.checksum()
    train_x = embed_dataset(model, train_set.images)
    test_x = embed_dataset(model, test_set.images)
    result = train_probe_on_features(train_x, train_set.labels, test_x, test_set.labels, cfg)
    after = model.checksum()
    if before != after:
        raise RuntimeError("probe mutated encoder state (checksum changed)")
    return result


def embedding_stats(embeddings: np.ndarray, descriptors: list[DescriptorOutput]) -> EmbeddingStats:
    std = embeddings.astype(np.float64).std(axis=0)
    dcors = {d.name: max(dcor_stat(embeddings, d.values).dcor, 0.0) for d in descriptors}
    return EmbeddingStats(
        per_dim_std=std,
        std_min=float(std.min()),
        std_mean=float(std.mean()),
        dcor=dcors,
    )


# -- ablation grids --------------------------------------------------------------


LOSS_GRID = [
    ("invariance", (1.0, 1.0, 0.0, 0.0)),
    ("view_dcor", (0.0, 0.0, 1.0, 0.0)),
    ("desc_dcor", (0.0, 0.0, 0.0, 1.0)),
    ("invariance+view_dcor", (1.0, 1.0, 1.0, 0.0)),
    ("invariance+desc_dcor", (1.0, 1.0, 0.0, 1.0)),
    ("view_dcor+desc_dcor", (0.0, 0.0, 1.0, 1.0)),
    ("all_three", (1.0, 1.0, 1.0, 1.0)),
]

AUGMENT_GRID = [
    ("crop", ("crop",)),
    ("crop+flip", ("crop", "flip")),
    ("crop+flip+color", ("crop", "flip", "color")),
    ("crop+flip+color+gray", ("crop", "flip", "color", "gray")),
    ("crop+flip+color+gray+blur", ("crop", "flip", "color", "gray", "blur")),
]

PROJECTOR_GRID = [
    ("256-256-256", [256, 256, 256]),
    ("128-128-128", [128, 128, 128]),
    ("256-256", [256, 256]),
    ("256", [256]),
    ("without projector", []),
]


def _loss_row_config(cfg: ExperimentConfig, flags) -> ExperimentConfig:
    mse_w, var_w, view_w, desc_w = flags
    out = replace(
        cfg,
        loss=replace(cfg.loss, mse_weight=mse_w, var_weight=var_w, view_weight=view_w),
        descriptors=[replace(d, beta=d.beta * desc_w) for d in cfg.descriptors],
    )
    return out


def _augment_row_config(cfg: ExperimentConfig, enabled) -> ExperimentConfig:
    a = replace(cfg.augment)
    if "flip" not in enabled:
        a.flip_p = 0.0
    if "color" not in enabled:
        a.jitter_p = 0.0
    if "gray" not in enabled:
        a.grayscale_p = 0.0
    if "blur" not in enabled:
        a.blur_p = 0.0
    return replace(cfg, augment=a)


def _projector_row_config(cfg: ExperimentConfig, widths) -> ExperimentConfig:
    if widths:
        proj = replace(cfg.projector, widths=list(widths), enabled=True)
    else:
        proj = replace(cfg.projector, enabled=False)
    return replace(cfg, projector=proj)


def _descriptor_subsets(cfg: ExperimentConfig):
    kinds = [d.kind for d in cfg.descriptors]
    n = len(kinds)
    for mask in range(1, 2**n):
        chosen = [cfg.descriptors[i] for i in range(n) if mask >> i & 1]
        label = "+".join(d.kind for d in chosen)
        yield label, replace(cfg, descriptors=[replace(d) for d in chosen])


def run_cell(
    cfg: ExperimentConfig,
    train_set: Dataset,
    test_set: Dataset,
    probe: ProbeConfig,
    cache: DescriptorCache | None = None,
) -> dict:
    trainer = Trainer(cfg, train_set, descriptor_cache=cache)
    trainer.run()
    result = linear_probe(trainer.model, train_set, test_set, probe)
    return {"top1": result["top1"], "top5": result["top5"]}


def ablation_report(
    cfg: ExperimentConfig,
    out_dir,
    grids: tuple[str, ...] = ("loss", "descriptors", "projector", "augment"),
) -> dict:
    """Run the configured grids at desk scale; writes report.json and report.md.

    Report-only: relative orderings are informational, nothing is
    asserted here.
    """
    for name in grids:
        if name not in ("loss", "descriptors", "projector", "augment"):
            raise ConfigError(f"unknown ablation grid {name!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.data.source != "synthetic":
        raise ConfigError("ablation report runs on the synthetic source")
    train_set, test_set = make_synthetic(
        SyntheticSpec(
            classes=cfg.data.classes,
            image_size=cfg.data.image_size,
            train_per_class=cfg.data.train_per_class,
            test_per_class=cfg.data.test_per_class,
            frequency=cfg.data.frequency,
            phase_jitter=cfg.data.phase_jitter,
            noise=cfg.data.noise,
            seed=cfg.train.seed,
        )
    )
    probe = ProbeConfig(
        epochs=cfg.eval.probe_epochs,
        lr=cfg.eval.probe_lr,
        batch_size=cfg.eval.probe_batch,
        seed=cfg.train.seed,
    )
    # descriptor rows share one cache (pure functions of the same images)
    base_cache = DescriptorCache(train_set.images, cfg.descriptor_specs())
    base_by_kind = {d.kind: (i, d) for i, d in enumerate(cfg.descriptors)}
    report: dict = {"digest": config_digest(cfg), "grids": {}}

    def cache_for(row_cfg: ExperimentConfig):
        """Reuse base tables for entries whose parameters match (beta aside)."""
        sub = DescriptorCache.__new__(DescriptorCache)
        sub.tables = {}
        for si, d in enumerate(row_cfg.descriptors):
            if d.kind not in base_by_kind:
                return None
            bi, base_entry = base_by_kind[d.kind]
            if replace(d, beta=base_entry.beta) != base_entry:
                return None
            if bi in base_cache.tables:
                sub.tables[si] = base_cache.tables[bi]
        return sub

    if "loss" in grids:
        rows = []
        for label, flags in LOSS_GRID:
            row_cfg = _loss_row_config(cfg, flags)
            rows.append({"row": label, **run_cell(row_cfg, train_set, test_set, probe, cache_for(row_cfg))})
        report["grids"]["loss"] = rows
    if "descriptors" in grids:
        rows = []
        for label, row_cfg in _descriptor_subsets(cfg):
            rows.append({"row": label, **run_cell(row_cfg, train_set, test_set, probe, cache_for(row_cfg))})
        report["grids"]["descriptors"] = rows
    if "projector" in grids:
        rows = []
        for label, widths in PROJECTOR_GRID:
            row_cfg = _projector_row_config(cfg, widths)
            rows.append({"row": label, **run_cell(row_cfg, train_set, test_set, probe, cache_for(row_cfg))})
        report["grids"]["projector"] = rows
    if "augment" in grids:
        rows = []
        for label, enabled in AUGMENT_GRID:
            row_cfg = _augment_row_config(cfg, enabled)
            rows.append({"row": label, **run_cell(row_cfg, train_set, test_set, probe, cache_for(row_cfg))})
        report["grids"]["augment"] = rows

    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    (out_dir / "report.md").write_text(_render_markdown(report))
    return report


def _render_markdown(report: dict) -> str:
    lines = ["# Ablation report", "", f"Config digest: `{report['digest']}`", ""]
    for grid, rows in report["grids"].items():
        lines.append(f"## {grid}")
        lines.append("")
        lines.append("| row | top1 | top5 |")
        lines.append("| --- | ---: | ---: |")
        for row in rows:
            lines.append(f"| {row['row']} | {row['top1']:.4f} | {row['top5']:.4f} |")
        lines.append("")
    return "\n".join(lines)
