"""Training loop, per-epoch metrics and distribution trajectories."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from partequiv.autodiff import Adam, ParamGroup, cosine_warmup_lr, no_grad
from partequiv.autodiff import functional as F
from partequiv.errors import get_error_message
from partequiv.models import PartialGCNN, build_network
from partequiv.services.checkpoint_service import CheckpointService, check_compatible, read_checkpoint
from partequiv.services.config_service import RunConfig
from partequiv.services.dataset_service import DatasetService, LabeledImageSet
from partequiv.utils.error_handling import TrainingError, log_error_with_context, monitor_performance

logger = logging.getLogger(__name__)

METRICS_HEADER = ('epoch', 'split', 'loss', 'accuracy', 'lr')
DISTRIBUTION_HEADER = ('epoch', 'layer', 'param', 'value')
METRICS_FILE = 'metrics.csv'
DISTRIBUTION_FILE = 'distributions.csv'
CHECKPOINT_FILE = 'checkpoint.bin'


def _fmt(value: float) -> str:
    return f"{value:.8g}"


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float
    lr: float
    distributions: Dict[str, Dict[str, float]] = field(default_factory=dict)


@dataclass
class RunRecord:
    """What a run produced: one record per epoch and the files it wrote."""

    out_dir: Path
    epochs: List[EpochRecord] = field(default_factory=list)
    checkpoint: Optional[Path] = None

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / METRICS_FILE

    @property
    def distributions_path(self) -> Path:
        return self.out_dir / DISTRIBUTION_FILE

    @property
    def final_test_accuracy(self) -> Optional[float]:
        return self.epochs[-1].test_accuracy if self.epochs else None


def run_rngs(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent streams for weight init, dataset construction and training draws."""
    return (np.random.default_rng(seed),
            np.random.default_rng([seed, 1]),
            np.random.default_rng([seed, 2]))


def build_optimizer(model: PartialGCNN, cfg: RunConfig) -> Adam:
    """Two groups: network weights at lr_main, distribution parameters at lr_dist."""
    groups = [ParamGroup('main', cfg.lr_main, model.main_parameters())]
    dist_params = model.distribution_parameters()
    if dist_params:
        groups.append(ParamGroup('dist', cfg.lr_dist, dist_params))
    return Adam(groups, weight_decay=cfg.weight_decay)


def first_non_finite(model: PartialGCNN) -> str:
    """Name of the first recorded activation, then parameter, holding a NaN or inf."""
    for name, values in model.activations:
        if not np.all(np.isfinite(values.data)):
            return f"activation {name}"
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.data)):
            return f"parameter {name}"
    return 'loss'


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels)) if len(labels) else 0.0


def evaluate(model: PartialGCNN, data: LabeledImageSet, batch_size: int) -> Tuple[float, float]:
    """Mean loss and accuracy with deterministic (eval-mode) sampling."""
    model.eval()
    total_loss, correct = 0.0, 0
    with no_grad():
        for images, labels in data.batches(batch_size):
            logits = model(images)
            total_loss += float(F.softmax_cross_entropy(logits, labels).item()) * len(labels)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
    n = max(len(data), 1)
    return total_loss / n, correct / n


class _CsvLog:
    def __init__(self, path: Path, header, append: bool):
        self.path = path
        fresh = not (append and path.exists())
        self.handle = open(path, 'w' if fresh else 'a', newline='')
        self.writer = csv.writer(self.handle, lineterminator='\n')
        if fresh:
            self.writer.writerow(header)

    def write(self, row):
        self.writer.writerow(row)
        self.handle.flush()

    def close(self):
        self.handle.close()


class TrainingService:
    """Runs the training recipe for a RunConfig."""

    @staticmethod
    @monitor_performance('epoch', threshold_ms=600000)
    def train_epoch(model: PartialGCNN, optimizer: Adam, data: LabeledImageSet, cfg: RunConfig,
                    rng: np.random.Generator, epoch: int, step: int, warmup_steps: int, total_steps: int
                    ) -> Tuple[float, float, float, int]:
        """
        One pass over the training set.

        Returns:
            (mean loss, accuracy, last main learning rate, updated step counter)

        Raises:
            TrainingError: On a non-finite loss, naming the first non-finite tensor
        """
        model.train()
        model.record_activations = True
        total_loss, correct, lr = 0.0, 0, 0.0
        try:
            for images, labels in data.batches(cfg.batch_size, rng):
                step += 1
                optimizer.zero_grad()
                logits = model(images, rng)
                loss = F.softmax_cross_entropy(logits, labels)
                value = float(loss.item())
                if not math.isfinite(value):
                    culprit = first_non_finite(model)
                    error = TrainingError(get_error_message('NON_FINITE_LOSS', epoch=epoch, step=step, tensor=culprit))
                    log_error_with_context(error, {'epoch': epoch, 'step': step}, 'TrainingService.train_epoch')
                    raise error
                loss.backward()
                lr = optimizer.step(cosine_warmup_lr(step, 1.0, warmup_steps, total_steps))['main']
                model.clamp_distributions()
                total_loss += value * len(labels)
                correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
                logger.debug(f"epoch {epoch} step {step}: loss={value:.4f} lr={lr:.3g}")
        finally:
            model.record_activations = False
            model.activations = []
        n = max(len(data), 1)
        return total_loss / n, correct / n, lr, step

    @staticmethod
    def distribution_rows(model: PartialGCNN, epoch: int) -> List[Tuple]:
        rows = []
        counts = dict(model.effective_sample_counts())
        for name, dist in model.distributions():
            for param, value in dist.summary().items():
                rows.append((epoch, name, param, _fmt(value)))
            rows.append((epoch, name, 'n_eff', counts[name]))
        return rows

    @staticmethod
    def run_training(cfg: RunConfig, resume=None, max_epochs: Optional[int] = None) -> RunRecord:
        """
        Train build_network(cfg) and write metrics, distribution CSVs and checkpoints.

        Args:
            cfg: Run configuration
            resume: Checkpoint to continue from; its architecture must match cfg
            max_epochs: Stop after this many epochs in this call (schedule still spans cfg.epochs)

        Raises:
            DatasetError: If the dataset cannot be resolved
            TrainingError: On a non-finite loss
            CheckpointError: If the resume checkpoint does not match cfg
        """
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        init_rng, data_rng, train_rng = run_rngs(cfg.seed)

        train, test = DatasetService.load_task(cfg.task, cfg.data_dir, data_rng, cfg.train_size, cfg.test_size,
                                               cfg.allow_fallback)
        logger.info(f"Task {cfg.task}: {len(train)} train / {len(test)} test images")

        model = build_network(cfg.network_config(), init_rng)
        model.rng = train_rng
        optimizer = build_optimizer(model, cfg)
        start_epoch = 1
        if resume is not None:
            data = read_checkpoint(resume)
            check_compatible(data.config, cfg)
            CheckpointService.restore_model(model, data)
            CheckpointService.restore_optimizer(optimizer, data)
            CheckpointService.restore_rng(train_rng, data)
            start_epoch = data.epoch + 1
            logger.info(f"Resuming from {resume} at epoch {start_epoch}")

        steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
        total_steps = cfg.epochs * steps_per_epoch
        warmup_steps = cfg.warmup_epochs * steps_per_epoch
        step = (start_epoch - 1) * steps_per_epoch
        last_epoch = cfg.epochs if max_epochs is None else min(cfg.epochs, start_epoch - 1 + max_epochs)

        record = RunRecord(out_dir)
        metrics = _CsvLog(out_dir / METRICS_FILE, METRICS_HEADER, append=resume is not None)
        dists = _CsvLog(out_dir / DISTRIBUTION_FILE, DISTRIBUTION_HEADER, append=resume is not None)
        try:
            for epoch in range(start_epoch, last_epoch + 1):
                train_loss, train_acc, lr, step = TrainingService.train_epoch(
                    model, optimizer, train, cfg, train_rng, epoch, step, warmup_steps, total_steps)
                test_loss, test_acc = evaluate(model, test, cfg.batch_size)

                metrics.write((epoch, 'train', _fmt(train_loss), _fmt(train_acc), _fmt(lr)))
                metrics.write((epoch, 'test', _fmt(test_loss), _fmt(test_acc), _fmt(lr)))
                for row in TrainingService.distribution_rows(model, epoch):
                    dists.write(row)

                summaries = {name: dist.summary() for name, dist in model.distributions()}
                record.epochs.append(EpochRecord(epoch, train_loss, train_acc, test_loss, test_acc, lr, summaries))
                logger.info(f"Epoch {epoch}/{cfg.epochs}: train loss {train_loss:.4f} acc {train_acc:.3f}, "
                            f"test loss {test_loss:.4f} acc {test_acc:.3f}")
                for name, dist in model.distributions():
                    logger.info(f"  {name}: {dist.report()}")

                record.checkpoint = out_dir / CHECKPOINT_FILE
                CheckpointService.save(record.checkpoint, model, cfg, optimizer, epoch, train_rng)
        finally:
            metrics.close()
            dists.close()
        return record


def run_training(cfg: RunConfig, resume=None, max_epochs: Optional[int] = None) -> RunRecord:
    return TrainingService.run_training(cfg, resume, max_epochs)
