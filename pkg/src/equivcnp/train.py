"""Training and evaluation loops for both pathways.

Every task, mask and Monte Carlo draw comes from a generator derived from one
integer seed, so a (config, seed) pair reproduces the same parameters bit for
bit.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, no_grad
from .data import (TaskConfig1D, digit_dataset, random_test_transform, sample_image_task,
                   sample_task_1d, transform_image)
from .errors import NumericError
from .gp import oracle_log_likelihood
from .model import (EquivCNP, ImageEquivCNP, image_log_likelihood, log_likelihood, nll_loss,
                    predict)


@dataclass
class MetricsRecord:
    epoch: int
    mean_ll: float
    std_ll: float
    wall_seconds: float
    seed: int

    CSV_HEADER = "epoch,mean_ll,std_ll,wall_seconds,seed"

    def csv_row(self) -> str:
        return f"{self.epoch},{self.mean_ll!r},{self.std_ll!r},{self.wall_seconds:.3f},{self.seed}"


def task_rngs(seed: int, stream: int, n: int):
    """``n`` independent generators for one named stream of one seed."""
    children = np.random.SeedSequence([seed, stream]).spawn(n)
    return [np.random.default_rng(c) for c in children]


TRAIN_STREAM, EVAL_STREAM, EXTRAP_STREAM, CALIB_STREAM = 1, 2, 3, 4


def n_workers() -> int:
    """Worker pool size: ``EQUIVCNP_THREADS`` if set, else 1."""
    raw = os.environ.get("EQUIVCNP_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"EQUIVCNP_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("EQUIVCNP_THREADS must be >= 1")
    return n


def parallel_map(fn, items):
    """``[fn(x) for x in items]`` over the worker pool; order is preserved."""
    items = list(items)
    n = min(n_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _check_finite(value, what):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what}: {value}")


def train_regression(model: EquivCNP, task_cfg: TaskConfig1D, epochs: int,
                     batches_per_epoch: int, batch_size: int, lr: float = 1e-3,
                     seed: int = 0, on_epoch=None) -> list[MetricsRecord]:
    """Adam on the mean target NLL with fresh GP tasks in every batch.

    ``on_epoch(record)`` runs after each epoch (checkpointing, logging).
    Training metrics are the per-task log-likelihoods seen during the epoch.
    """
    if model.radius is None:
        calib = [sample_task_1d(task_cfg, r) for r in task_rngs(seed, CALIB_STREAM, 16)]
        model.calibrate(calib)
    opt = Adam(model.parameters(), lr=lr)
    history = []
    start = time.perf_counter()
    for epoch in range(epochs):
        lls = []
        for b in range(batches_per_epoch):
            ss = np.random.SeedSequence([seed, TRAIN_STREAM, epoch, b])
            rngs = [np.random.default_rng(c) for c in ss.spawn(batch_size)]
            opt.zero_grad()
            for rng in rngs:
                task = sample_task_1d(task_cfg, rng)
                loss = nll_loss(model(task, rng=rng), task.y_target)
                (loss * (1.0 / batch_size)).backward()
                lls.append(-float(loss.data))
            _check_finite(lls[-1], "training loss")
            opt.step()
        rec = MetricsRecord(epoch + 1, float(np.mean(lls)), float(np.std(lls)),
                            time.perf_counter() - start, seed)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return history


def eval_tasks_1d(task_cfg: TaskConfig1D, n_tasks: int, seed: int, stream=EVAL_STREAM):
    """Seeded evaluation tasks plus the generator each one was drawn from."""
    rngs = task_rngs(seed, stream, n_tasks)
    return parallel_map(lambda r: sample_task_1d(task_cfg, r), rngs), rngs


def evaluate_regression(model: EquivCNP, tasks, seed: int = 0) -> np.ndarray:
    """Per-task mean target log-likelihood; MC draws are seeded per task."""
    rngs = task_rngs(seed, EVAL_STREAM + 100, len(tasks))
    if model.radius is None:
        model.calibrate(tasks[:16])

    def one(pair):
        task, rng = pair
        with no_grad():
            return log_likelihood(predict(model, task, rng=rng), task.y_target)

    return np.array(parallel_map(one, zip(tasks, rngs)))


def evaluate_oracle(kernel, tasks) -> np.ndarray:
    return np.array(parallel_map(lambda t: oracle_log_likelihood(kernel, t), tasks))


def matched_extrapolation_tasks(task_cfg: TaskConfig1D, n_tasks: int, seed: int,
                                x_range=(-4.0, 4.0)):
    """Pairs of tasks that share every draw except the input range.

    Both members use the same counts, the same uniform positions (affinely
    mapped onto their range) and the same GP noise vector, so the only
    difference between them is where the data sits.
    """
    ext_cfg = task_cfg.extrapolation(x_range)
    inside, outside = [], []
    for rng in task_rngs(seed, EXTRAP_STREAM, n_tasks):
        state = rng.bit_generator.state
        inside.append(sample_task_1d(task_cfg, rng))
        rng.bit_generator.state = state
        outside.append(sample_task_1d(ext_cfg, rng))
    return inside, outside


# -- images ---------------------------------------------------------------------
def image_batch(images, rng, fraction_range=(0.01, 0.5)):
    """Stack (B, 1, H, W) images with independent Bernoulli context masks."""
    pix, masks = [], []
    for img in images:
        mask, _ = sample_image_task(img, rng, fraction_range=fraction_range)
        pix.append(img.pixels[None])
        masks.append(mask)
    return np.stack(pix), np.stack(masks)


def train_image(model: ImageEquivCNP, epochs: int, batch_size: int = 4, lr: float = 5e-4,
                seed: int = 0, labels=range(10), batches_per_epoch=None,
                fraction_range=(0.01, 0.5), on_epoch=None) -> list[MetricsRecord]:
    """Adam over the untransformed digits with fresh masks every batch.

    One epoch visits the digit set once in shuffled order unless
    ``batches_per_epoch`` asks for more batches.
    """
    digits = digit_dataset(labels)
    opt = Adam(model.parameters(), lr=lr)
    history = []
    start = time.perf_counter()
    n_batches = batches_per_epoch or int(np.ceil(len(digits) / batch_size))
    for epoch in range(epochs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, TRAIN_STREAM, epoch]))
        order = np.concatenate([rng.permutation(len(digits))
                                for _ in range(int(np.ceil(n_batches * batch_size / len(digits))))])
        lls = []
        for b in range(n_batches):
            batch = [digits[k] for k in order[b * batch_size:(b + 1) * batch_size]]
            images, masks = image_batch(batch, rng, fraction_range)
            opt.zero_grad()
            pred = model(images, masks, rng=rng)
            loss = nll_loss(pred, images.reshape(len(batch), 1, -1).transpose(0, 2, 1))
            loss.backward()
            _check_finite(float(loss.data), "training loss")
            opt.step()
            lls.extend(image_log_likelihood(pred, images))
        rec = MetricsRecord(epoch + 1, float(np.mean(lls)), float(np.std(lls)),
                            time.perf_counter() - start, seed)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return history


def image_test_set(n_tasks: int, seed: int, labels=range(10), transform=True,
                   fraction_range=(0.01, 0.5)):
    """Seeded (images, masks) for evaluation, scale/rotation transformed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, EVAL_STREAM]))
    digits = digit_dataset(labels)
    images, masks = [], []
    for _ in range(n_tasks):
        img = digits[int(rng.integers(len(digits)))]
        if transform:
            img = transform_image(img, *random_test_transform(rng))
        mask, _ = sample_image_task(img, rng, fraction_range=fraction_range)
        images.append(img.pixels[None])
        masks.append(mask)
    return np.stack(images), np.stack(masks)


def evaluate_image(model: ImageEquivCNP, images, masks, batch_size: int = 4,
                   seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, EVAL_STREAM + 100]))
    out = []
    with no_grad():
        for s in range(0, len(images), batch_size):
            pred = model(images[s:s + batch_size], masks[s:s + batch_size], rng=rng)
            out.extend(image_log_likelihood(pred, images[s:s + batch_size]))
    return np.array(out)
