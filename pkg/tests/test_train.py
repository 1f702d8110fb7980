import numpy as np
import pytest

from equivcnp.autodiff.checkpoint import dumps
from equivcnp.data import KernelSpec, TaskConfig1D
from equivcnp.model import EquivCNP, ImageEquivCNP
from equivcnp.train import (MetricsRecord, evaluate_oracle, evaluate_regression,
                            eval_tasks_1d, image_test_set, matched_extrapolation_tasks,
                            n_workers, parallel_map, task_rngs, train_image, train_regression)

TINY = dict(channels=(4, 4), n_mc=10, seed=1)
TASKS = TaskConfig1D(n_context_range=(3, 10), n_target_range=(3, 10))


def trained_bytes(seed):
    model = EquivCNP(**TINY)
    hist = train_regression(model, TASKS, epochs=2, batches_per_epoch=2, batch_size=2,
                            seed=seed)
    return dumps(model.state_dict(), {"radius": model.radius}), hist


def test_training_is_deterministic():
    a, ha = trained_bytes(5)
    b, hb = trained_bytes(5)
    c, _ = trained_bytes(6)
    assert a == b and a != c
    assert [r.csv_row().rsplit(",", 2)[0] for r in ha] == \
        [r.csv_row().rsplit(",", 2)[0] for r in hb]


def test_training_improves_likelihood():
    model = EquivCNP(**TINY)
    tasks, _ = eval_tasks_1d(TASKS, 40, seed=9)
    before = evaluate_regression(model, tasks).mean()
    train_regression(model, TASKS, epochs=3, batches_per_epoch=12, batch_size=4, lr=3e-3)
    assert evaluate_regression(model, tasks).mean() > before


def test_metrics_records():
    seen = []
    model = EquivCNP(**TINY)
    hist = train_regression(model, TASKS, 2, 1, 2, on_epoch=seen.append)
    assert [r.epoch for r in hist] == [1, 2] and seen == hist
    assert hist[1].wall_seconds >= hist[0].wall_seconds
    assert MetricsRecord.CSV_HEADER == "epoch,mean_ll,std_ll,wall_seconds,seed"
    assert len(hist[0].csv_row().split(",")) == 5


def test_task_streams_are_independent_and_seeded():
    a = [r.random() for r in task_rngs(0, 1, 3)]
    assert a == [r.random() for r in task_rngs(0, 1, 3)]
    assert a != [r.random() for r in task_rngs(0, 2, 3)]
    assert len(set(a)) == 3


def test_evaluation_is_reproducible():
    model = EquivCNP(**TINY)
    tasks, _ = eval_tasks_1d(TASKS, 6, seed=3)
    a = evaluate_regression(model, tasks, seed=3)
    b = evaluate_regression(model, tasks, seed=3)
    assert a.tobytes() == b.tobytes() and a.shape == (6,)


def test_worker_pool(monkeypatch):
    monkeypatch.setenv("EQUIVCNP_THREADS", "3")
    assert n_workers() == 3
    assert parallel_map(lambda x: x * x, range(10)) == [x * x for x in range(10)]
    model = EquivCNP(**TINY)
    tasks, _ = eval_tasks_1d(TASKS, 6, seed=4)
    threaded = evaluate_regression(model, tasks, seed=4)
    monkeypatch.setenv("EQUIVCNP_THREADS", "1")
    np.testing.assert_array_equal(threaded, evaluate_regression(model, tasks, seed=4))
    monkeypatch.setenv("EQUIVCNP_THREADS", "zero")
    with pytest.raises(ValueError):
        n_workers()


def test_oracle_beats_untrained_model():
    tasks, _ = eval_tasks_1d(TASKS, 20, seed=0)
    oracle = evaluate_oracle(KernelSpec(), tasks)
    model = evaluate_regression(EquivCNP(**TINY), tasks)
    assert oracle.mean() > model.mean()


def test_matched_extrapolation_pairs():
    inside, outside = matched_extrapolation_tasks(TaskConfig1D(), 5, seed=2)
    for a, b in zip(inside, outside):
        assert a.n_context == b.n_context and a.n_target == b.n_target
        np.testing.assert_allclose(b.x_context, 2 * a.x_context, atol=1e-12)
        assert np.all(np.abs(b.x_target) <= 4) and np.any(np.abs(b.x_target) > 2)


def test_image_training_and_test_set():
    model = ImageEquivCNP(tag="T2", image_size=64, enc_channels=2, enc_n_mc=5, channels=2,
                          n_blocks=0)
    hist = train_image(model, epochs=1, batch_size=2, labels=[1, 7], seed=0)
    assert len(hist) == 1 and np.isfinite(hist[0].mean_ll)
    images, masks = image_test_set(3, seed=0, labels=[1, 7])
    assert images.shape == (3, 1, 64, 64) and masks.shape == (3, 64, 64)
    again, _ = image_test_set(3, seed=0, labels=[1, 7])
    np.testing.assert_array_equal(images, again)
