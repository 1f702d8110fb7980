"""Train a small T(1) EquivCNP on RBF tasks and look at extrapolation.

The model only ever sees inputs in [-2, 2] during training. Because every
layer commutes with translations, shifting a task to [2, 4] should cost
almost nothing, while the GP oracle shows what is attainable.

    python demos/regression_1d.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from equivcnp.autodiff import no_grad
from equivcnp.data import KernelSpec, TaskConfig1D, TaskSet, sample_task_1d
from equivcnp.gp import oracle_log_likelihood
from equivcnp.model import EquivCNP, log_likelihood
from equivcnp.plotting import plot_prediction_file, write_prediction
from equivcnp.train import eval_tasks_1d, evaluate_oracle, evaluate_regression, train_regression

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-1d")
out.mkdir(exist_ok=True)

tasks_cfg = TaskConfig1D(KernelSpec("rbf"))
model = EquivCNP(channels=(8, 16, 8), n_mc=16, seed=0)
print(f"{model.n_parameters()} parameters")

history = train_regression(model, tasks_cfg, epochs=6, batches_per_epoch=32, batch_size=8,
                           lr=2e-3, seed=0, on_epoch=lambda r: print(
                               f"epoch {r.epoch}: train ll {r.mean_ll:+.3f}"))

held_out, _ = eval_tasks_1d(tasks_cfg, 100, seed=7)
print(f"held-out ll {evaluate_regression(model, held_out).mean():+.3f}, "
      f"oracle {evaluate_oracle(tasks_cfg.kernel, held_out).mean():+.3f}")

# One task, then the same function values moved two units to the right.
rng = np.random.default_rng(3)
task = sample_task_1d(tasks_cfg, rng)
shifted = TaskSet(task.x_context + 2.0, task.y_context, task.x_target + 2.0, task.y_target)
for name, t in (("in_range", task), ("shifted", shifted)):
    with no_grad():
        pred = model(t, exact=True)
    mu, sigma = pred.mu.data[:, 0], pred.sigma.data[:, 0]
    oracle = oracle_log_likelihood(tasks_cfg.kernel, t)
    print(f"{name:>9}: model ll {log_likelihood(pred, t.y_target):+.3f}, oracle {oracle:+.3f}")
    csv = out / f"{name}.csv"
    write_prediction(csv, t.x_context[:, 0], t.y_context[:, 0], t.x_target[:, 0],
                     t.y_target[:, 0], mu, sigma)
    plot_prediction_file(csv, out / f"{name}.svg")
print(f"plots in {out}/")
