"""Desk-scale attribution experiments on multiclass logistic regression.

The weight matrix W (d x C) gives every training example a natural d x C
gradient block x (p - y)^T, so the GFIM path is exercised without any deep
learning framework.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .estimators import GradientDump, InfluenceReport, run_estimator
from .fisher import softmax
from .hyperpower import IterationConfig


@dataclass(frozen=True)
class ToyTask:
    n_train: int = 500
    n_val: int = 200
    n_test: int = 1000
    dim: int = 20
    classes: int = 2
    class_separation: float = 3.0
    flip_fraction: float = 0.2
    seed: int = 0
    lr: float = 0.1
    max_steps: int = 5000
    grad_tol: float = 1e-4

    def __post_init__(self):
        if not 0 <= self.flip_fraction < 1:
            raise ValueError("flip_fraction must be in [0, 1)")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if min(self.n_train, self.n_val, self.n_test, self.dim) < 1:
            raise ValueError("sizes must be positive")


@dataclass
class ToyData:
    x_train: np.ndarray
    y_train: np.ndarray       # labels after corruption
    y_clean: np.ndarray
    flipped: np.ndarray       # indices of corrupted training labels
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


@dataclass
class TrainResult:
    w: np.ndarray
    steps: int
    grad_norm: float
    losses: list[float] = field(repr=False, default_factory=list)


def make_data(task: ToyTask) -> ToyData:
    rng = np.random.default_rng([task.seed, 1])
    means = rng.standard_normal((task.classes, task.dim))
    means -= means.mean(axis=0)  # centered, so no bias term is needed
    means *= (task.class_separation / 2) / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(m):
        y = rng.integers(0, task.classes, size=m)
        return means[y] + rng.standard_normal((m, task.dim)), y

    x_train, y_clean = draw(task.n_train)
    x_val, y_val = draw(task.n_val)
    x_test, y_test = draw(task.n_test)
    n_flip = int(round(task.flip_fraction * task.n_train))
    flipped = np.sort(rng.choice(task.n_train, size=n_flip, replace=False))
    y_train = y_clean.copy()
    shift = rng.integers(1, task.classes, size=n_flip)
    y_train[flipped] = (y_clean[flipped] + shift) % task.classes
    return ToyData(x_train, y_train, y_clean, flipped, x_val, y_val, x_test, y_test)


def nll(w, x, y) -> float:
    z = x @ w
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def per_example_grads(w, x, y) -> np.ndarray:
    """(n, d, C) stack of x_i (p_i - e_{y_i})^T."""
    resid = softmax(x @ w)
    resid[np.arange(len(y)), y] -= 1.0
    return x[:, :, None] * resid[:, None, :]


def mean_grad(w, x, y) -> np.ndarray:
    resid = softmax(x @ w)
    resid[np.arange(len(y)), y] -= 1.0
    return x.T @ resid / len(y)


def train(x, y, classes: int, lr: float = 0.1, max_steps: int = 5000,
          grad_tol: float = 1e-4) -> TrainResult:
    """Full-batch gradient descent on the mean NLL from W = 0."""
    w = np.zeros((x.shape[1], classes))
    losses = [nll(w, x, y)]
    g = mean_grad(w, x, y)
    steps = 0
    while steps < max_steps and np.linalg.norm(g) > grad_tol:
        w -= lr * g
        steps += 1
        losses.append(nll(w, x, y))
        g = mean_grad(w, x, y)
    return TrainResult(w, steps, float(np.linalg.norm(g)), losses)


def accuracy(w, x, y) -> float:
    return float(np.mean(np.argmax(x @ w, axis=1) == y))


@dataclass
class ToyModel:
    task: ToyTask
    data: ToyData
    fit: TrainResult
    dump: GradientDump

    @property
    def meta(self) -> dict:
        return {"steps": self.fit.steps, "grad_norm": self.fit.grad_norm,
                "converged": self.fit.grad_norm <= self.task.grad_tol,
                "val_accuracy": accuracy(self.fit.w, self.data.x_val, self.data.y_val)}


def train_toy_model(task: ToyTask) -> ToyModel:
    """Train on the corrupted labels and emit one "W" gradient block per example."""
    data = make_data(task)
    fit = train(data.x_train, data.y_train, task.classes, task.lr, task.max_steps, task.grad_tol)
    grads = per_example_grads(fit.w, data.x_train, data.y_train)
    val = mean_grad(fit.w, data.x_val, data.y_val)
    dump = GradientDump(["W"], {"W": grads}, {"W": val})
    return ToyModel(task, data, fit, dump)


# stabilized start: 5e-4 * I stalls when toy-model curvature is tiny
TOY_ITERATION = IterationConfig(max_iters=40, init_mode="transpose-scaled")


def score_toy(model: ToyModel, estimator: str, cfg: IterationConfig = TOY_ITERATION,
              lam: Optional[float] = None) -> InfluenceReport:
    return run_estimator(estimator, model.dump, lam=lam, cfg=cfg)


def detection_curve(scores: np.ndarray, flipped: np.ndarray, p_grid: Sequence[float]) -> np.ndarray:
    """rt(p): fraction of flipped examples among the top-p% highest scores."""
    n = len(scores)
    order = np.argsort(-scores, kind="stable")
    is_flipped = np.zeros(n, dtype=bool)
    is_flipped[flipped] = True
    hits = np.concatenate([[0], np.cumsum(is_flipped[order])])
    out = []
    for p in p_grid:
        k = min(n, int(np.ceil(round(p * n / 100.0, 9))))
        out.append(hits[k] / max(len(flipped), 1))
    return np.array(out)


def _ci95(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    s = values.shape[0]
    if s < 2:
        return mean, mean.copy(), mean.copy()
    half = stats.t.ppf(0.975, s - 1) * values.std(axis=0, ddof=1) / np.sqrt(s)
    return mean, mean - half, mean + half


@dataclass
class DetectionReport:
    p_grid: list[float]
    flip_percent: float
    seeds: list[int]
    per_seed: dict[str, np.ndarray]   # estimator -> (seeds, len(p_grid))
    mean: dict[str, np.ndarray]
    ci_low: dict[str, np.ndarray]
    ci_high: dict[str, np.ndarray]
    oracle: np.ndarray
    random: np.ndarray
    config: dict = field(default_factory=dict)


DEFAULT_P_GRID = tuple(range(5, 101, 5))


def run_detection(task: ToyTask = ToyTask(), estimators: Sequence[str] = ("hyperinf",),
                  p_grid: Sequence[float] = DEFAULT_P_GRID, seeds: int = 3,
                  cfg: IterationConfig = TOY_ITERATION) -> DetectionReport:
    if task.flip_fraction <= 0:
        raise ValueError("detection needs flip_fraction > 0")
    p_grid = [float(p) for p in p_grid]
    seed_list = [task.seed + s for s in range(seeds)]
    curves = {e: [] for e in estimators}
    for s in seed_list:
        model = train_toy_model(replace(task, seed=s))
        for e in estimators:
            report = score_toy(model, e, cfg)
            curves[e].append(detection_curve(report.scores, model.data.flipped, p_grid))
    flip_pct = 100.0 * task.flip_fraction
    per_seed, mean, lo, hi = {}, {}, {}, {}
    for e in estimators:
        per_seed[e] = np.array(curves[e])
        mean[e], lo[e], hi[e] = _ci95(per_seed[e])
    p = np.array(p_grid)
    oracle = np.minimum(p / flip_pct, 1.0)
    config = {"task": task.__dict__.copy(), "estimators": list(estimators), **cfg.echo()}
    return DetectionReport(p_grid, flip_pct, seed_list, per_seed, mean, lo, hi, oracle, p / 100.0,
                           config)


@dataclass
class SelectionCell:
    method: str
    k_percent: float
    accuracy_mean: float
    accuracies: list[float]
    skipped: Optional[str] = None


def _subset_accuracy(model: ToyModel, idx: np.ndarray) -> Optional[float]:
    data, task = model.data, model.task
    if len(idx) < task.classes:
        return None
    fit = train(data.x_train[idx], data.y_train[idx], task.classes, task.lr, task.max_steps,
                task.grad_tol)
    return accuracy(fit.w, data.x_test, data.y_test)


def run_selection(task: ToyTask = ToyTask(), estimators: Sequence[str] = ("hyperinf",),
                  k_grid: Sequence[float] = (5, 20, 40), seeds: int = 3,
                  cfg: IterationConfig = TOY_ITERATION) -> list[SelectionCell]:
    """Retrain on the k% most helpful examples and report held-out accuracy.

    Random and Full (100%) baselines are included as methods "random" and "full".
    """
    acc: dict[tuple[str, float], list] = {}
    for s in range(seeds):
        model = train_toy_model(replace(task, seed=task.seed + s))
        n = task.n_train
        full = _subset_accuracy(model, np.arange(n))
        acc.setdefault(("full", 100.0), []).append(full)
        rng = np.random.default_rng([task.seed + s, 2])
        perm = rng.permutation(n)
        reports = {e: score_toy(model, e, cfg) for e in estimators}
        for k in k_grid:
            size = min(n, int(np.ceil(round(k * n / 100.0, 9))))
            acc.setdefault(("random", float(k)), []).append(
                _subset_accuracy(model, np.sort(perm[:size])))
            for e, rep in reports.items():
                idx = np.sort(np.argsort(rep.scores, kind="stable")[:size])
                acc.setdefault((e, float(k)), []).append(_subset_accuracy(model, idx))
    cells = []
    for (method, k), values in acc.items():
        if any(v is None for v in values):
            cells.append(SelectionCell(method, k, float("nan"), [],
                                       f"subset smaller than {task.classes} examples"))
        else:
            cells.append(SelectionCell(method, k, float(np.mean(values)), values))
    return cells
