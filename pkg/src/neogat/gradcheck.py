"""Central finite-difference checks for the autodiff primitives and the full model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .gat import GatLayer, gat_forward
from .graph import build_graph
from .model import Model
from .train import focal_bce

STEP = 1e-5
# the full model has ~1e5 ReLU units; a 1e-5 step crosses some kinks, 1e-7 almost never does
MODEL_STEP = 1e-7
PRIMITIVE_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(self.rel_err < self.tol)


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP, indices=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_function(name: str, fn: Callable[..., Tensor], arrays: list[np.ndarray], seed: int = 0, tol: float = PRIMITIVE_TOL) -> CheckResult:
    """Compare autodiff and finite differences of ``sum(fn(*inputs) * R)`` for a fixed random ``R``."""
    tensors = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    weights = np.random.default_rng(seed).standard_normal(out.shape)

    def scalar() -> float:
        return float(np.sum(fn(*tensors).data * weights))

    loss = ad.sum_(ad.mul(out, weights))
    analytic = ad.grad(loss, tensors)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        worst = max(worst, rel_err(a, numeric_grad(scalar, t.data)))
    return CheckResult(name, worst, tol)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def primitive_cases(rng: np.random.Generator):
    """``(name, fn, arrays)`` triples with randomised shapes."""
    n, cin, cout = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    t = 2 * int(rng.integers(3, 9))
    k = int(rng.choice([1, 3, 5, 7]))
    f_in, f_out = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    yield "conv1d", lambda x, w, b: ad.conv1d(x, w, b), [rng.standard_normal((n, cin, t)), rng.standard_normal((cout, cin, k)), rng.standard_normal(cout)]
    yield "avg_pool1d", lambda x: ad.avg_pool1d(x, 2), [rng.standard_normal((n, cin, t))]
    bn = BatchNormState(cin, dtype=np.float64)
    yield "batch_norm", lambda x, g, b: ad.batch_norm(x, g, b, bn, train=True), [rng.standard_normal((n + 1, cin, t)), rng.standard_normal(cin), rng.standard_normal(cin)]
    yield "relu", ad.relu, [_away_from_zero(rng, (n, t))]
    yield "leaky_relu", lambda x: ad.leaky_relu(x, 0.2), [_away_from_zero(rng, (n, t))]
    yield "elu", ad.elu, [_away_from_zero(rng, (n, t))]
    yield "sigmoid", ad.sigmoid, [rng.standard_normal((n, t))]
    yield "dense", ad.dense, [rng.standard_normal((n, f_in)), rng.standard_normal((f_in, f_out)), rng.standard_normal(f_out)]
    mask = rng.random((f_in, f_in)) < 0.5
    np.fill_diagonal(mask, True)
    yield "masked_softmax", lambda x: ad.masked_softmax(x, mask), [rng.standard_normal((n, f_in, f_in))]
    graph = build_graph()
    f = int(rng.integers(2, 6))
    fo = int(rng.integers(2, 6))
    yield (
        "gat_forward",
        lambda h, w, a: gat_forward(h, GatLayer(w, a, graph.mask())),
        [rng.standard_normal((12, f)), rng.standard_normal((f, fo)) / np.sqrt(f), rng.standard_normal(2 * fo)],
    )
    y = rng.integers(0, 2, size=n + 3)
    yield "focal_bce", lambda p: focal_bce(p, y), [rng.uniform(0.05, 0.95, size=n + 3)]


def primitive_suite(n_seeds: int = 20, seed: int = 0) -> list[CheckResult]:
    results = []
    for s in range(n_seeds):
        rng = np.random.default_rng(seed + s)
        for name, fn, arrays in primitive_cases(rng):
            results.append(check_function(f"{name}[seed={seed + s}]", fn, arrays, seed=seed + s))
    return results


def model_suite(n_params: int = 50, seed: int = 0, batch: int = 2, tol: float = MODEL_TOL, h: float = MODEL_STEP) -> list[CheckResult]:
    """Spot-check ``n_params`` randomly chosen scalar parameters of a float64 model.

    The loss is the focal loss of a train-mode forward on a random batch; the
    dropout generator is re-seeded for every evaluation so masks stay fixed.
    """
    rng = np.random.default_rng(seed)
    model = Model().astype(np.float64)
    x = rng.standard_normal((batch, 12, 384))
    y = np.arange(batch) % 2

    def loss_tensor():
        logits = model.forward(x, train=True, rng=np.random.default_rng(seed + 1))
        return focal_bce(ad.sigmoid(logits), y)

    model.params.zero_grad()
    loss_tensor().backward()
    grads = model.params.grads()
    names = model.params.names()
    sizes = np.array([model.params[n].data.size for n in names])
    picks = rng.choice(sizes.sum(), size=n_params, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    results = []
    for flat in sorted(picks):
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[j]
        idx = int(flat - offsets[j])
        arr = model.params[name].data
        num = numeric_grad(lambda: float(loss_tensor().data), arr, h=h, indices=[idx]).reshape(-1)[idx]
        ana = grads[name].reshape(-1)[idx]
        results.append(CheckResult(f"{name}[{idx}]", _scalar_rel_err(ana, num), tol))
    return results


def _scalar_rel_err(a: float, n: float, floor: float = 1e-8) -> float:
    return float(abs(a - n) / max(abs(a), abs(n), floor))


def run_all(n_seeds: int = 20, n_params: int = 50, seed: int = 0) -> list[CheckResult]:
    return primitive_suite(n_seeds, seed) + model_suite(n_params, seed)
