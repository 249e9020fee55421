"""Central finite-difference checks for every backward pass.

Each check builds a scalar objective, computes its gradient analytically
and compares a sample of coordinates against (f(v+eps) - f(v-eps)) / 2eps.
Relative error is |a - n| / max(|a|, |n|, MAGNITUDE_FLOOR).
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .model import FcnModel, backward, build_fcn, forward, tiny_spec
from .numerics import (
    LayerParams,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    deconv2d_backward,
    deconv2d_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
)
from .trainloop import LossWeights, weighted_bce

log = logging.getLogger(__name__)

EPS = 1e-4
LAYER_TOLERANCE = 1e-4
ADJOINT_TOLERANCE = 1e-10
MODEL_TOLERANCE = 1e-3
MAGNITUDE_FLOOR = 1e-3
PROBES = 24


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    probes: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), MAGNITUDE_FLOOR)


def _compare(
    name: str,
    objective: Callable[[], float],
    pairs: Iterable[tuple[np.ndarray, np.ndarray]],
    rng: np.random.Generator,
    tolerance: float = LAYER_TOLERANCE,
    probes: int = PROBES,
    perturb: float = 0.0,
    stable: Callable[[], bool] | None = None,
) -> CheckResult:
    """Probe ``probes`` coordinates of each (value, analytic gradient) pair.

    ``value`` is modified in place and restored. When ``stable`` is given a
    probe whose perturbation flips it (a ReLU mask or pool winner) is skipped.
    """
    worst, count, skipped = 0.0, 0, 0
    for value, analytic in pairs:
        analytic = analytic * (1.0 + perturb)
        flat = value.reshape(-1)
        picks = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        for idx in picks:
            old = flat[idx]
            flat[idx] = old + EPS
            plus = objective()
            ok = stable() if stable else True
            flat[idx] = old - EPS
            minus = objective()
            ok = ok and (stable() if stable else True)
            flat[idx] = old
            if not ok:
                skipped += 1
                continue
            numeric = (plus - minus) / (2 * EPS)
            worst = max(worst, relative_error(float(analytic.reshape(-1)[idx]), numeric))
            count += 1
    return CheckResult(name, worst, tolerance, count, skipped)


def _random_conv(rng: np.random.Generator, out_c: int, in_c: int, kernel: tuple[int, int]) -> LayerParams:
    p = LayerParams.conv(out_c, in_c, kernel)
    p.weight[...] = rng.standard_normal(p.weight.shape)
    p.bias[...] = rng.standard_normal(p.bias.shape)
    return p


def _random_deconv(rng: np.random.Generator, in_c: int, out_c: int, kernel: tuple[int, int]) -> LayerParams:
    p = LayerParams.deconv(in_c, out_c, kernel)
    p.weight[...] = rng.standard_normal(p.weight.shape)
    p.bias[...] = rng.standard_normal(p.bias.shape)
    return p


# ---------------------------------------------------------------------------
# Layer checks
# ---------------------------------------------------------------------------


def check_conv(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    stride, pad = (1, 2), (1, 1)
    x = rng.standard_normal((2, 2, 5, 6))
    p = _random_conv(rng, 3, 2, (3, 3))
    r = rng.standard_normal(conv2d_forward(x, p, stride, pad).shape)
    grad_x = conv2d_backward(x, p, r, stride, pad)

    def objective() -> float:
        return float((conv2d_forward(x, p, stride, pad) * r).sum())

    pairs = [(x, grad_x), (p.weight, p.grad_weight.copy()), (p.bias, p.grad_bias.copy())]
    return _compare("conv", objective, pairs, rng, perturb=perturb)


def check_deconv(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    stride, pad = (1, 2), (0, 1)
    x = rng.standard_normal((2, 3, 2, 4))
    p = _random_deconv(rng, 3, 2, (1, 4))
    r = rng.standard_normal(deconv2d_forward(x, p, stride, pad).shape)
    grad_x = deconv2d_backward(x, p, r, stride, pad)

    def objective() -> float:
        return float((deconv2d_forward(x, p, stride, pad) * r).sum())

    pairs = [(x, grad_x), (p.weight, p.grad_weight.copy()), (p.bias, p.grad_bias.copy())]
    return _compare("deconv", objective, pairs, rng, perturb=perturb)


def check_adjoint(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    """<conv(x), y> == <x, deconv(y)> for a shared bias-free kernel."""
    stride, pad, kernel = (2, 2), (1, 1), (3, 4)
    w = rng.standard_normal((3, 2, *kernel))
    conv = LayerParams.conv(3, 2, kernel)
    conv.weight[...] = w
    deconv = LayerParams.deconv(3, 2, kernel)
    deconv.weight[...] = w
    y = rng.standard_normal((2, 3, 3, 4))
    x = rng.standard_normal(deconv2d_forward(y, deconv, stride, pad).shape)
    lhs = float((conv2d_forward(x, conv, stride, pad) * y).sum())
    rhs = float((x * deconv2d_forward(y, deconv, stride, pad)).sum()) * (1.0 + perturb)
    return CheckResult("adjoint", relative_error(lhs, rhs), ADJOINT_TOLERANCE, 1)


def check_maxpool(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    shape = (2, 2, 4, 6)
    # distinct values spaced far wider than EPS keep every pool winner fixed
    x = rng.permutation(int(np.prod(shape))).reshape(shape) / 10.0
    out, argmax = maxpool_forward(x, (2, 2))
    r = rng.standard_normal(out.shape)
    grad_x = maxpool_backward(argmax, r)

    def objective() -> float:
        return float((maxpool_forward(x, (2, 2))[0] * r).sum())

    return _compare("maxpool", objective, [(x, grad_x)], rng, perturb=perturb)


def check_batchnorm(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    x = rng.standard_normal((3, 2, 2, 3)) * 2.0 + 1.0
    p = LayerParams.batchnorm(2)
    p.weight[...] = rng.uniform(0.5, 1.5, 2)
    p.bias[...] = rng.standard_normal(2)
    r = rng.standard_normal(x.shape)
    grad_x = batchnorm_backward(x, p, r)

    def objective() -> float:
        return float((batchnorm_forward(x, p, "train") * r).sum())

    pairs = [(x, grad_x), (p.weight, p.grad_weight.copy()), (p.bias, p.grad_bias.copy())]
    return _compare("batchnorm", objective, pairs, rng, perturb=perturb)


def check_relu(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    x = rng.standard_normal((2, 3, 4, 5))
    x = np.sign(x) * (np.abs(x) + 0.1)
    r = rng.standard_normal(x.shape)
    grad_x = relu_backward(x, r)

    def objective() -> float:
        return float((relu_forward(x) * r).sum())

    return _compare("relu", objective, [(x, grad_x)], rng, perturb=perturb)


def check_sigmoid(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    x = rng.standard_normal((2, 1, 1, 16)) * 2.0
    r = rng.standard_normal(x.shape)
    grad_x = sigmoid_backward(sigmoid_forward(x), r)

    def objective() -> float:
        return float((sigmoid_forward(x) * r).sum())

    return _compare("sigmoid", objective, [(x, grad_x)], rng, perturb=perturb)


def check_weighted_bce(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    p = rng.uniform(0.05, 0.95, (2, 10))
    q = (rng.random((2, 10)) < 0.3).astype(np.uint8)
    w = LossWeights.of(0.7)
    _, grad = weighted_bce(p, q, w)

    def objective() -> float:
        return weighted_bce(p, q, w)[0]

    return _compare("weighted_bce", objective, [(p, grad)], rng, perturb=perturb)


def check_end_to_end(rng: np.random.Generator, perturb: float = 0.0) -> CheckResult:
    """Loss of the tiny float64 model against every parameter tensor."""
    model: FcnModel = build_fcn(tiny_spec(), seed=int(rng.integers(2**31)), dtype=np.float64)
    spec = model.spec
    x = rng.random((2, 1, spec.input_height, spec.input_width))
    q = (rng.random((2, spec.input_width)) < 0.2).astype(np.uint8)
    w = LossWeights.of(0.8)
    model.mode = "train"
    model.zero_grad()
    _, grad = weighted_bce(forward(model, x), q, w)
    backward(model, grad)
    reference = [a.copy() for a in model.activation_pattern()]
    pairs = [(value, g.copy()) for p in model.params() for _, value, g in p.trainable()]

    def objective() -> float:
        return weighted_bce(forward(model, x), q, w)[0]

    def stable() -> bool:
        return all(np.array_equal(a, b) for a, b in zip(reference, model.activation_pattern()))

    result = _compare(
        "end_to_end", objective, pairs, rng, tolerance=MODEL_TOLERANCE, probes=6, perturb=perturb, stable=stable
    )
    model.mode = "infer"
    return result


CHECKS: dict[str, Callable[[np.random.Generator, float], CheckResult]] = {
    "conv": check_conv,
    "deconv": check_deconv,
    "adjoint": check_adjoint,
    "maxpool": check_maxpool,
    "batchnorm": check_batchnorm,
    "relu": check_relu,
    "sigmoid": check_sigmoid,
    "weighted_bce": check_weighted_bce,
    "end_to_end": check_end_to_end,
}


def run_checks(names: Iterable[str] | None = None, seed: int = 0, perturb: float = 0.0) -> list[CheckResult]:
    """Run the named checks (all by default), each from its own child generator.

    ``perturb`` scales every analytic gradient by (1 + perturb); any
    non-trivial value must make the suite fail.
    """
    selected = list(names) if names else list(CHECKS)
    unknown = [n for n in selected if n not in CHECKS]
    if unknown:
        raise ConfigurationError(f"unknown gradient checks: {', '.join(unknown)}")
    results = []
    for k, name in enumerate(selected):
        result = CHECKS[name](np.random.default_rng([seed, k]), perturb)
        log.debug("%s: max error %.3e over %d probes", name, result.max_error, result.probes)
        results.append(result)
    return results
