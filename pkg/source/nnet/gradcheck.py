import logging
from typing import Callable, Optional, Tuple

import numpy as np

from nnet.network import Network

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

MAX_RECOMMENDED_STEP = 1e-3


def relative_error(analytic: float, numeric: float, floor: float = 1e-12) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
        network: Network,
        x: np.ndarray,
        loss_fn: LossFn,
        step: float = 1e-5,
        n_checks: int = 200,
        rng: Optional[np.random.Generator] = None,
        include_input: bool = True,
) -> float:
    """Max relative error between backprop and central differences.

    `loss_fn(y)` returns (value, dvalue/dy). At most `n_checks` entries are
    sampled from the parameters (and the input, when `include_input`); all of
    them when there are fewer. Run in float64.
    """
    if step > MAX_RECOMMENDED_STEP:
        logging.warning(f"Finite-difference step {step:g} is large; truncation error will dominate the check")
    rng = rng or np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)

    network.zero_grad()
    y, trace = network.forward(x)
    _, gy = loss_fn(y)
    gx = network.backward(trace, gy)

    tensors = [(p.value, p.grad.copy()) for p in network.parameters()]
    if include_input:
        tensors.append((x, gx))
    sizes = np.array([t[0].size for t in tensors])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    picks = rng.choice(total, size=min(n_checks, total), replace=False)

    worst = 0.0
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side='right') - 1)
        index = int(flat - offsets[which])
        values, analytic = tensors[which]
        original = values.flat[index]
        values.flat[index] = original + step
        f_plus, _ = loss_fn(network.forward(x)[0])
        values.flat[index] = original - step
        f_minus, _ = loss_fn(network.forward(x)[0])
        values.flat[index] = original
        numeric = (f_plus - f_minus) / (2 * step)
        worst = max(worst, relative_error(float(analytic.flat[index]), float(numeric)))
    network.zero_grad()
    logging.debug(f"grad_check on {network.name}: {picks.size} entries, max relative error {worst:.3e}")
    return worst
