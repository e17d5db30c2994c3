"""Brute-force reference implementations the tests compare against"""
import itertools
import math
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np


def central_difference(loss: Callable[[], float], arr: np.ndarray, index: Tuple[int, ...], eps: float = 1e-6) -> float:
    """d loss / d arr[index], perturbing arr in place and restoring it"""
    original = arr[index]
    arr[index] = original + eps
    up = loss()
    arr[index] = original - eps
    down = loss()
    arr[index] = original
    return (up - down) / (2 * eps)


def sample_indices(arr: np.ndarray, n: int, rng: np.random.Generator) -> List[Tuple[int, ...]]:
    flat = rng.choice(arr.size, size=min(n, arr.size), replace=False)
    return [tuple(int(i) for i in np.unravel_index(f, arr.shape)) for f in flat]


def check_gradients(
    loss: Callable[[], float],
    tensors: Dict[str, np.ndarray],
    analytic: Dict[str, np.ndarray],
    names: Sequence[str],
    rng: np.random.Generator,
    per_tensor: int = 4,
    rtol: float = 1e-4,
    atol: float = 1e-8,
) -> None:
    for name in names:
        for index in sample_indices(tensors[name], per_tensor, rng):
            numeric = central_difference(loss, tensors[name], index)
            np.testing.assert_allclose(analytic[name][index], numeric, rtol=rtol, atol=atol, err_msg=f"{name}{index}")


def alignment_paths(T: int, U: int):
    """Every monotone lattice path as a tuple of moves: 'b' blank, 'e' emit; the final blank is implicit"""
    for emit_slots in itertools.combinations(range(T - 1 + U), U):
        chosen = set(emit_slots)
        yield tuple("e" if i in chosen else "b" for i in range(T - 1 + U))


def enumerate_log_likelihood(log_prob: Callable[[int, int, int], float], T: int, labels: Sequence[int]) -> float:
    """log sum over paths of the product of arc probabilities; log_prob(t, u, token)"""
    U = len(labels)
    totals = []
    for path in alignment_paths(T, U):
        t = u = 0
        total = 0.0
        for move in path:
            if move == "b":
                total += log_prob(t, u, 0)
                t += 1
            else:
                total += log_prob(t, u, labels[u])
                u += 1
        total += log_prob(T - 1, U, 0)
        totals.append(total)
    m = max(totals)
    return m + math.log(sum(math.exp(v - m) for v in totals))


def scalar_lstm(w_x, w_h, b, inputs):
    """Element-by-element LSTM with [i, f, g, o] gate blocks"""
    h_width = len(w_h[0])
    h = [0.0] * h_width
    c = [0.0] * h_width
    outputs = []
    for x in inputs:
        z = []
        for r in range(4 * h_width):
            acc = b[r]
            for j, xj in enumerate(x):
                acc += w_x[r][j] * xj
            for j, hj in enumerate(h):
                acc += w_h[r][j] * hj
            z.append(acc)
        sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
        new_h, new_c = [], []
        for k in range(h_width):
            i = sig(z[k])
            f = sig(z[h_width + k])
            g = math.tanh(z[2 * h_width + k])
            o = sig(z[3 * h_width + k])
            ck = f * c[k] + i * g
            new_c.append(ck)
            new_h.append(o * math.tanh(ck))
        h, c = new_h, new_c
        outputs.append(list(h))
    return np.array(outputs)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Full-matrix Levenshtein distance"""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[len(a)][len(b)]


def sorted_percentile(values: Sequence[float], p: float) -> float:
    ordered = sorted(values)
    rank = max(1, math.ceil(round(p * len(ordered), 9)))
    return ordered[rank - 1]


def bias_encoder_states(steps: int) -> np.ndarray:
    """tanh of the hidden states of a width-1 LSTM with zero weights and all gate biases 1"""
    hidden = scalar_lstm(np.zeros((4, 1)), np.zeros((4, 1)), np.ones(4), [[0.0]] * steps)
    return np.tanh(hidden[:, 0])


def sweep_eer(pos: np.ndarray, neg: np.ndarray) -> float:
    """Equal error rate from an exhaustive threshold sweep over single-score streams"""
    grid = np.unique(np.concatenate([pos, neg, [0.0, 1.0]]))
    fa = (neg[None, :] >= grid[:, None]).mean(axis=1)
    fr = (pos[None, :] < grid[:, None]).mean(axis=1)
    diff = fa - fr
    for i in range(len(grid)):
        if diff[i] == 0:
            return float(fa[i])
        if i + 1 < len(grid) and diff[i] > 0 > diff[i + 1]:
            w = diff[i] / (diff[i] - diff[i + 1])
            return float(fa[i] + w * (fa[i + 1] - fa[i]))
    i = int(np.argmin(np.abs(diff)))
    return float((fa[i] + fr[i]) / 2)
