from typing import Callable, Dict, Tuple

import numpy as np


def uniform_init(
    shapes: Dict[str, Tuple[int, ...]], fan_in: Callable[[str], int], seed: int
) -> Dict[str, np.ndarray]:
    """Uniform(-r, r), r = 1/sqrt(fan_in), drawn tensor by tensor in insertion order"""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in shapes.items():
        r = 1.0 / np.sqrt(fan_in(name))
        tensors[name] = rng.uniform(-r, r, size=shape)
    return tensors


def bias_partner_fan_in(shapes: Dict[str, Tuple[int, ...]], partners: Dict[str, str]) -> Callable[[str], int]:
    """
    fan_in rule for dotted tensor names: a weight's fan-in is its column
    count; a bias listed in ``partners`` borrows its weight's.
    """
    def fan_in(name: str) -> int:
        prefix, leaf = name.rsplit(".", 1)
        partner = partners.get(leaf)
        if partner is not None:
            return shapes[f"{prefix}.{partner}"][1]
        return shapes[name][1]
    return fan_in
