import numpy as np

from equihar.dataset import CLASSES, HarSplit, Split
from tests.signal.objects import PERIOD, random_rotation


def synthetic_split(split: Split, n_per_class: int, seed: int, noise: float = 0.1) -> HarSplit:
    """
    Build a split whose classes differ by the frequencies of their oscillations: each
    sensor oscillates along a random direction, with a random phase and amplitude.
    """
    rng = np.random.default_rng(seed)
    n = np.arange(PERIOD)
    signals = []
    labels = []
    for label in CLASSES:
        for _ in range(n_per_class):
            blocks = []
            for frequency in (label + 1, 2 * label + 3):
                direction = random_rotation(int(rng.integers(2**32)))[:, 0]
                phase = rng.uniform(0, 2 * np.pi)
                wave = rng.uniform(0.5, 2.0) * np.sin(2 * np.pi * frequency * n / PERIOD + phase)
                blocks.append(np.outer(direction, wave) + noise * rng.standard_normal((3, PERIOD)))
            signals.append(blocks)
            labels.append(label)
    return HarSplit(signals=np.array(signals), labels=np.array(labels), split=split)
