import numpy as np

from cooccur.labelmap import LabelMap


def grid_map(rows, c):
    return LabelMap(np.array(rows, dtype=np.int64), c)


def random_grid(rng, h, w, c):
    return rng.integers(0, c, size=(h, w)).tolist()
