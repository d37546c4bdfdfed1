import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.multiprocessing as mp


log = logging.getLogger(__name__)

# Stream tags, one per estimator family.
SERIES = 1
GIRSANOV = 2
DIRECT = 3
WEIGHT = 4
CHECKS = 5
GRADIENT = 6


@dataclass(frozen=True)
class Stream:
    """Counter-based random stream handle.

    A stream is a (seed, key) pair; it holds no state. Children are independent
    substreams addressed by integer keys, so any block of work can be regenerated
    from its address alone.

    Args:
        seed (int): nonnegative root seed.
        key (tuple, optional): substream address.
    """
    seed: int
    key: tuple = ()

    def __post_init__(self):
        if int(self.seed) < 0:
            raise ValueError("Seed must be nonnegative, got {}".format(self.seed))

    def child(self, *key):
        return Stream(self.seed, self.key + tuple(int(k) for k in key))

    def generator(self):
        """Returns a Philox generator positioned at the start of this substream.
        """
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng):
    if isinstance(rng, Stream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ValueError("Expected a Stream or numpy Generator, got {}".format(type(rng)))


def as_stream(rng):
    """Accepts a Stream or an integer seed.
    """
    if isinstance(rng, Stream):
        return rng
    if isinstance(rng, (int, np.integer)) and not isinstance(rng, bool):
        return Stream(int(rng))
    raise ValueError("Expected a Stream or an integer seed, got {}".format(type(rng)))


def standard_normal(rng, shape):
    """Standard normal draws as a float64 tensor.
    """
    return torch.from_numpy(rng.standard_normal(shape))


def block_sizes(total, block_size):
    if total < 1:
        raise ValueError("Number of samples must be positive, got {}".format(total))
    if block_size < 1:
        raise ValueError("Block size must be positive, got {}".format(block_size))
    full, rest = divmod(int(total), int(block_size))
    return [int(block_size)] * full + ([rest] if rest else [])


def _init_worker():
    torch.set_num_threads(1)


def map_blocks(fn, tasks, workers=1):
    """Applies fn to every task, in order.

    Results come back in task order whatever the number of workers, which is what
    keeps block-reduced estimates bit-identical across pool sizes.
    """
    tasks = list(tasks)
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    workers = min(int(workers), len(tasks))
    log.debug('Dispatching %d blocks to %d workers', len(tasks), workers)
    ctx = mp.get_context('spawn')
    with ctx.Pool(processes=workers, initializer=_init_worker) as pool:
        return pool.map(fn, tasks)
