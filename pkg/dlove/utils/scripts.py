import hashlib
from contextlib import contextmanager
from typing import Iterator, Union

import torch

MAX_SEED = 2 ** 64 - 1


def derive_seed(seed: int, *names: Union[str, int]) -> int:
    """Child seed for (seed, names...), stable across platforms and Python versions."""
    payload = ":".join([str(seed), *[str(name) for name in names]])
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:8], "big")


def make_generator(seed: int) -> torch.Generator:
    return torch.Generator(device="cpu").manual_seed(seed)


@contextmanager
def seeded(seed: int) -> Iterator[None]:
    # module constructors draw from the global generator
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def randint_from(generator: torch.Generator, high: int) -> int:
    return int(torch.randint(0, high, (1,), generator=generator).item())


def uniform_from(generator: torch.Generator, low: float, high: float) -> float:
    return low + (high - low) * float(torch.rand(1, generator=generator, dtype=torch.float64).item())
