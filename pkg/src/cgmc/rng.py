"""Counter-based random streams keyed by (seed, stream labels)."""
import numpy as np

# stream tags keep independent consumers from colliding on the same key
MICRO_CHAIN = 1
CG_CHAIN = 2
CELL_MC = 3
CELL_EXCHANGE = 4
RECON_EVEN = 5
RECON_ODD = 6

CHUNK = 1 << 16


def stream(seed: int, *labels: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *labels)``; no global state."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *map(int, labels)])))


def record_offset(chunk_start: int, burn_in: int, thin: int) -> int:
    """Local index of the first retained step in a chunk starting at ``chunk_start``.

    Step ``g`` (0-based) is retained when ``g >= burn_in`` and
    ``(g - burn_in + 1) % thin == 0``.
    """
    first = burn_in + thin - 1
    if chunk_start <= first:
        return first - chunk_start
    return (-(chunk_start - first)) % thin


def n_retained(steps: int, burn_in: int, thin: int) -> int:
    return max(0, (steps - burn_in) // thin)
