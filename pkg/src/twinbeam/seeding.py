"""Counter-based random streams keyed by (master seed, frame index).

Every stochastic stage of the pipeline draws from a Philox generator whose
128-bit key is built from the master seed, the frame index and a per-stage
tag.  Distinct keys give statistically independent streams, so frames can be
generated in any order, on any number of workers, and still reproduce
bit-identically.  Nothing is shared between frames: reproducibility depends
only on each stage consuming its draws in the documented order (see
`source.sample_frame`, `detector.detect_events`, `detector.rasterize`).

`FrameStreams` re-keys a reusable generator in place, which is an order of
magnitude faster than constructing a fresh one per frame.  `frame_generator`
is the simple one-shot equivalent; both produce identical draws.
"""

import numpy as np

# Stage tags. Mixed into the key's high word so that the per-stage streams of
# one frame never overlap.
SOURCE_STREAM = 1
DETECTOR_STREAM = 2
RASTER_STREAM = 3

_MASK64 = (1 << 64) - 1
_STREAM_MIX = 0x9E3779B97F4A7C15  # odd 64-bit constant, decorrelates stage tags

MAX_SEED = _MASK64


def philox_key(master_seed: int, frame_index: int, stream: int) -> np.ndarray:
    """128-bit Philox key for one (seed, frame, stage) triple."""
    if not 0 <= master_seed <= _MASK64:
        raise ValueError(f"master seed must be in [0, 2^64), got {master_seed}")
    if frame_index < 0:
        raise ValueError(f"frame index must be nonnegative, got {frame_index}")
    hi = master_seed ^ ((stream * _STREAM_MIX) & _MASK64)
    return np.array([frame_index & _MASK64, hi], dtype=np.uint64)


def frame_generator(master_seed: int, frame_index: int, stream: int) -> np.random.Generator:
    """Fresh generator for one frame stage. Slow path; see FrameStreams."""
    return np.random.Generator(np.random.Philox(key=philox_key(master_seed, frame_index, stream)))


class FrameStreams:
    """Pool of reusable per-stage generators, re-keyed frame by frame.

    One instance per worker; instances must not be shared across threads.
    """

    def __init__(self, master_seed: int):
        self.master_seed = master_seed
        self._gens: dict[int, tuple[np.random.Philox, np.random.Generator, dict]] = {}

    def get(self, frame_index: int, stream: int) -> np.random.Generator:
        """Generator positioned at the start of the (frame, stage) stream."""
        entry = self._gens.get(stream)
        if entry is None:
            bitgen = np.random.Philox(key=philox_key(self.master_seed, frame_index, stream))
            gen = np.random.Generator(bitgen)
            self._gens[stream] = (bitgen, gen, bitgen.state)
            return gen
        bitgen, gen, state = entry
        state["state"]["key"][:] = philox_key(self.master_seed, frame_index, stream)
        state["state"]["counter"][:] = 0
        state["buffer_pos"] = 4  # buffer exhausted: force refill from the new key
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bitgen.state = state
        return gen
