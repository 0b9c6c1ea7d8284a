"""Live-byte accounting for the gradient engines.

The profiler compares the memory behaviour of the two gradient modes, and the
comparison has to be reproducible across machines, so instead of asking the OS
allocator we count bytes explicitly: engine code registers every buffer it
retains (activation tapes, solver iterates, checkpoint stacks, accumulators)
and releases it when the buffer is dropped.  Arrays handed in by callers
(parameters, observation windows, precomputed trajectories) are never counted;
the meter answers "how much extra memory did the engine hold".
"""

import contextlib


class AllocationMeter:
    """Running count of live engine-held bytes plus the peak seen so far."""

    __slots__ = ("live_bytes", "peak_bytes")

    def __init__(self):
        self.reset()

    def reset(self):
        self.live_bytes = 0
        self.peak_bytes = 0

    def track(self, *arrays):
        for arr in arrays:
            self.live_bytes += arr.nbytes
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes

    def release(self, *arrays):
        for arr in arrays:
            self.live_bytes -= arr.nbytes
        if self.live_bytes < 0:
            raise RuntimeError("allocation meter went negative: track/release mismatch")

    @contextlib.contextmanager
    def measure(self):
        """Reset, run the block, leave peak_bytes holding the block's peak."""
        self.reset()
        yield self
        if self.live_bytes != 0:
            raise RuntimeError(
                f"engine leaked {self.live_bytes} tracked bytes past the measured block"
            )


# one process-wide meter; engines are single-threaded so this is safe
METER = AllocationMeter()
