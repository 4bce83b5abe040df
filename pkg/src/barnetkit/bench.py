"""Micro-benchmarks for the attention and fusion blocks.

The interesting question is how the bilinear descriptor scales: its
cost is dominated by two D x (H*W) matrix products, so doubling the
channel count at fixed spatial size should cost about 4x.  That
quadratic wall is why the block belongs on small, deep maps.
"""

import time

import numpy as np

from .arf import AdaptiveReceptiveField
from .bam import bam_forward
from .tensor import Tensor, mean_all, no_grad

__all__ = ["bam_grid", "arf_grid", "run_bench", "format_rows"]

# channel counts start high enough that the descriptor's matrix
# products dominate per-op bookkeeping, so the quadratic growth in
# channels is visible in the timings rather than swamped by overhead
BAM_CHANNELS = (128, 256, 512)
BAM_SIDES = (16, 32)
ARF_CHANNELS = (32, 64)


def _median_seconds(fn, repeats):
    fn()  # warm caches and BLAS dispatch before timing
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def bam_grid(repeats=9, rng=None):
    """Time the bilinear block across channel counts and map sizes."""
    rng = rng or np.random.default_rng(0)
    rows = []
    for side in BAM_SIDES:
        for channels in BAM_CHANNELS:
            data = rng.uniform(0.1, 1.0, (channels, side, side))
            x = Tensor(data.astype(np.float32), requires_grad=True)

            def forward():
                with no_grad():
                    bam_forward(x)

            def forward_backward():
                x.zero_grad()
                mean_all(bam_forward(x)).backward()

            rows.append({
                "block": "bam", "channels": channels,
                "height": side, "width": side,
                "forward_s": _median_seconds(forward, repeats),
                "forward_backward_s": _median_seconds(forward_backward,
                                                      repeats),
            })
    return rows


def arf_grid(repeats=9, rng=None):
    """Time the fusion block on a three-scale pyramid."""
    rng = rng or np.random.default_rng(1)
    rows = []
    for channels in ARF_CHANNELS:
        widths = [channels, channels // 2, channels // 4]
        arf = AdaptiveReceptiveField(widths, n=8,
                                     rng=np.random.default_rng(2),
                                     name="bench", dtype=np.float32)
        maps = [Tensor(rng.uniform(0.1, 1.0, (c, 8 * 2 ** i, 8 * 2 ** i))
                       .astype(np.float32), requires_grad=True)
                for i, c in enumerate(widths)]

        def forward():
            with no_grad():
                arf(maps)

        def forward_backward():
            for m in maps:
                m.zero_grad()
            mean_all(arf(maps)).backward()

        rows.append({
            "block": "arf", "channels": channels,
            "height": maps[-1].shape[1], "width": maps[-1].shape[2],
            "forward_s": _median_seconds(forward, repeats),
            "forward_backward_s": _median_seconds(forward_backward, repeats),
        })
    return rows


def run_bench(repeats=9):
    return bam_grid(repeats) + arf_grid(repeats)


def format_rows(rows):
    header = "block,channels,height,width,forward_s,forward_backward_s"
    lines = [header]
    for r in rows:
        lines.append(f"{r['block']},{r['channels']},{r['height']},"
                     f"{r['width']},{r['forward_s']:.6e},"
                     f"{r['forward_backward_s']:.6e}")
    return "\n".join(lines) + "\n"
