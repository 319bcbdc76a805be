"""
From raw events to network inputs
=================================

An event camera reports ``(t, x, y, p)`` tuples. The tracker never sees
them individually: events are sliced into fixed windows and summed into
signed count frames, or spread over a few temporal bins as a voxel grid.
"""

import numpy as np

from evtrack.events import (
    EventStream,
    aggregate_frame,
    iter_windows,
    normalize_frame,
    parse_event_stream,
    stream_frames,
    voxel_grid,
    window_events,
    write_events,
)

# A handful of events in the CSV layout (t in nanoseconds, polarity as 0/1 or -1/+1)
text = b"t_ns,x,y,p\n1000,2,1,1\n9000,2,1,1\n12000,2,1,0\n31000,0,0,1\n"
stream = parse_event_stream(text, "csv", geometry=(4, 3))
print(stream.events)

# Windows are half-open, so the event at t = 31000 belongs to the second 25 us window
for w in iter_windows(stream, dt=25_000):
    print(w.t0, len(w), aggregate_frame(w).grid.tolist())

# Counts are clipped and scaled to [-1, 1] before they reach the network
print(normalize_frame(np.array([[25, -4, 0]]), clip=10))

# The voxel grid splits each event linearly between the two nearest bin centers
vol = voxel_grid(window_events(stream, 0, 25_000), bins=5)
print(vol[:, 1, 2])

# %%
# Large recordings are read in bounded memory: ``stream_frames`` walks a
# binary file chunk by chunk and yields the same frames as slicing the whole
# stream in memory.

rng = np.random.default_rng(0)
n = 200_000
big = EventStream.from_arrays(
    64, 48, np.sort(rng.integers(0, 10**9, n)), rng.integers(0, 64, n), rng.integers(0, 48, n),
    np.where(rng.random(n) < 0.5, -1, 1),
)
write_events(big, "/tmp/demo_events.evt")
streamed = [g for _, g in stream_frames("/tmp/demo_events.evt", chunk_events=4096)]
direct = [aggregate_frame(w).grid for w in iter_windows(big, 25_000_000)]
print(len(streamed), all(np.array_equal(a, b) for a, b in zip(streamed, direct)))
