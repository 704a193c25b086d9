"""A synthetic room, a device walking through it, and the trace file format."""

import tempfile
from pathlib import Path

from maptwin.env import desk_preset
from maptwin.harness import generate_trace
from maptwin.scene import jaccard, load_trace, save_trace

cfg = desk_preset(seed=3)
batches = generate_trace(cfg, trajectory_seed=11, slots=4)

for b in batches:
    sizes = [len(f.points) for f in b.frames]
    print(f"slot {b.slot}: {len(b.frames)} frames, {len(b.keyframes)} keyframes, "
          f"points per frame {min(sizes)}..{max(sizes)}")

first, last = batches[0].frames[0].points, batches[-1].frames[-1].points
print(f"overlap between the first and last frame: jaccard {jaccard(first, last):.2f}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "walk.txt"
    save_trace(batches, path, cfg.n_points)
    print(path.read_text().splitlines()[0])
    back, n_points = load_trace(path)
    print("round trip equal:", back == batches, "| n_points", n_points)
