"""The two-state uplink and what it lets the device send per slot."""

import numpy as np

from maptwin import channel as ch
from maptwin.env import desk_preset

m = desk_preset().channel
for s in ch.ChannelState:
    print(f"{s.name:4s}: {m.rate(s) / 1e6:.0f} Mb/s x {m.slot_seconds:.0f} s / {m.frame_bits / 1e6:.0f} Mb "
          f"-> budget {ch.budget(s, m)} frames")

print("\nratio  p_hl   p_lh   simulated High share (1e5 slots)")
for ratio in (0.2, 0.5, 0.8):
    p_hl, p_lh = ch.sweep_probabilities(ratio)
    sim = ch.simulate(
        ch.ChannelModel(p_hl=p_hl, p_lh=p_lh, frame_bits=m.frame_bits), 100_000, np.random.default_rng(0))
    print(f"{ratio:5.1f}  {p_hl:.2f}   {p_lh:.2f}   {sim.mean():.4f}")
