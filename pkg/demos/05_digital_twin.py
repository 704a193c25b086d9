"""The twin learns what the camera will see next, then emulates slots.

The predictor starts from "the next slot looks like this one" and is fitted
on the real experience stream; artificial experiences replay stored states
under random actions against the predicted view.
"""

import numpy as np

from maptwin.agent.amm import random_scores
from maptwin.env import MapEnv, desk_preset
from maptwin.scene import jaccard
from maptwin.twin import (DigitalTwin, Experience, Kind, generate_artificial, predict_points,
                          train_predictor)

cfg = desk_preset(seed=2)
env = MapEnv(cfg)
twin = DigitalTwin.create(cfg, np.random.default_rng(0))
rng = np.random.default_rng(1)

s = env.reset()
for _ in range(30):
    a, sc = random_scores(s, rng)
    s2, r, _ = env.step(a)
    twin.real.store(Experience(s, a, r, s2, Kind.REAL, sc))
    s = s2

losses = train_predictor(twin.predictor, twin.real, 60, twin.lr, 16, rng)
print(f"predictor loss {losses[0]:.4f} -> {losses[-1]:.4f}")

last = twin.real[len(twin.real) - 2]
truth = frozenset().union(*(f.points for f in last.next_state.batch.frames))
guess = frozenset().union(*predict_points(twin.predictor, last.state.history, cfg.frames_per_slot, 1.0, rng))
print(f"predicted next view: {len(guess)} points, jaccard with the real one {jaccard(guess, truth):.2f}")

made = generate_artificial(twin.artificial, twin.real, random_scores, 20, twin.predictor, rng)
real_r = np.mean([e.reward for e in twin.real])
art_r = np.mean([e.reward for e in twin.artificial])
print(f"{made} artificial experiences, mean reward {art_r:.1f} (real {real_r:.1f})")
