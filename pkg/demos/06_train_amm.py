"""Training the map manager with and without artificial experience.

Same scene, same walk, same seed: N=0 is the plain model-free learner, N=5
adds five twin-batch updates after every real slot.  A short run; the full
convergence study is ``maptwin converge``.
"""

import numpy as np

from maptwin.agent.amm import AmmConfig, amm_train, episode_curve
from maptwin.env import MapEnv, desk_preset
from maptwin.twin import DigitalTwin

cfg = desk_preset(seed=7, episode_slots=20)
for n in (0, 5):
    twin = DigitalTwin.create(cfg, np.random.default_rng(0))
    _, log = amm_train(MapEnv(cfg), twin, AmmConfig(n_artificial=n, episodes=4, gamma=0.2, seed=1))
    curve = episode_curve(log)
    print(f"N={n}: mean reward per episode", " ".join(f"{v:6.1f}" for v in curve),
          f"| artificial stored {len(twin.artificial)}")
