"""One trajectory, five ways of managing the map.

LFF keeps the newest keyframes, PU samples the slot evenly, random is a
sanity floor, and greedy is allowed to peek at next slot's keyframes.
Every action passes through the constraint monitor.
"""

import numpy as np

from maptwin.env import ConstraintMonitor, MapEnv, desk_preset
from maptwin.harness import rollout, scheme_policy

cfg = desk_preset(seed=4)
for scheme in ("lff", "pu", "random", "greedy"):
    env = MapEnv(cfg)
    mon = ConstraintMonitor()
    log = []
    rewards = rollout(env, scheme_policy(scheme, env, np.random.default_rng(0)), 21, mon, log)
    uploads = np.mean([row["upload"] for row in log])
    print(f"{scheme:7s} mean uncertainty {-np.mean(rewards):9.2f}   uploads/slot {uploads:4.1f}   "
          f"violations {mon.violations}/{mon.checked}")
