"""Small hand-built states shared by the env and agent tests."""

from maptwin import channel as ch
from maptwin.covis import CovisibilityGraph, Frame
from maptwin.env import EnvConfig, EnvState, SlotRecord
from maptwin.scene import FrameBatch


def frames(spec, slot=0, start=0, keyframes=True):
    """``spec`` is a list of point sets; ids are assigned from ``start``."""
    return [Frame(start + i, slot, pts, keyframes) for i, pts in enumerate(spec)]


def make_state(stored, batch, budget=3, capacity=4, slot=1, channel=ch.ChannelState.HIGH,
               penalty=100.0, **cfg):
    """State whose map holds ``stored`` frames and whose current batch is ``batch``."""
    conf = EnvConfig(capacity=capacity, frames_per_slot=max(len(batch), 1), **cfg)
    g = CovisibilityGraph.from_frames(stored)
    fb = FrameBatch(slot, tuple(batch))
    nxt = 1 + max([f.frame_id for f in list(stored) + list(batch)], default=-1)
    return EnvState(slot, (SlotRecord(g, fb, channel),), budget, penalty, conf, nxt)
