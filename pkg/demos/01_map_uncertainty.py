"""How the co-visibility graph scores a map.

Frames are point sets; two frames share an edge weighted by how many points
they both see.  The uncertainty of a map is minus six times the log of its
weighted spanning-tree count (plus a scale term), so denser and better
connected maps score lower.
"""

import math

from maptwin.covis import (CovisibilityGraph, Frame, UncertaintyParams, add_frame, spanning_tree_weight,
                           uncertainty, uncertainty_direct)

# three frames on a desk: 0 and 1 overlap heavily, 2 only touches 1
frames = [Frame(0, 0, range(0, 40)), Frame(1, 0, range(25, 70)), Frame(2, 0, range(66, 100))]
g = CovisibilityGraph.from_frames(frames)
print("edges:", g.edges)                        # {(0, 1): 15, (1, 2): 4}
print("spanning-tree weight:", spanning_tree_weight(g))
print("u(G) =", round(uncertainty(g), 4), "=  -6 ln 60 =", round(-6 * math.log(60), 4))

# the 6-DoF scale kappa enters once per non-anchor frame
for kappa in (0.5, 1.0, 2.0):
    p = UncertaintyParams(kappa)
    print(f"kappa={kappa}: factored {uncertainty(g, p):9.4f}   explicit Kronecker {uncertainty_direct(g, p):9.4f}")

# a frame that sees points of both ends closes a cycle and helps a lot
closer = add_frame(g, Frame(3, 1, list(range(0, 10)) + list(range(90, 100))))
print("with a loop-closing frame:", round(uncertainty(closer), 4))

# a frame hanging off a single shared point multiplies the tree count by one:
# the map grows, the uncertainty does not move
leaf = add_frame(g, Frame(4, 1, [99, 500, 501]))
print("with a one-point leaf:   ", round(uncertainty(leaf), 4), "(unchanged)")

# disconnected maps are flagged with +inf rather than an error
print("two strangers:", uncertainty(CovisibilityGraph.from_frames([Frame(0, 0, {1}), Frame(1, 0, {2})])))
