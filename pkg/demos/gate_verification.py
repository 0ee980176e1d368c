"""Why the two-sequence gate FoM pins down a (pi/2)_x rotation.

Sequence A applies U, a pi_x pulse and U again and reads |0>; sequence B
applies U twice and reads |1>.  Both populations reach one together only
when U is a pi/2 rotation about x.  This scans rotations about every axis
and prints where both populations are high.
"""

import numpy as np

from nvqoc.protocols import gate_verification_populations
from nvqoc.spin import axis_angle_unitary

pi_x = axis_angle_unitary([np.pi / 2, 0, 0])
angles = np.linspace(0, np.pi, 181)
axes = {"x": [1, 0, 0], "y": [0, 1, 0], "z": [0, 0, 1], "(x+z)/sqrt2": [1 / np.sqrt(2), 0, 1 / np.sqrt(2)]}

for name, axis in axes.items():
    c = angles[:, None] * np.asarray(axis)
    p0_a, p1_b = gate_verification_populations(axis_angle_unitary(c), pi_x)
    both = np.minimum(p0_a, p1_b)
    k = int(np.argmax(both))
    print(f"axis {name:12s} best min(P_A, P_B) = {both[k]:.4f} at |c| = {angles[k]:.4f} rad")
print(f"pi/4 = {np.pi / 4:.4f} rad: c = pi/4 about x is the (pi/2)_x gate")
