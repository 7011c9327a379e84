"""Solve the state equation on a disk and check the shape gradient.

On the disk of radius 4/sqrt(3 pi) the exact state is known, so the L2 error
shows the second-order P1 convergence.  The second part compares the
assembled shape derivative with difference quotients on the square.
"""

import numpy as np

from lipshape import pde
from lipshape.mesh import disk_mesh, refine_congruent, snap_to_circle, unit_square_mesh
from lipshape.problem import LINEAR_BALL_RADIUS, tracking_instance, u_star
from lipshape.shapecalc import finite_difference_check

spec = tracking_instance()

R = LINEAR_BALL_RADIUS
m = disk_mesh(R, 4)
prev = None
print(f"{'triangles':>10} {'L2 error':>12} {'order':>6}")
for level in range(4):
    if level:
        m = snap_to_circle(refine_congruent(m)[0], R)
    err = pde.l2_error(m, pde.solve_state(m, spec), u_star)
    order = "" if prev is None else f"{np.log2(prev / err):6.2f}"
    print(f"{m.n_triangles:10d} {err:12.4e} {order:>6}")
    prev = err

square = unit_square_mesh(1.0, 32)
x = square.vertices
V = 0.25 * np.column_stack([x[:, 0] + x[:, 1] ** 2, x[:, 1] - 0.5 * x[:, 0]])
print()
print(finite_difference_check(square, spec, V).table())
