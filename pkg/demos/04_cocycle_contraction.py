"""
Cocycle fixed points and contraction
====================================

The deformed products along a path pull every state towards a random fixed
point Z.  We compute Z, check the cocycle relation, and estimate how fast
the products contract.
"""

import numpy as np

from qldp import cocycle as cc
from qldp import environment as env
from qldp import fixtures as fx
from qldp.matlin import proj_distance, random_density

model = fx.depolarizing_pair()
path = env.sample_path(model, 0, seed=5)

for a in (0.0, 1.0):
    z = cc.z_forward(model, path, a, 0)
    print(f"alpha={a}: Z_0 eigenvalues {np.round(np.linalg.eigvalsh(z.z), 4)}, "
          f"cocycle residual {z.residual:.1e}, {z.iterations_used} doublings")

# every starting state ends up within the contraction coefficient of Z
z = cc.z_forward(model, path, 0.5, 0, residual=False).z
for N in (2, 4, 8, 16):
    B = cc.backward_product(model, path, 0.5, 0, N)
    c = cc.contraction_coeff(B).value
    Y = B.map(random_density(2, "pure", seed=N))
    print(f"N={N:2d}: c = {c:.3e}, d(image, Z) = {proj_distance(Y / np.trace(Y).real, z):.3e}")

print("\n n   c_n^(1/n)")
for n, k in cc.kappa_estimate(model, path, 0.5, 6):
    print(f"{n:2d}   {k:.4f}")
