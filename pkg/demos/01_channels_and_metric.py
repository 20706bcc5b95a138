"""
Channels, instruments and the projective metric
===============================================

Build the two reset channels of the depolarizing-pair fixture, check which
structural properties they have, and watch the projective distance between
two states shrink under the channel.
"""

import numpy as np

from qldp import fixtures as fx
from qldp.channels import compose, is_positivity_improving, is_primitive
from qldp.matlin import proj_distance, random_density, trace_norm

model = fx.depolarizing_pair()
phi1 = model.site_table["phi1"].channel
phi2 = model.site_table["phi2"].channel

# neither channel alone maps every state to a faithful one
print("phi1 positivity improving:", is_positivity_improving(phi1).value)
print("phi2 positivity improving:", is_positivity_improving(phi2).value)
# but the composition does
print("phi2 o phi1 positivity improving:", is_positivity_improving(compose(phi2, phi1)).value)
print("phi1 primitive:", is_primitive(phi1).value)

# distance between two pure states, and between their images
a = random_density(2, "pure", seed=1)
b = random_density(2, "pure", seed=2)
print("\nd(a, b) =", proj_distance(a, b))
X, Y = a, b
for k in range(1, 7):
    X = phi2(phi1(X))
    Y = phi2(phi1(Y))
    print(f"after {k} rounds: d = {proj_distance(X, Y):.3e}   "
          f"trace norm = {trace_norm(X - Y):.3e}")

# the metric is squeezed between trace-norm bounds
Y, Yp = random_density(3, seed=4), random_density(3, seed=5)
t = trace_norm(Y - Yp)
print(f"\n{0.5 * t:.4f} <= d = {proj_distance(Y, Yp):.4f} <= {t / np.linalg.eigvalsh(Yp)[0]:.4f}")
