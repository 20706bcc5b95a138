"""
Lyapunov exponents and the rate function
========================================

Estimate the generating function lambda(alpha) of the outcome weights for a
random environment, compare the three estimators, and turn the profile
into a large-deviation rate function.
"""

import numpy as np

from qldp import environment as env
from qldp import fixtures as fx
from qldp import ldp

model = fx.depolarizing_pair()
path = env.sample_path(model, 0, seed=0)
n = 5000

print(" alpha    norm      trace     fixed-pt")
for a in (-1.0, 0.0, 0.5, 1.0, 2.0):
    nm = ldp.lyapunov_norm(model, path, a, n).value
    tr = ldp.lyapunov_trace(model, path, a, np.eye(2) / 2, n).value
    fp = ldp.lyapunov_fixedpoint(model, path, a, n).value
    print(f"{a:6.2f} {nm:9.5f} {tr:9.5f} {fp:9.5f}")

# the slope at zero is minus the mean weight per step
der = ldp.lyapunov_derivative(model, path, 0.0, n)
print(f"\nlambda'(0) = {der.value:.4f} +- {der.std_error:.4f}")

# rate function from a profile over disorder replicas
alphas = np.round(np.arange(-2.0, 2.0001, 0.1), 12)
prof = ldp.rate_function(model, alphas, 2000, n_replicas=4, seed=1)
print("\n   s     I(s)")
for s in np.linspace(-0.3, 0.3, 7):
    print(f"{s:6.2f} {prof.rate(s)[0]:8.4f}")

# the classical d = 1 reduction has a closed form to compare against
cl = fx.classical_d1()
p = ldp.lambda_profile(cl, np.array([-1.0, 0.5, 2.0]), 10**5, n_replicas=4, seed=0)
print("\nclassical:", np.round(p["lambdas"], 4), "exact:", np.round(fx.classical_lambda([-1.0, 0.5, 2.0]), 4))
