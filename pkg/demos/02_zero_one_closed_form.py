"""
The 0/1 certificate needs no iterations
=======================================

For a linear head the 0/1 dual is a convex piecewise-linear function of gamma
whose breakpoints are 1/d_i^2 (d_i = distance to the decision boundary).
The minimum sits on a breakpoint, so it is found exactly.  Here we compare it
with a brute-force grid over gamma.
"""
import numpy as np

from certdg.adversarial import boundary_distances
from certdg.certify import cert_01, zero_one_dual

rng = np.random.default_rng(3)
head = (rng.normal(size=(3, 2)) * 2, rng.normal(size=3) * 0.3)
Z = rng.normal(size=(40, 2)) * 1.5
y = np.argmax(Z @ head[0].T + head[1], axis=1)
dist, _, _ = boundary_distances(head, Z, y)

grid = np.geomspace(1e-6, 1e3, 20_000)
for rho in (0.1, 0.3, 0.6):
    exact = cert_01(head, Z, y, rho).worst_case_loss
    brute = min(zero_one_dual(dist ** 2, rho, g) for g in grid)
    print(f"rho={rho:.1f}: closed form {exact:.6f}   grid {brute:.6f}")

# Once rho^2 reaches the mean squared boundary distance, every point can be
# pushed across and the certificate saturates at 1.
rho_full = np.sqrt(np.mean(dist ** 2))
print("at rho = rms(d):", cert_01(head, Z, y, rho_full).worst_case_loss)
