"""
Perturbing inputs versus perturbing representations
===================================================

Searching over inputs only reaches representations the network can actually
produce, so with the penalty measured in representation space the input
surrogate never exceeds the representation one.  How much smaller is it?
"""
import numpy as np

from certdg import netcore
from certdg.certify import maximize_surrogate_input, surrogate_sup

rng = np.random.default_rng(0)
params = netcore.init_params(2, 2, (16,), 2, rng)
X = rng.normal(size=(200, 2))
y = rng.integers(0, 2, size=200)
Z = netcore.forward_rep(params, X)

for gamma in (0.3, 1.0, 3.0):
    _, phi_in = maximize_surrogate_input(params, X, y, gamma, steps=150, alpha_step=0.02)
    _, phi_rep = surrogate_sup(params.head, Z, y, gamma)
    ratio = np.mean(phi_in) / np.mean(phi_rep)
    print(f"gamma={gamma:.1f}: mean phi input {np.mean(phi_in):.4f}, "
          f"representation {np.mean(phi_rep):.4f} (ratio {ratio:.3f}), "
          f"max excess {np.max(phi_in - phi_rep):.2e}")
