"""Closed-form benchmarks: Riccati paths and optimal values by hand vs solver.

The scalar benchmarks are designed so every quantity has a pencil-and-paper
closed form.  This script walks through them:

* S1 (zero data): Sigma(t) = 1 - t, optimal value 0.
* S2 (g = 1, terminal c): optimal control u = 1, value 2c - 1.
* S4 (R11 = 1, terminal W(T)): value log 2.
* S5 (R11 = -1/2, same terminal): an indefinite weight with a *negative*
  optimal value -log 2; the problem is still uniformly convex.
"""

import numpy as np

import bslq

for name, expected in [("S1", 0.0), ("S2", 1.0), ("S4", np.log(2)), ("S5", -np.log(2))]:
    spec = bslq.builtin_scenario(name)
    value, reduced, sigma, bsde = bslq.solve_value(spec)
    t = spec.grid.nodes
    sig_err = np.max(np.abs(sigma.Sigma[:, 0, 0] - (1.0 - t)))
    print(f"{name}: value = {value:+.8f}   (closed form {expected:+.8f}, "
          f"|diff| = {abs(value - expected):.1e})")
    print(f"     max |Sigma(t) - (1 - t)| = {sig_err:.2e}")

print()
print("S4 in detail: R(Sigma)(t) = 1 + Sigma(t) = 2 - t, beta = 1, and the")
print("value integrand R11 R(Sigma)^{-1} beta^2 integrates to log 2:")
spec = bslq.builtin_scenario("S4")
_, _, sigma, bsde = bslq.solve_value(spec)
t = spec.grid.nodes
print("  R(Sigma) at t = 0, 0.5, 1:", sigma.RofSigma[[0, 100, 200], 0, 0])
print("  beta at t = 0, 0.5, 1:   ", bsde.beta.a.node_values()[[0, 100, 200], 0])

print()
print("The terminal-value parameter of S2 scales the value as 2c - 1:")
for c in (0.5, 1.0, 2.0):
    value = bslq.solve_value(bslq.builtin_scenario("S2", c=c))[0]
    print(f"  c = {c}: value = {value:+.6f}")
