"""Three independent routes to the optimal value, cross-checked.

1. The closed-form value by deterministic quadrature (no sampling noise).
2. Monte-Carlo evaluation of the cost at the synthesized optimal control.
3. A brute-force oracle: the problem discretised on a binomial tree and
   solved exactly as a finite-dimensional quadratic program.

The general-case benchmark SX carries cross weights R12 = R21^T != 0, so it
exercises the cross-term elimination; the tree values converge to the
formula at first order in dt and a Richardson extrapolation lands within
1e-2 of it.
"""

import numpy as np

import bslq

for name in ("S4", "SX"):
    spec = bslq.builtin_scenario(name)
    value, reduced, sigma, bsde = bslq.solve_value(spec)
    print(f"--- {name} ---")
    print(f"formula value:      {value:.6f}")

    brownian = bslq.BrownianEnsemble.generate(42, 10000, spec.grid)
    synth = bslq.synthesize_optimal(spec, brownian)
    mc = bslq.evaluate_cost(spec, synth.ensemble)
    print(f"Monte-Carlo value:  {mc.estimate:.6f} +- {mc.stderr:.6f} "
          f"(gap {abs(value - mc.estimate):.4f})")

    comp = bslq.compare(value, spec, steps=(4, 6, 8, 10))
    for N, v, gap in zip(comp.steps, comp.values, comp.gaps):
        print(f"tree N = {N:2d}:        {v:.6f} (gap {gap:.4f})")
    print(f"Richardson limit:   {comp.extrapolated:.6f} "
          f"(gap {comp.extrapolated_gap:.5f}, monotone: {comp.monotone})")

    # the quadratic expansion around the synthesized optimum
    rng = np.random.Generator(np.random.Philox(key=3))
    v_pert = bslq.random_affine_control(spec.grid, spec.m, rng)
    rep = bslq.perturbation_identity(spec, synth.ensemble, v_pert,
                                     [-1.0, -0.1, 0.1, 1.0])
    print("perturbation table (eps, J(u*+eps v)-J(u*), eps^2 J0(v), defect):")
    for row in rep.rows:
        print(f"  {row.eps:+4.1f}   {row.cost_diff:+.6f}   "
              f"{row.quadratic_term:+.6f}   {row.defect:+.6f}")
    print()
