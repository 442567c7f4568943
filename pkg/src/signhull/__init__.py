"""Convexification toolkit for quadratic programs with sign-indicator
penalties, and SVM relaxations built on it.

Layout:

- :mod:`signhull.hull`: closed convex hulls of rank-one quadratic
  epigraphs with sign indicators, their cone reformulations, the
  separable penalty envelope, and a brute-force optimization oracle.
- :mod:`signhull.conic`: solver-agnostic conic program representation,
  validation, residuals, and exact cone-lowering passes.
- :mod:`signhull.solve`: interior-point solve contract plus exact
  subset-enumeration SVM oracles.
- :mod:`signhull.relax`: lifted (x, X, z) relaxations: copositive
  certificate matrices, grid checks, semidefinite extensions, and the
  big-M mixed-integer model.
- :mod:`signhull.svm`: datasets, relaxation/baseline model builders,
  estimators, and evaluation metrics.
- :mod:`signhull.datagen`: seeded synthetic Gaussian instances with
  outlier contamination, label flips, splits, and CSV round-trip.
- :mod:`signhull.cbf`: deterministic conic-benchmark text export and
  import for continuous conic programs.
- :mod:`signhull.mps`: free-form MPS export for mixed-integer
  quadratic models, plus a reader for verification.
- :mod:`signhull.harness`: benchmark and cross-validation experiment
  runners with deterministic CSV reporting.
- :mod:`signhull.plots`: optional static figures (dataset scatters,
  loss curves).
- :mod:`signhull.cli`: the ``signhull`` command-line interface.
- :mod:`signhull.errors`: the exception hierarchy and exit-code map.
"""

__version__ = "0.1.0"
