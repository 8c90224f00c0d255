"""bregkit: Bregman distances, variational regularization and entropy methods.

Submodules
----------
convex        convex functionals, subgradients, conjugates, Bregman distances
operators     dense linear operators, sign-constrained least squares, CSV I/O
variational   regularized least-squares solvers, error identities, rate studies
bregman_iter  Bregman iteration with discrepancy stopping
iss           exact l1 inverse scale space flow and spectral filtering
fokker_planck 1-D Fokker-Planck with relative-entropy tracking
galerkin      P1 p-Laplace solver and the Bregman projection check
entropic_ot   log-domain Sinkhorn, brute-force assignment oracle
uq            Monte-Carlo check of the expected Bregman error bound
cli           command-line front end
"""

__version__ = "0.1.0"

from .errors import BregkitError  # noqa: E402,F401
