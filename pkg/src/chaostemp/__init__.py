"""Numerical lab for temperature chaos in mixed even p-spin models.

Modules: ``mixture`` (xi, theta), ``measure`` (Parisi step measures),
``fields`` (external field laws), ``pde`` (Cole-Hopf Parisi PDE solver),
``functional`` (Parisi and coupled functionals, optimizer, strict gap),
``stochastic`` (controlled SDE checks), ``gibbs`` (disorder, exact and
parallel-tempering Gibbs ensembles), ``diagnostics`` (overlap statistics,
Ghirlanda-Guerra residuals, invariance, clustering), ``acceptance`` and ``cli``.
"""
from .fields import FieldSpec
from .measure import ParisiMeasure
from .mixture import MixtureSpec

__all__ = ["FieldSpec", "MixtureSpec", "ParisiMeasure"]
__version__ = "0.1.0"
