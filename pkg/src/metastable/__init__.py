"""Sharp transition-time asymptotics for the underdamped Langevin process.

The package predicts the mean metastable transition time of the kinetic
Langevin dynamics on a double-well potential through the closed-form
saddle-spectrum prefactor, and verifies the prediction three independent
ways: Monte Carlo hitting times, quadrature of the capacity and well-mass
integrals, and Lyapunov/spectral identity checks.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
