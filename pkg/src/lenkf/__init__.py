"""Local ensemble Kalman filters for joint state and parameter estimation."""
from . import augmented, dynamics, filters, localisation, numkit, obs

__all__ = ["augmented", "dynamics", "filters", "localisation", "numkit", "obs"]
__version__ = "0.1.0"
