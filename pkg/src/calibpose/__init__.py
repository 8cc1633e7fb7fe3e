"""Calibrated two-view and multi-view pose estimation."""
from .errors import (BootstrapFailure, CheiralityError, DegenerateBaselineError,
                     DegenerateConfigurationError, DegenerateInputError, IllConditionedError,
                     InsufficientDataError, NoConsensusError, NoSolutionError, PoseError,
                     RegistrationFailure)
from .geometry import (Pose, decompose_essential, essential_from_pose, reprojection_error,
                       rotation_error, sampson_distance, translation_angular_error, triangulate)
from .polynomial import polynomial_real_roots
from .ransac import RansacConfig, RansacResult, ransac_essential, ransac_p3p, required_iterations
from .solvers import five_point_nister, p3p_finsterwalder, project_to_essential, seven_point

__version__ = "0.1.0"
