"""Simulation and verification tools for random dynamical systems on the 2-torus."""
from .noise import NoiseLaw, NoisePath
from .systems import (DissipativeCat, LinearCat, MapFamily, ShearCat, Translations, get_system,
                      system_names, torus_distance, wrap)
from .cocycle import compose_backward, compose_forward, compose_pullback
from .tangent import (ChartFrame, ChartParams, ExponentReport, build_chart_frame, estimate_Ecs,
                      estimate_Eu, lyapunov_qr, splitting)
from .transport import (ParticleEnsemble, UlamDensity, estimate_stationary, pullback_pushforward,
                        sample_from_density, weak_distance)
from .manifolds import (LeafStack, TransformSchedule, UGraph, build_u_stack, graph_transform_step,
                        iterate_slanted_transform, local_unstable_manifold, switch_axes)
from .srb import (DensityReport, ExperimentConfig, NestedPartition, SourceTarget,
                  build_nested_partition, build_wn_stack, conditional_density_check,
                  disintegrate_source, entropy_consistency, find_source_target,
                  predicted_leaf_density, qualify_uniform, run_srb_experiment)

__version__ = "0.1.0"
