"""parreg: numerical diagnostics for parabolic regularity on Lip(1,1/2) graphs."""

from .constants import PipelineConstants, DESK
from .pargeom import (BasePoint, AmbientPoint, ParabolicCube, SurfaceBox, GraphFn,
                      pnorm, pdist_smooth, project_pi, corkscrew, dist_to_graph,
                      surface_measure, lip_seminorm)
from .heatfield import (DomainGrid, FieldGrid, SurfaceCells, BoundaryMeasure,
                        ParabolaRegion, NormalizedGreen, solve_heat,
                        indicator_data, caloric_measure_forward,
                        caloric_measure_adjoint, caloric_measure_mc,
                        green_function, normalized_green, far_field,
                        default_cells, default_kappa)
from .ainfty import (AInftyParams, CellWeight, GoodSet, box_mask, density_k,
                     density_stderr, scale_to_box, reverse_holder_check,
                     ap_duality_check, truncated_maximal, construct_good_set,
                     marcinkiewicz_check, john_stromberg_check)
from .levelset import (LevelSetFamily, DerivativeBundle, RegularizedDistance,
                       SawtoothRegion, StarDomains, WhitneyCube, WhitneyCover,
                       ContourBundle, extract_level_sets, default_ladder,
                       level_set_derivatives, square_function_integral,
                       green_square_integral, whitney_decompose,
                       regularized_distance, pou_accumulate, sawtooth_region,
                       check_h_comparability, contour_functions,
                       littlewood_paley_check, parabolic_mollify,
                       save_family, load_family, save_distance,
                       load_distance, cover_to_json, cover_from_json)

__version__ = "0.1.0"
