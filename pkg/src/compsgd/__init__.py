"""Distributed SGD with lossy gradient compression, simulated at desk scale.

Building blocks: contractive compressors and unbiased quantizers
(:mod:`compsgd.compressors`), synthetic heterogeneous objectives
(:mod:`compsgd.problems`), the training schemes themselves
(:mod:`compsgd.algorithms`), lemma-driven stepsize tuning
(:mod:`compsgd.tuning`), and experiment orchestration plus rate/plateau
verification (:mod:`compsgd.harness`).
"""

from .algorithms import (AlgoConfig, OutputSelection, Trajectory, run,
                         run_averaged_single_node, run_defsgd, run_defsgd_bias,
                         run_diana, run_dqsgd, run_dsgd, run_ecsgd_diana,
                         run_linear_sync, select_output)
from .compressors import (CompressorOp, MomentReport, SketchBasis,
                          estimate_moments, make_identity, make_rand_k_biased,
                          make_rand_k_unbiased, make_sketch, make_top_k,
                          parse_compressor, rand_k_biased, rand_k_unbiased,
                          rescale_to_compressor, sketch, top_k)
from .errors import (ConfigError, InvariantViolation, NoUniqueOptimumError,
                     NotInLinearRegimeError, ValidationError)
from .harness import (ExperimentConfig, ExperimentResult, RateReport,
                      ScalingReport, compare_scaling, detect_plateau,
                      fit_linear_rate, load_experiment_config,
                      parse_experiment_config, run_experiment)
from .metrics import Trace, read_trace_csv, write_trace_csv
from .problems import (DissimilarityReport, ProblemSuite, QuadraticNode,
                       gen_nonconvex_suite, gen_quadratic_suite, load_suite,
                       measure_dissimilarity, oracle_exact, oracle_stochastic,
                       save_suite, solve_optimum)
from .rng import RngStream
from .tuning import (CompressorParams, RecursionConstants, SuiteParams,
                     TunedStepsize, theorem_constants, theorem_stepsize_cap,
                     tune_strongly_convex, tune_sublinear)

__version__ = "0.1.0"
