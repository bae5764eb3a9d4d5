"""Divide-and-conquer and low-rank update solvers for algebraic Riccati
equations and unilateral quadratic matrix equations with HODLR coefficients."""

from .bench import BenchRow, ProblemSpec, run_bench
from .care import CareCorrectionProblem, CorrectionOperator, next_shift, rksm_care
from .dac import (DacConfig, dac_care, dac_gcare, dac_uqme, update_care_solution,
                  update_uqme_solution)
from .dense import (SpectralSplit, cyclic_reduction, dense_uqme_oracle, newton_defect_correction,
                    sda_nare, solve_dense_care, solve_dense_gcare, spectral_split_check)
from .errors import SolverError
from .hodlr import HodlrLu, HodlrMatrix, norm2_est
from .lowrank import (GenLowRank, SymLowRank, assemble_care_rhs, assemble_gcare_rhs,
                      assemble_uqme_rhs, compress_gen, compress_sym)
from .problems import (CareProblem, UqmeProblem, care_residual, gen_care_ex1, gen_care_ex2,
                       gen_dqbd, gen_gcare_ex3, gen_mass_spring, uqme_residual)
from .report import SolveReport
from .uqme import UqmeCorrectionProblem, UqmeOperators, ek_uqme_correction

__all__ = [
    "BenchRow", "CareCorrectionProblem", "CareProblem", "CorrectionOperator", "DacConfig",
    "GenLowRank", "HodlrLu", "HodlrMatrix", "ProblemSpec", "SolveReport", "SolverError",
    "SpectralSplit", "SymLowRank", "UqmeCorrectionProblem", "UqmeOperators", "UqmeProblem",
    "assemble_care_rhs", "assemble_gcare_rhs", "assemble_uqme_rhs", "care_residual",
    "compress_gen", "compress_sym", "cyclic_reduction", "dac_care", "dac_gcare", "dac_uqme",
    "dense_uqme_oracle", "ek_uqme_correction", "gen_care_ex1", "gen_care_ex2", "gen_dqbd",
    "gen_gcare_ex3", "gen_mass_spring", "newton_defect_correction", "next_shift", "norm2_est",
    "rksm_care", "run_bench", "sda_nare", "solve_dense_care", "solve_dense_gcare",
    "spectral_split_check", "update_care_solution", "update_uqme_solution", "uqme_residual",
]
