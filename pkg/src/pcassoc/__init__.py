"""Principal-component association tests for multiple correlated phenotypes.

Given per-phenotype GWAS summary Z-scores with null correlation Sigma, this
package provides the single-PC tests, their linear, nonlinear, quadratic and
omnibus combinations with analytic p-values, the matching power analysis and
eigen closed forms, a reproducible simulation harness, and a batch CLI for
genome-wide panels.
"""

from .assoc import (
    TestContext,
    minp_univariate,
    oracle_test,
    pcaq,
    pcfisher,
    pclc,
    pcminp,
    pco,
    pcq,
    single_pc_test,
)
from .battery import COMPONENT_TESTS, QUAD_TESTS, TestBattery, estimate_rx
from .chisq import (
    ChiSquareMixture,
    MixtureSpec,
    chisq_mix_sf,
    chisq_sf,
    nc_chisq_sf,
    normal_cdf,
    normal_quantile,
)
from .errors import AccuracyError, DataError, NumericalError, PcassocError
from .model import (
    CorrelationMatrix,
    EigenSystem,
    PrincipalAngles,
    SignalVector,
    TestReport,
    ZVector,
    principal_angles,
    project_pcs,
    read_correlation,
    spectral_decompose,
    write_correlation,
)
from .mvn import MvnConfig, RectProblem, mvn_rect_prob, mvn_sample
from .power import (
    BlockEigenReport,
    BoundaryCurve,
    PowerQuery,
    block_exchangeable_eigensystem,
    exchangeable_eigensystem,
    oracle_power,
    pcfisher_power,
    pclc_optimal_angles,
    pclc_power,
    pcminp_power,
    pcminp_power_bounds,
    power_curve_polar,
    power_quadratic,
    power_single_pc,
    rejection_boundary_2d,
)
from .seeds import Seed
from .simulate import (
    ResultTable,
    ScenarioSpec,
    power_table,
    random_correlation,
    scenario,
    scenario_registry,
    type1_table,
)

__version__ = "0.1.0"
