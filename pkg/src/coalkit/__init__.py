"""coalkit: exchangeable coalescents, random partitions, and branching processes.

Exact formulas (partition probabilities, merger rates, speed functions,
criteria) live alongside stochastic simulators for the same objects, and the
test suite cross-validates one against the other at desk scale.
"""

from .numerics import (
    EXACT_TOL,
    IMPROPER_TOL,
    RNG_ALGORITHM,
    GofReport,
    NumericsError,
    QuadResult,
    RngStream,
    TailIntegral,
    bisect_decreasing,
    chi_square_gof,
    integrate_tail,
    integrate_unit,
    ks_one_sample,
)
from .partitions import (
    Partition,
    PdParams,
    crp_sample,
    ewens_partition_prob,
    ewens_spectrum_prob,
    paintbox_sample,
    partition_stats,
    pd_partition_prob,
)
from .kingman import (
    CoalescentHistory,
    MergeEvent,
    kingman_block_count,
    kingman_marginal_prob,
    simulate_kingman,
    total_branch_length,
)

# Measure constructors stay under coalkit.lambda_coalescent because one of
# them shares its name with the kingman submodule.
from .popmodels import (
    AncestryPath,
    CanningsDiagnostics,
    CanningsSpec,
    DiffusionPath,
    DualityRow,
    GwSpec,
    cannings_diagnostics,
    duality_check,
    gw_cannings,
    gw_cn_prediction,
    gw_generation,
    gw_offspring_sample,
    gw_pmerger_prediction,
    moran_ancestry,
    moran_cannings,
    select_survivors,
    wf_absorption,
    wf_ancestry,
    wf_cannings,
    wf_diffusion,
    wf_moments,
)
from .mutation import (
    MutationMarks,
    SiteSpectrum,
    allele_multiplicity_fraction,
    allelic_partition,
    beta_allele_constant,
    lambda_allele_prediction,
    moran_site_green,
    site_spectrum,
    theta_estimators,
    throw_mutations,
)
from .lambda_coalescent import (
    CdiReport,
    DustReport,
    LambdaMeasure,
    block_counts,
    cdi_test,
    collision_count,
    consistency_max_gap,
    dust_test,
    first_coagulation_observables,
    lambda_bk,
    parse_measure,
    psi,
    rate_summaries,
    simulate_lambda,
    simulate_poisson_construction,
    speed_v,
    sweep_measure,
)
from .spatial import (
    DensitySeries,
    ParticleState,
    SpatialPath,
    TorusConfig,
    arratia_dispersion_test,
    descent_hitting_time,
    descent_time_bound,
    log_star,
    nonreturn_probability,
    origin_escape_count,
    simulate_crw,
    simulate_spatial_lambda,
)
from .csbp import (
    BranchingMechanism,
    CsbpPath,
    GreyReport,
    custom_mechanism,
    extinction_prob,
    feller_ensemble,
    feller_mechanism,
    feller_simulate,
    grey_test,
    lamperti_csbp,
    mechanism_from_lambda,
    neveu_mechanism,
    u_t_lambda,
)

__version__ = "0.1.0"
