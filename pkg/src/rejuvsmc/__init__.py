"""Particle Gibbs smoothers with ancestor sampling and particle rejuvenation
for (nearly) degenerate and simulator-only state-space models."""

from .abc_kernel import AbcKernel, abc_ancestor_step, abc_kernel_logeval, pgas_abc_sweep
from .bridge import (
    ControllabilityData,
    GaussianBridge,
    GaussianDensity,
    LinearGaussianDynamics,
    NotControllable,
    NumericalRankFailure,
    controllability_index,
    controllability_matrix,
    ell_step_marginal,
    ffbs_sample,
    kalman_bridge_logpdf,
    kalman_bridge_sample,
    kalman_filter,
    rts_smoother,
)
from .core import (
    AllWeightsDegenerate,
    IntractableTransition,
    ParticleSystem,
    TargetSequence,
    WeightBoundMonitor,
    WeightBoundWarning,
    categorical_draw,
    effective_sample_size,
    make_rng,
    normalize_log_weights,
    smc_init,
    smc_step,
    split_rng,
    trace_ancestry,
    weight_function,
)
from .models import (
    ArSsmSpec,
    LgssmSpec,
    Lorenz63Spec,
    StateSpaceModel,
    TrackingSpec,
    ar_observation_logdensity,
    kalman_smoother_oracle,
    lorenz_transition_sample,
    paper_ar5,
    scalar_lgssm,
    simulate_data,
    tracking_theta_conditional,
)
from .rejuvenation import (
    CisRejuvenationKernel,
    ForwardPriorWindowProposal,
    IdentityRejuvenationKernel,
    KalmanBridgeWindowProposal,
    MhRejuvenationKernel,
    PlanOutOfRange,
    RejuvenationContext,
    RejuvenationPlan,
    cis_rejuvenation_kernel,
    identity_kernel,
    mh_rejuvenation_kernel,
    partial_collapse_logtarget,
)
from .sweeps import (
    ChainRecord,
    GibbsRecord,
    PimhState,
    SweepResult,
    ancestor_sampling_logweights,
    extended_target_logpdf,
    gibbs_loop,
    pg_sweep,
    pgas_rejuvenated_sweep,
    pgas_sweep,
    pimh_sweep,
    run_chain,
)
from .targets import SsmTarget

__version__ = "0.1.0"
