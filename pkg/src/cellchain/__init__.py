"""Event-driven chain of noisy billiard cells with rare elastic collisions,
with analytic single-particle kernel and energy-exchange jump-process
oracles."""

from .core import (
    ConfigError,
    EnergyPath,
    GibbsRejectionError,
    MicroState,
    SystemConfig,
    Violation,
    config_from_file,
    make_stream,
    sample_gibbs_conditioned,
    validate_state,
)
from .limit_process import (
    LimitChain,
    SsepReport,
    StateSpaceCapError,
    build_chain,
    gillespie_run,
    rate_gamma,
    solve_distribution,
    ssep_generator_check,
)
from .microsim import (
    CollisionLog,
    Event,
    EventKind,
    RunResult,
    SimulationConsistencyError,
    StaleEventError,
    apply_event,
    count_collisions,
    next_event,
    run,
    run_replicas,
    single_particle_endpoints,
)
from .stats import (
    EmpiricalDistribution,
    InsufficientDataError,
    RateEstimate,
    RecollisionReport,
    collision_intensity_estimate,
    empirical_distribution,
    jump_count_tail,
    recollision_stats,
    swap_rate_estimate,
    tv_ci_halfwidth,
    tv_distance,
)
from .telegraph_kernel import (
    KernelQuery,
    KernelValue,
    MixingCertificate,
    deterministic_flow,
    doeblin_scan,
    kernel_f,
    kernel_total_mass,
    mixing_decay,
    project_energy_marginal,
    rho_n,
    smooth_density_grid,
)

__version__ = "0.1.0"
