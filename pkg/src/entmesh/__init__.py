"""entmesh: simulator and software-defined control plane for multihop
entanglement-distribution networks."""

__version__ = "0.1.0"

from .grid import (  # noqa: F401
    AllocationPlan,
    FrequencySlot,
    GridConstants,
    Role,
    conjugate,
    itu_channel_label,
    slot_center,
    validate_plan,
)
from .photonics import (  # noqa: F401
    DetectorModel,
    RateReport,
    SourceModel,
    channel_pair_rate,
    coincidence_rates,
    effective_state,
    sample_counts,
    singles_rate,
)
from .topology import (  # noqa: F401
    Blocked,
    Lightpath,
    NetworkState,
    Topology,
    build_topology,
    enumerate_routes,
    fail_span,
    load_topology,
    path_loss_db,
    resolve_lightpath,
    restore_span,
    set_device_state,
)
from .tomography import (  # noqa: F401
    MeasurementSetting,
    PosteriorSummary,
    TomographyDataset,
    bayesian_estimate,
    basis_vector,
    fidelity,
    log_negativity,
    projection_probability,
    target_state,
    werner_state,
)
from .timetag import (  # noqa: F401
    CoincidenceConfig,
    TimestampStream,
    calibrate_delay,
    count_coincidences,
    generate_pair_streams,
)
from .control import (  # noqa: F401
    HealthPolicy,
    LinkStatus,
    NoRouteAvailable,
    RecoveryPlan,
    assess,
    controller_cycle,
    diagnose,
    execute_and_verify,
    plan_recovery,
)
from .harness import (  # noqa: F401
    RunReport,
    Scenario,
    load_scenario,
    packaged_fixture_path,
    report_render,
    run,
    validate,
)
