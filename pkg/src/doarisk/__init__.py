"""doarisk: multi-speaker DOA estimation with risk-controlled uncertainty sets.

Simulated reverberant scenes are mapped to steered-response-power surfaces;
iterative peak picking estimates source count and directions; flood-fill
regions around each peak are calibrated so miscoverage / missed-detection
risks stay below user targets with distribution-free guarantees.
"""

from .scene import (
    Doa,
    MicArray,
    MultichannelSignal,
    SceneSpec,
    add_noise,
    angular_distance,
    doa_unit_vector,
    pseudo_spherical_array,
    render_scene,
    simulate_rir,
    speech_like_excitation,
    synthesize_scene,
)
from .spectral import PairCrossSpectrum, StftTensor, cross_spectrum_phat, mic_pairs, stft
from .srp import (
    DoaGrid,
    LikelihoodMap,
    MapRecord,
    SteeringTable,
    expected_tdoa,
    export_map_sequence,
    import_map_sequence,
    normalize_map,
    srp_map,
)
from .regions import (
    PredictionRegion,
    covers,
    grow_region,
    region_area_fraction,
    region_curves,
    snap_to_grid,
)
from .detect import (
    DetectionTrace,
    estimate_count,
    iterative_detect,
    match_greedy,
    suppress_peak,
)
from .losses import (
    CalibrationSample,
    ConfigGrid,
    ConfigVector,
    CurveStack,
    build_sample_curves,
    losses_known,
    losses_unknown,
)
from .riskctl import (
    TestingOutcome,
    aggregate_pvalue,
    binom_pvalue,
    bonferroni_reject,
    crc_select,
    fixed_sequence_reject,
    pareto_front_mask,
    pareto_testing,
    pareto_testing_known,
    select_operating_point,
    shift_normalize,
    wsr_pvalue,
)
from .harness import ExperimentPlan, RoomSpec, TrialReport, generate_dataset, run_trials

__version__ = "0.1.0"
