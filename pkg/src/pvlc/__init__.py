"""Photovoltaic visible-light receiver modelling toolkit."""

from .circuit import (
    OPEN,
    CODATA,
    PhysicalConstants,
    DiodeParams,
    PvStaticParams,
    CapacitanceModel,
    OperatingPoint,
    SmallSignalModel,
    FrequencyResponse,
    NonConductingDiode,
    NoConvergence,
    NotReached,
    diode_current,
    small_signal_resistance,
    parallel_resistance,
    parallel_capacitance,
    solve_operating_point,
    small_signal_at,
    internal_impedance,
    receiver_impedance,
    transfer_dynamic,
    transfer_bias,
    transfer_conventional,
    frequency_response,
    bandwidth_3db,
)
from .fitting import (
    DegenerateSpectrum,
    ImpedanceSpectrum,
    FitResult,
    synthetic_spectrum,
    seed_estimate,
    cnls_fit,
    bode_modulus,
    read_spectrum_csv,
    write_spectrum_csv,
    fit_result_to_dict,
)
from .loadopt import (
    LoadSweepPoint,
    LoadSweepResult,
    loaded_response,
    evaluate_load,
    sweep_load,
    write_sweep_csv,
    read_sweep_csv,
    sweep_summary_dict,
)
from .linksim import (
    LinkConfig,
    LinkResult,
    SyncResult,
    EqResult,
    BitCountMismatch,
    SampleRateTooLow,
    SyncFailed,
    Divergence,
    pam_modulate,
    channel_filter,
    frame_sync,
    lms_equalize,
    run_link,
    find_max_rate,
    calibrate_noise_density,
    link_config_to_dict,
    link_config_from_dict,
    link_result_to_dict,
    write_waveform_csv,
    read_waveform_csv,
)
from .profile import (
    ModuleProfile,
    Anchor,
    CalibrationResult,
    Underdetermined,
    photocurrent,
    open_circuit_model,
    predict_anchor,
    calibrate,
    cdte_module_profile,
    profile_to_dict,
    profile_from_dict,
    save_profile,
    load_profile,
)

__version__ = "0.1.0"
