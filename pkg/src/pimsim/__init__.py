"""pimsim: external passive-intermodulation simulation and cancellation."""

__version__ = "0.1.0"

from .constants import (
    BASE_RATE_HZ,
    C0,
    ETA0,
    HIGH_CC_HZ,
    LOW_CC_HZ,
    OVERSAMPLE,
    RF_RATE_HZ,
    RX_CENTER_HZ,
    TX_CENTER_HZ,
)
from .emcore import (
    ArrayLayout,
    AxisSingularityError,
    DipoleElement,
    FieldVector,
    array_field,
    coupling_matrix,
    coupling_vector,
    dipole_field_cyl,
    element_field,
    feed_current,
    paper_16t16r_layout,
    small_2t2r_layout,
)
from .gmp import GmpModel, GmpTap, apply_gmp
from .pimsource import (
    PimScenario,
    PimSource,
    SimOutput,
    backpropagate,
    excitation,
    normalize_pim,
    propagate_source,
    run_scenario,
)
from .waveform import (
    BasebandSignal,
    CarrierPlan,
    OfdmConfig,
    PrecoderConfig,
    awgn,
    compose_rf,
    extract_band,
    gen_ofdm,
    paper_carrier_plan,
    precode,
    psd,
)
