"""Physical constants and the FDD band-n3 frequency plan used throughout."""

C0 = 299_792_458.0      # speed of light, m/s
ETA0 = 376.730          # free-space impedance, ohm

# Band-n3 carrier-aggregation plan: two 5-MHz downlink carriers whose
# third-order product falls into the uplink band.
LOW_CC_HZ = 1_819.0e6
HIGH_CC_HZ = 1_866.5e6
TX_CENTER_HZ = 0.5 * (LOW_CC_HZ + HIGH_CC_HZ)      # 1842.75 MHz
RX_CENTER_HZ = 2.0 * LOW_CC_HZ - HIGH_CC_HZ        # 1771.5 MHz

BASE_RATE_HZ = 7.68e6
OVERSAMPLE = 16
RF_RATE_HZ = BASE_RATE_HZ * OVERSAMPLE             # 122.88 MHz


def db(x):
    """Linear power ratio to dB."""
    import numpy as np
    return 10.0 * np.log10(x)


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0) * 1e-3
