"""Unit conversions.

Internal system: feet for head/length, cubic feet per second for flow,
seconds for time.  GPM and inches appear only at I/O boundaries.
"""

GPM_TO_CFS = 0.0022280093
CFS_TO_GPM = 1.0 / GPM_TO_CFS
INCH_TO_FT = 1.0 / 12.0
FT3_TO_GAL = 7.480519480519481

# SI factors for pump power accounting
CFS_TO_M3S = 0.028316846592
FT_TO_M = 0.3048
WATER_DENSITY = 1000.0  # kg/m^3
GRAVITY = 9.80665  # m/s^2
W_TO_KW = 1e-3


def gpm_to_cfs(q: float) -> float:
    return q * GPM_TO_CFS


def cfs_to_gpm(q: float) -> float:
    return q * CFS_TO_GPM


def pump_power_kw(flow_cfs: float, head_gain_ft: float, efficiency: float) -> float:
    """Hydraulic power drawn by a pump moving flow against a head gain."""
    q_si = flow_cfs * CFS_TO_M3S
    h_si = head_gain_ft * FT_TO_M
    return WATER_DENSITY * GRAVITY * q_si * h_si / efficiency * W_TO_KW
