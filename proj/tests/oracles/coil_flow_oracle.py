#!/usr/bin/env python3
"""Standalone counterflow e-NTU coil oracle.

Solves the smallest chilled-water flow delivering the airside duty of cooling
return air (35 C, w = 0.010) to a 20 C supply setpoint at 50 kg/s airflow and
7 C water, UA = 260 kW/K, with condensation capped at saturation over the
coil surface. Independent of the C++ implementation: straight formula
transcription plus scipy's Brent root finder. The printed flow is frozen into
tests/test_plant.cpp.
"""

import math

from scipy.optimize import brentq

C0, C1, C2 = 0.61094, 17.625, 243.04  # Magnus, kPa / - / degC
CP_WATER = 4.186                       # kJ/(kg K)
P = 101.325                            # kPa


def psat(t):
    return C0 * math.exp(C1 * t / (t + C2))


def w_sat(t):
    p = psat(t)
    return 0.622 * p / (P - p)


def enthalpy(t, w):
    return 1.006 * t + w * (2501.0 + 1.86 * t)


def counterflow_duty(ua, c_air, c_water, dt_inlet):
    c_min, c_max = min(c_air, c_water), max(c_air, c_water)
    ntu = ua / c_min
    cr = c_min / c_max
    if cr == 1.0:
        eff = ntu / (1.0 + ntu)
    else:
        z = math.exp(-ntu * (1.0 - cr))
        eff = (1.0 - z) / (1.0 - cr * z)
    return eff * c_min * dt_inlet


def solve_flow(t_ret, w_ret, t_sup, airflow, t_chws, ua):
    w_sup = min(w_ret, w_sat(t_chws))
    q_req = airflow * (enthalpy(t_ret, w_ret) - enthalpy(t_sup, w_sup))
    c_air = airflow * (1.006 + 1.86 * w_ret)
    dt = t_ret - t_chws

    def gap(flow):
        return counterflow_duty(ua, c_air, flow * CP_WATER, dt) - q_req

    return brentq(gap, 1e-9, 300.0, xtol=1e-12, rtol=1e-14), q_req, w_sup


if __name__ == "__main__":
    flow, q_req, w_sup = solve_flow(35.0, 0.010, 20.0, 50.0, 7.0, 260.0)
    print(f"duty_required_kw  {q_req:.12g}")
    print(f"supply_w          {w_sup:.12g}")
    print(f"water_flow_kgs    {flow:.12g}")
