"""
Design formulas of the PI-Lead tuner
====================================

Everything here is closed form: integrator time constant from the ultimate
pair, the PI and lead factors, the overshoot to phase margin link and the
ultimate-gain PID rules used as the baseline.
"""

# %%
# Integrator time constant one decade below the faster ultimate frequency.
from pilead import analysis, lti, tuner

Ti = tuner.integrator_time_constant(1 / 0.031, 20.73)
C = lti.make_pi(450, Ti)
L = tuner.assign_lead(Ti).tf
print("Ti   =", Ti)
print("C(s) =", lti.format_tf(C))
print("L(s) =", lti.format_tf(L))

# %%
# The lead peaks 1.5 decades above 1/Ti with about 55 deg of phase, and
# stays out of the way where the PI integrator acts.
import numpy as np

w_peak = lti.lead_peak_frequency(0.1, Ti / 10)
print(f"lead peak at {w_peak:.1f} rad/s, {lti.lead_peak_phase_deg(0.1):.1f} deg")
w = np.geomspace(1e-2 / Ti, 1e3 / Ti, 7)
for wi, h in zip(w, lti.freq_response(L, w)):
    print(f"  w={wi:10.3f}  |L|={abs(h):6.3f}  phase={np.degrees(np.angle(h)):6.2f} deg")

# %%
# Overshoot band to phase margin band.
for M in (0.30, 0.35, 0.40):
    z = analysis.zeta_from_overshoot(M)
    print(f"M={M:.2f}  zeta={z:.4f}  phase margin={analysis.phase_margin_from_zeta(z):.1f} deg")

# %%
# Ultimate-gain PID baseline, filtered by a 1 kHz Butterworth pair.
z = tuner.zn_from_ultimate(1290, 0.098)
print(f"Kp={z.Kp:g}  Ti={z.Ti:g}  Td={z.Td:.2g}")
print("PID(s) F(s) =", lti.format_tf(z.pid))
