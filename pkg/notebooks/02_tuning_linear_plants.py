"""
Tuning the linear catalog plants
================================

The tuner only sees step experiments. Here the plant models are known, so
the result can be checked against the true loop margins afterwards.
"""

# %%
from pilead import analysis, lti, tuner
from pilead.simulation import catalog, make_session

names = ["second_order_type_one", "fourth_order_resonant", "delayed_type_one"]
results = {}
for name in names:
    plant = catalog(name)
    results[name] = (plant, tuner.tune_pi_lead(make_session(plant)))

# %%
# Stage by stage: responsive gain, integrator sweep, gain search, lead.
for name, (plant, r) in results.items():
    print(f"{name}: k={r.k:g} Ti={r.Ti:.4g} Kp={r.Kp:.4g} "
          f"M(C)={r.achieved_M:.3f} M(CL)={r.lead_M:.3f} experiments={r.n_experiments}")

# %%
# The integrator sweep on the first plant. Every row is one experiment.
plant, r = results["second_order_type_one"]
print(" Ti        1/Ti      omega")
for Ti, w_pi, w in r.integrator.sweep_log:
    print(f"{Ti:8.5f} {w_pi:8.3f} {w:8.3f}")

# %%
# Ground truth. The prediction uses the ideal second-order link between
# overshoot and phase margin; the PI zero adds overshoot, so the true margin
# sits several degrees above it. The lead always adds margin.
for name, (plant, r) in results.items():
    G = plant.variant.tf
    pm_c = lti.margins(lti.series(r.pi, G)).phase_margin_deg
    pm_cl = lti.margins(lti.series(r.controller, G)).phase_margin_deg
    print(f"{name:24s} predicted {r.predicted_phase_margin_deg:5.1f}  "
          f"C G {pm_c:5.1f}  C L G {pm_cl:5.1f}")

# %%
# How the true margin moves with Kp across the overshoot band.
import numpy as np
from pilead.simulation import ScenarioSpec, simulate_closed_loop

plant, r = results["second_order_type_one"]
for Kp in np.geomspace(0.5, 2.0, 7):
    C = lti.make_pi(Kp, r.Ti)
    M = analysis.overshoot(simulate_closed_loop(plant, C, ScenarioSpec(t_end=10.0))).overshoot_M
    pm = lti.margins(lti.series(C, plant.variant.tf)).phase_margin_deg
    print(f"Kp={Kp:6.3f}  M={M:.3f}  PM={pm:5.1f}")
