"""
PI, PI-Lead and ultimate-gain PID on the actuator model
=======================================================

The vcm_like plant has Coulomb friction, an input-gain table, gravity and
sensor noise. Gravity is cancelled by a constant feed-forward before tuning.
"""

# %%
from dataclasses import replace
from pathlib import Path

from pilead import analysis, tuner
from pilead.campaign import step_svg
from pilead.simulation import (Disturbance, catalog, make_session, nominal_feedforward,
                               simulate_closed_loop, suggested_experiment)
from pilead.tuner import TuneConfig

plant = catalog("vcm_like", {"seed": 1})
print("feed-forward [V]:", nominal_feedforward(plant))
cfg = TuneConfig(experiment=suggested_experiment(plant))
r = tuner.tune_pi_lead(make_session(plant), cfg)
print(f"Kp={r.Kp:.4g} Ti={r.Ti:.4g} M={r.achieved_M:.3f} after {r.n_experiments} runs")

# %%
# Step responses for the three references of the campaign.
z = tuner.zn_pid(make_session(plant), cfg)
print(f"ultimate gain {z.Ku:.4g}, period {z.Tu:.4g} s")
ctrls = {"PI": r.pi, "PI-Lead": r.controller, "ZN-PID": z.pid}
for x_ref in (0.005, 0.01, 0.015):
    sc = replace(cfg.experiment, x_ref=x_ref)
    row = []
    for label, C in ctrls.items():
        m = analysis.overshoot(simulate_closed_loop(plant, C, sc))
        row.append(f"{label} M={m.overshoot_M:6.3f}")
    print(f"x_ref={x_ref:.3f}: " + "  ".join(row))

# %%
# Recovery from a short input pulse while holding 10 mm. The advantage of
# the lead depends on the pulse: the table sweeps its magnitude.
for mag in (-0.5, -1.0, -2.0, 1.0):
    sc = replace(cfg.experiment, x_ref=0.01, t_end=3.0,
                 disturbance=Disturbance(1.0, 1.5, mag))
    rec = {label: analysis.recovery_time(simulate_closed_loop(plant, C, sc), 1.5)
           for label, C in (("PI", r.pi), ("PI-Lead", r.controller))}
    print(f"pulse {mag:+.1f} N: " + "  ".join(f"{k} {v:.3f} s" if v is not None else f"{k} none"
                                            for k, v in rec.items()))

# %%
# Overlay of the three step responses at 10 mm, written as a plain SVG.
sc = replace(cfg.experiment, x_ref=0.01)
traces = {label: simulate_closed_loop(plant, C, sc) for label, C in ctrls.items()}
Path("actuator_steps.svg").write_text(step_svg(traces))
print("wrote actuator_steps.svg")
