"""
Tuning a plant behind a socket
==============================

The tuner talks to a PlantSession. A plant server exposes a simulated plant
over newline-delimited JSON, and the client session plugs straight into the
same tuner code, which is how a bridge to real hardware would be used.
"""

# %%
import threading

from pilead import tuner, wire
from pilead.simulation import catalog, make_session, suggested_experiment
from pilead.tuner import TuneConfig

plant = catalog("vcm_like", {"seed": 7})
server = wire.plant_server(plant)
threading.Thread(target=server.serve_forever, daemon=True).start()
host, port = server.server_address
print(f"plant server on {host}:{port}")

# %%
cfg = TuneConfig(experiment=suggested_experiment(plant))
with wire.session_client(host, port) as remote:
    r_remote = tuner.tune_pi_lead(remote, cfg)
r_local = tuner.tune_pi_lead(make_session(plant), cfg)
print("remote:", r_remote.Kp, r_remote.Ti, r_remote.achieved_M)
print("local: ", r_local.Kp, r_local.Ti, r_local.achieved_M)
print("identical:", r_remote.to_dict() == r_local.to_dict())

# %%
server.shutdown()
server.server_close()
