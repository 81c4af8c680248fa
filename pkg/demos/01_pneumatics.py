"""Evacuating a reservoir and a hose of the same volume.

The abstract evacuation time only sees the volume, so it predicts the same
time for both. The detailed model also sees the hose's flow resistance and
tells them apart.
"""

import numpy as np

from vacmdt import Script, assemble, evacuation_time_mdt2, parse_graph, reference_graph, run_model
from vacmdt.pneumo import HoseParams

hose = HoseParams(31.83, 4e-3)
print(f"hose volume {hose.volume * 1e3:.3f} l, resistance {hose.resistance:.3g} Pa.s/m3")

t_abstract = evacuation_time_mdt2(hose.volume, 6e-3, 900.0, 300.0)
print(f"abstract evacuation time (either shape): {t_abstract:.3f} s")

script = Script([(0.0, {"suction": 24})], 3.0)
for name in ("reservoir_test", "hose_test"):
    trace = run_model(assemble(parse_graph(reference_graph(name))), script)
    vac = trace.column("vacuum")
    t700 = trace.times[np.argmax(vac >= 700.0)]
    print(f"{name:15s} reaches 700 mbar after {t700:.3f} s (final {vac[-1]:.1f} mbar)")
