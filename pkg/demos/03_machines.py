"""Synthesizing machines at three depths and running them against the model.

MDT1 jumps to the target values, MDT2 waits for the measured delay, MDT3
replays the recorded trajectory. The detailed model (MDT4) is the reference.
"""

from vacmdt import (
    ExplorationConfig, Script, assemble, compare_traces, explore, parse_graph,
    reference_graph, run_machine, run_model, save_machine, synthesize,
)

model = assemble(parse_graph(reference_graph("use_case_1")))
cfg = ExplorationConfig({s.name: v for s, v in zip(model.inputs, model.input_values)})
discovery = explore(model, cfg)

script = Script([
    (0.0, {"suction": 0, "blow_off": 0}),
    (1.0, {"suction": 24}),
    (5.0, {"suction": 0, "blow_off": 24}),
], 9.0)
phases = {"idle": (0.0, 1.0), "rising": (1.0, 2.0), "constant": (2.0, 5.0), "blow-off": (5.0, 9.0)}

reference = run_model(model, script, 1e-3)
for level in (1, 2, 3):
    machine = synthesize(discovery, level)
    trace = run_machine(machine, script, 1e-3)
    report = compare_traces(trace, reference, phases)
    print(f"MDT{level}: {len(save_machine(machine))} bytes")
    print(report.table())
