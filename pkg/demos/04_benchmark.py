"""Timing all depths on the 32-cup press line.

Construction (parsing an artifact) is timed apart from the run itself.
Pass a repetition count as the first argument; the default is 5.
"""

import sys

from vacmdt import (
    ExplorationConfig, Script, assemble, explore, parse_graph, reference_graph,
    run_benchmark, save_machine, save_model_bundle, synthesize,
)

repetitions = int(sys.argv[1]) if len(sys.argv) > 1 else 5
model = assemble(parse_graph(reference_graph("use_case_2")))
cfg = ExplorationConfig({s.name: v for s, v in zip(model.inputs, model.input_values)})
discovery = explore(model, cfg)

artifacts = {f"MDT{k}": save_machine(synthesize(discovery, k)) for k in (1, 2, 3)}
artifacts["MDT4"] = save_model_bundle(reference_graph("use_case_2"))

script = Script([
    (0.0, {"suction": 0, "blow_off": 0}),
    (0.5, {"suction": 24}),
    (3.5, {"suction": 0}),
    (4.5, {"blow_off": 24}),
    (5.5, {"blow_off": 0}),
    (6.0, {"suction": 24, "blow_off": 24}),
    (7.0, {"blow_off": 0}),
], 9.0)

report = run_benchmark(artifacts, script, 1e-3, repetitions=repetitions)
print(report.table())
for k in ("MDT1", "MDT2", "MDT3"):
    print(f"MDT4 / {k}: {report.mean_run('MDT4') / report.mean_run(k):.0f}x")
