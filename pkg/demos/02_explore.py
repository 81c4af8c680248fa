"""Discovering the states and transitions of the body-shop gripper.

Exploration treats the detailed model as a black box. It holds every input
combination in every known state and records where the outputs settle.
"""

from vacmdt import ExplorationConfig, assemble, explore, parse_graph, reference_graph

model = assemble(parse_graph(reference_graph("use_case_1")))
cfg = ExplorationConfig({s.name: v for s, v in zip(model.inputs, model.input_values)})
discovery = explore(model, cfg)

names = [s.name for s in discovery.outputs]
print("states")
for s in discovery.states:
    outs = ", ".join(f"{n}={v:g}" for n, v in zip(names, s.stable_outputs))
    print(f"  {s.number}: {outs}  reached by {list(s.reach_sequence)}")

print("transitions")
for t in discovery.transitions:
    delays = ", ".join(f"{n} {ms:g} ms" for n, ms in zip(names, t.settle_ms))
    print(f"  {t.start_state} --{t.inputs}--> {t.target_state}  ({delays})")
