from edgechain.sim.scenario import BUILTIN_SCENARIOS, SimConfig


def do_list_scenarios() -> int:
    for name, data in BUILTIN_SCENARIOS.items():
        config = SimConfig.from_dict(data)
        kinds = ', '.join(f"{len(config.nodes_of(kind))} {kind.value}" for kind in
                          sorted({n.kind for n in config.nodes}, key=lambda k: k.value))
        print(f"{name:<16}{config.consensus.mode.value}, {kinds}, max_blocks {config.run.max_blocks}")
    return 0
