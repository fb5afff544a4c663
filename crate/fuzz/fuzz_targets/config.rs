#![no_main]
use libfuzzer_sys::fuzz_target;

use dearsim::config::Config;
use dearsim::sched::{build_graph, simulate};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = Config::parse(text) else {
        return;
    };
    let _ = config.tuner();
    let (Ok(cluster), Ok(model), Ok(policy)) = (config.cluster(), config.model(), config.policy())
    else {
        return;
    };
    // Keep each input cheap; presets alone have hundreds of layers.
    if model.num_layers() > 64 {
        return;
    }
    if let Ok(graph) = build_graph(&model, &policy, &cluster) {
        let timeline = simulate(&graph).expect("generated graphs are acyclic");
        timeline.check(&graph).unwrap();
    }
});
