#![no_main]

use libfuzzer_sys::fuzz_target;
use sigtrust::graph::{parse_edge_list, IngestConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok((graph, audit)) = parse_edge_list(text, &IngestConfig::default()) else {
        return;
    };
    assert_eq!(audit.num_edges, graph.num_edges());
    // the canonical dump must parse back to the same graph
    let (again, _) = parse_edge_list(&graph.to_csv(), &IngestConfig::default()).expect("canonical dump parses");
    assert_eq!(again.to_csv(), graph.to_csv());
});
