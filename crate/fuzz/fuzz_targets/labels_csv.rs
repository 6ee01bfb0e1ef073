#![no_main]

use libfuzzer_sys::fuzz_target;
use sigtrust::graph::{parse_edge_list, IngestConfig};
use sigtrust::labeling::{labels_to_csv, parse_labels_csv};

// A fixed 4-node graph so the fuzzer spends its effort on the label file.
const EDGES: &str = "1,2,10,1\n2,3,-10,2\n3,4,5,3\n4,1,-3,4\n";

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (graph, _) = parse_edge_list(EDGES, &IngestConfig::default()).unwrap();
    if let Ok(labels) = parse_labels_csv(text, &graph) {
        assert_eq!(labels.len(), graph.num_nodes());
        let again = parse_labels_csv(&labels_to_csv(&graph, &labels), &graph).expect("written labels parse");
        assert_eq!(again.labels(), labels.labels());
    }
});
