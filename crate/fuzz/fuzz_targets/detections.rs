#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::detector::{parse_detections_jsonl, write_detections_jsonl};

fuzz_target!(|data: &str| {
    if let Ok(table) = parse_detections_jsonl(data) {
        let all: Vec<_> = table.values().flatten().cloned().collect();
        let again = parse_detections_jsonl(&write_detections_jsonl(&all)).expect("written detections parse");
        assert_eq!(again, table);
    }
});
