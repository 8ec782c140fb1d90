#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::detector::{parse_response_line, ResponseLine};

fuzz_target!(|data: &str| {
    if let Ok(ResponseLine::Detection { conf, .. }) = parse_response_line(data) {
        assert!((0.0..=1.0).contains(&conf));
    }
});
