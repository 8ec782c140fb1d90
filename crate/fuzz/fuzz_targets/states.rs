#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::pipeline::parse_states;

fuzz_target!(|data: &str| {
    let _ = parse_states(data);
});
