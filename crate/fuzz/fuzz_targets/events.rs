#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::tracker::parse_events;

fuzz_target!(|data: &str| {
    if let Ok(events) = parse_events(data) {
        let text: String = events.iter().map(|e| e.to_json_line()).collect();
        assert_eq!(parse_events(&text).expect("written events parse"), events);
    }
});
