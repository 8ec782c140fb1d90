#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::frame::SequenceManifest;

fuzz_target!(|data: &str| {
    if let Ok(m) = SequenceManifest::parse(data) {
        let again = SequenceManifest::parse(&m.to_text()).expect("written manifest parses");
        assert_eq!(again, m);
    }
});
