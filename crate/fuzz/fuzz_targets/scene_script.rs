#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::synth::SceneScript;

fuzz_target!(|data: &str| {
    if let Ok(s) = SceneScript::from_json(data) {
        let again = SceneScript::from_json(&s.to_json()).expect("written script parses");
        assert_eq!(again.frame_count(), s.frame_count());
    }
});
