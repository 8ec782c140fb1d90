#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::labels::GroundTruth;

fuzz_target!(|data: &str| {
    if let Ok(gt) = GroundTruth::parse_jsonl(data) {
        if gt.frame_count > 1 << 16 {
            return;
        }
        let _ = gt.person_per_frame();
        let _ = gt.motion_per_frame();
        let again = GroundTruth::parse_jsonl(&gt.to_jsonl()).expect("written labels parse");
        assert_eq!(again, gt);
    }
});
