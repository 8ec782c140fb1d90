use proptest::prelude::*;
use stillwatch::config::PipelineConfig;
use stillwatch::detector::{parse_detections_jsonl, parse_response_line};
use stillwatch::frame::{RgbdFrame, SequenceManifest};
use stillwatch::labels::GroundTruth;
use stillwatch::pipeline::parse_states;
use stillwatch::synth::SceneScript;
use stillwatch::tracker::parse_events;

/// Lines built from the tokens the formats use, so inputs get past the
/// first character more often than uniform noise would.
fn line_soup() -> impl Strategy<Value = String> {
    let token = prop::sample::select(vec![
        "{", "}", "[", "]", ",", ":", "\"", "\n", "=", " ", "-1", "0", "1", "0.5", "1e400", "NaN", "\"kind\"",
        "\"range\"", "\"sequence\"", "\"frame\"", "\"bbox\"", "\"conf\"", "\"class\"", "\"human\"", "\"pet\"",
        "\"start\"", "\"end\"", "\"tag\"", "width", "height", "frame_count", "timestamp_ms", "HUMAN", "PET", "END",
        "theta", "\"pid\"", "\"dur_s\"", "\"reason\"", "\"motion\"", "4294967296", "18446744073709551616",
    ]);
    prop::collection::vec(token, 0..60).prop_map(|t| t.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn text_parsers_never_panic(s in prop_oneof![line_soup(), any::<String>()]) {
        let _ = SequenceManifest::parse(&s);
        let _ = GroundTruth::parse_jsonl(&s);
        let _ = parse_detections_jsonl(&s);
        let _ = parse_response_line(&s);
        let _ = parse_events(&s);
        let _ = parse_states(&s);
        let _ = SceneScript::from_json(&s);
        let _ = PipelineConfig::from_toml_str(&s);
        let _ = PipelineConfig::default().set(&s);
    }

    #[test]
    fn frame_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..6000), w in 0usize..48, h in 0usize..48) {
        if let Ok(f) = RgbdFrame::decode(&bytes, 0, 0, w, h) {
            prop_assert_eq!(f.encode(), bytes);
        }
    }
}
