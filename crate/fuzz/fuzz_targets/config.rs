#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::config::PipelineConfig;

fuzz_target!(|data: &str| {
    if let Ok(c) = PipelineConfig::from_toml_str(data) {
        let again = PipelineConfig::from_toml_str(&c.to_toml_string()).expect("written config parses");
        assert_eq!(again, c);
    }
    let mut c = PipelineConfig::default();
    if c.set(data).is_ok() {
        assert!(c.validate().is_ok());
    }
});
