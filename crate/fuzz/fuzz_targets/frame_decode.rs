#![no_main]

use libfuzzer_sys::fuzz_target;
use stillwatch::frame::RgbdFrame;

// First two bytes pick the frame size; the rest is the record.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let w = 32 + (data[0] % 16) as usize;
    let h = 32 + (data[1] % 16) as usize;
    if let Ok(f) = RgbdFrame::decode(&data[2..], 0, 0, w, h) {
        assert_eq!(f.encode(), &data[2..]);
    }
});
