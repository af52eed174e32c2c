#![no_main]

use adaptive_vlc::framing::FrameLayout;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(layout) = FrameLayout::from_json(text) {
            assert_eq!(FrameLayout::from_json(&layout.to_json()).expect("roundtrip"), layout);
        }
    }
});
