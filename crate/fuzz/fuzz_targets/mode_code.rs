#![no_main]

use adaptive_vlc::link_adaptation::{decode_feedback, decode_mode, encode_feedback, encode_mode, Decision, ModeCode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for &b in data {
        if let Ok(m) = decode_mode(b) {
            assert_eq!(encode_mode(m), b);
        }
        if let Ok(d) = decode_feedback(b) {
            assert_eq!(decode_feedback(encode_feedback(d)).expect("canonical byte"), d);
        }
    }
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = text.parse::<ModeCode>() {
            assert_eq!(m.to_string().parse::<ModeCode>().expect("display parses"), m);
        }
        let _ = text.parse::<Decision>();
    }
});
