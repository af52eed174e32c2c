#![no_main]

use adaptive_vlc::transport::FeedbackMsg;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(msg) = FeedbackMsg::from_bytes(data) {
        assert_eq!(msg.to_bytes().as_slice(), data);
    }
});
