#![no_main]

use adaptive_vlc::transport::{deserialize_frame, serialize_frame};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = deserialize_frame(data) {
        let again = serialize_frame(&frame.samples, frame.seq, frame.stream, frame.flags);
        let back = deserialize_frame(&again).expect("roundtrip");
        assert_eq!(back.seq, frame.seq);
        assert_eq!(back.flags, frame.flags);
        assert_eq!(back.samples.len(), frame.samples.len());
    }
});
