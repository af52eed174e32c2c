#![no_main]

use adaptive_vlc::waveform::iqfile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(buf) = iqfile::decode(data) {
        let again = iqfile::encode(&buf).expect("decoded buffers re-encode");
        assert_eq!(again.len(), data.len());
    }
    let _ = iqfile::decode_samples(data);
});
