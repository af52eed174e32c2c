//! Replays the checked-in fuzz corpus through every decoder.

use std::fs;
use std::path::PathBuf;

use adaptive_vlc::framing::FrameLayout;
use adaptive_vlc::harness::ExperimentConfig;
use adaptive_vlc::link_adaptation::{decode_feedback, decode_mode, Decision};
use adaptive_vlc::transport::{deserialize_frame, FeedbackMsg};
use adaptive_vlc::waveform::iqfile;

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

/// Seeds whose name says they are malformed must be rejected, the rest accepted.
fn check<T, E: std::fmt::Debug>(target: &str, bad: &[&str], parse: impl Fn(&[u8]) -> Result<T, E>) {
    for (name, data) in corpus(target) {
        let result = parse(&data);
        if bad.contains(&name.as_str()) {
            assert!(result.is_err(), "{target}/{name} accepted");
        } else {
            assert!(result.is_ok(), "{target}/{name}: {:?}", result.err());
        }
    }
}

fn text(data: &[u8]) -> &str {
    std::str::from_utf8(data).expect("utf-8 seed")
}

#[test]
fn wire_frames() {
    check("wire_frame", &["reserved_flag", "short_payload"], deserialize_frame);
}

#[test]
fn feedback_messages() {
    check("feedback_msg", &["reserved_bits", "too_short"], FeedbackMsg::from_bytes);
}

#[test]
fn iq_files() {
    check("iq_file", &["count_overflow", "unknown_flag"], iqfile::decode);
}

#[test]
fn frame_layouts() {
    check("frame_layout", &["cp_longer_than_block", "zero_block"], |d| {
        FrameLayout::from_json(text(d))
    });
}

#[test]
fn experiment_configs() {
    check("experiment_config", &["unknown_field", "empty_sweep"], |d| {
        ExperimentConfig::from_json(text(d))
    });
}

#[test]
fn mode_codes() {
    for (name, data) in corpus("mode_code") {
        let parsed = match data.as_slice() {
            [byte] => decode_feedback(*byte).map(|_| ()),
            _ => text(&data).parse::<Decision>().map(|_| ()),
        };
        assert!(parsed.is_ok(), "mode_code/{name}: {parsed:?}");
    }
    for code in 0..8u8 {
        assert!(decode_mode(code).is_ok());
    }
    assert!(decode_mode(8).is_err());
}
