#![no_main]
use hba_core::frame_io::{encode_ply, parse_ply};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = parse_ply(data) {
        assert!(points.iter().all(|p| p.iter().all(|v| v.is_finite())));
        let _ = parse_ply(&encode_ply(&points));
    }
});
