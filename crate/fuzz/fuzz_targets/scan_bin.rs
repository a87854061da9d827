#![no_main]
use hba_core::frame_io::{encode_bin_xyzi, parse_bin_xyzi};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = parse_bin_xyzi(data) {
        assert!(points.iter().all(|p| p.iter().all(|v| v.is_finite())));
        assert_eq!(parse_bin_xyzi(&encode_bin_xyzi(&points)).unwrap(), points);
    }
});
