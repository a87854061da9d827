#![no_main]
use hba_core::frame_io::parse_pcd_ascii;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = parse_pcd_ascii(data) {
        assert!(points.iter().all(|p| p.iter().all(|v| v.is_finite())));
    }
});
