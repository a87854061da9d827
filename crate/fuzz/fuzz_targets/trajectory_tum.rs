#![no_main]
use hba_core::frame_io::{format_trajectory, parse_trajectory, PoseFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(trajectory) = parse_trajectory(text, PoseFormat::Tum) {
        let again = parse_trajectory(&format_trajectory(&trajectory, PoseFormat::Tum), PoseFormat::Tum);
        assert_eq!(again.map(|t| t.len()).ok(), Some(trajectory.len()));
    }
});
