use hba_core::frame_io::{encode_bin_xyzi, format_trajectory, parse_bin_xyzi, parse_trajectory, PoseFormat, Trajectory};
use hba_core::geometry::{exp_map, Pose, Twist};
use hba_core::pipeline::{run, Mode, PipelineConfig};
use hba_core::pyramid::partition_windows;
use hba_core::synth::{generate, SceneSpec};
use nalgebra::Vector3;
use proptest::prelude::*;

fn poses_strategy() -> impl Strategy<Value = Vec<Pose>> {
    prop::collection::vec(prop::array::uniform6(-3.0f64..3.0), 1..30).prop_map(|twists| {
        twists
            .into_iter()
            .map(|t| {
                let mut v = Twist::from_row_slice(&t);
                for k in 3..6 {
                    v[k] *= 100.0;
                }
                exp_map(&v)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn trajectory_text_round_trip(poses in poses_strategy(), tum in any::<bool>()) {
        let format = if tum { PoseFormat::Tum } else { PoseFormat::Kitti };
        let back = parse_trajectory(&format_trajectory(&Trajectory::new(poses.clone()), format), format).unwrap();
        prop_assert_eq!(back.len(), poses.len());
        for (a, b) in back.poses.iter().zip(&poses) {
            prop_assert!(a.max_abs_diff(b) < 1e-6);
        }
    }

    #[test]
    fn bin_scan_round_trip(raw in prop::collection::vec(prop::array::uniform3(-1e4f32..1e4), 1..200)) {
        let points: Vec<Vector3<f64>> = raw.iter().map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64)).collect();
        prop_assert_eq!(parse_bin_xyzi(&encode_bin_xyzi(&points)).unwrap(), points);
    }

    #[test]
    fn windows_cover_every_frame_with_overlap(n in 2usize..500, w in 3usize..20, s_off in 0usize..18) {
        let s = 2 + s_off % (w - 2);
        let spans = partition_windows(n, w, s);
        prop_assert_eq!(spans[0].start, 0);
        let last = spans.last().unwrap();
        prop_assert_eq!(last.start + last.len, n);
        for pair in spans.windows(2) {
            // consecutive windows overlap by w − s frames
            prop_assert_eq!(pair[1].start, pair[0].start + s);
            prop_assert!(pair[1].start < pair[0].start + pair[0].len);
        }
    }
}

#[test]
fn every_mode_leaves_its_inputs_untouched() {
    let mut spec = SceneSpec::box_room_loop(24);
    spec.sensor.point_noise = 0.01;
    spec.perturbation.rotation_deg = 0.3;
    spec.perturbation.translation_m = 0.01;
    let data = generate(&spec).unwrap();
    let (frames, initial) = (data.frames.clone(), data.perturbed.clone());
    for mode in [Mode::Hierarchical, Mode::OriginalBa, Mode::ReducedBa, Mode::DirectAssign] {
        let config = PipelineConfig {
            mode,
            max_passes: 2,
            ..PipelineConfig::default()
        };
        let (poses, reports) = run(&frames, &initial, &config).into_result().unwrap();
        assert_eq!(poses.len(), frames.len());
        assert!(reports.iter().all(|r| r.cost_ba.is_finite() && r.cost_pg.is_finite()));
        assert_eq!(frames, data.frames, "{mode}");
        assert_eq!(initial, data.perturbed, "{mode}");
    }
}

#[test]
fn repeated_runs_are_identical() {
    let mut spec = SceneSpec::box_room_loop(30);
    spec.sensor.point_noise = 0.02;
    spec.perturbation.rotation_deg = 0.5;
    spec.perturbation.translation_m = 0.02;
    let data = generate(&spec).unwrap();
    let config = PipelineConfig::default();
    let a = run(&data.frames, &data.perturbed, &config).into_result().unwrap().0;
    let b = run(&data.frames, &data.perturbed, &config).into_result().unwrap().0;
    assert_eq!(a, b);
}
