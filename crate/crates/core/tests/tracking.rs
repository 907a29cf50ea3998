use semscene::evalmetrics::tracking_score;
use semscene::synthdata::{gen_tracking_sequence, SubjectScript, TrackingScript};
use semscene::tracker::{TrackState, TrackerConfig};

fn run(script: &TrackingScript, tau: f64) -> (f64, usize) {
    let seq = gen_tracking_sequence(script).unwrap();
    let mut state = TrackState::new(TrackerConfig::new(tau), Some(seq.space.projector())).unwrap();
    let mut predicted = Vec::new();
    let mut created = 0;
    for frame in &seq.frames {
        let out = state.step(frame).unwrap();
        created += out.created.len();
        predicted.push(out.track_ids);
    }
    let truth: Vec<Vec<u64>> = seq
        .truth
        .iter()
        .map(|f| f.iter().map(|&s| s as u64).collect())
        .collect();
    (
        tracking_score(&predicted, &truth).unwrap().accuracy,
        created,
    )
}

#[test]
fn three_well_separated_subjects_are_tracked_exactly() {
    let spread = 0.05;
    let sub = |x: f64, visible: Vec<[u64; 2]>, c: [f64; 3]| SubjectScript {
        bbox: [x, 50.0, x + 80.0, 250.0],
        velocity: [2.0, 0.5],
        visible,
        pointer_center: c,
        pointer_spread: spread,
    };
    // pointer clusters 10 spreads apart per axis of the 256-d noise
    let sep = 10.0 * spread * 16.0;
    let script = TrackingScript {
        frames: 30,
        subjects: vec![
            sub(0.0, vec![[0, 30]], [0.0, 0.0, 0.0]),
            sub(200.0, vec![[0, 10], [15, 30]], [sep, 0.0, 0.0]),
            sub(400.0, vec![[5, 20], [24, 30]], [0.0, sep, 0.0]),
        ],
        seed: 3,
        pointer_seed: 4,
    };
    let (acc, created) = run(&script, sep / 2.0);
    assert_eq!(acc, 1.0);
    assert_eq!(created, 3);
}
