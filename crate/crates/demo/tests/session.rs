use pvss_core::searcher::ScoreMode;
use pvss_core::track_store::TrackRef;
use pvss_demo::session::{DemoSession, DemoSpec};

fn session(noiseless: bool) -> DemoSession {
    DemoSession::new(&DemoSpec {
        vehicles: 40,
        noiseless,
        ..DemoSpec::default()
    })
    .unwrap()
}

#[test]
fn overview_lists_multi_camera_queries() {
    let s = session(false);
    let o = s.overview();
    assert_eq!(o.cameras.len(), 16);
    assert!(!o.edges.is_empty());
    assert!(!o.queries.is_empty());
    let total: usize = o.cameras.iter().map(|c| c.tracks).sum();
    assert!(o.queries.len() <= total);
}

#[test]
fn noiseless_search_finds_the_vehicle_first() {
    let s = session(true);
    let o = s.overview();
    let mut checked = 0;
    for q in o.queries.iter().take(30) {
        let v = s.search(q.track, 1800.0, 1, 5, ScoreMode::Full).unwrap();
        let last = v.snapshots.last().unwrap();
        // snapshots only ever grow or improve
        for w in v.snapshots.windows(2) {
            assert!(w[1].entries.len() >= w[0].entries.len());
        }
        if v.reachable > 0 {
            assert!(last.entries[0].hit, "query {}", q.track);
            checked += 1;
        }
        assert!(last.entries.iter().all(|e| e.camera_id != q.track.camera_id));
    }
    assert!(checked > 5);
}

#[test]
fn slot_curve_and_heatmap() {
    let s = session(false);
    let o = s.overview();
    let (from, to) = o.edges[0];
    let c = s.slot_curve(from, to).unwrap();
    assert!(!c.points.is_empty());
    for p in &c.points {
        let planted = p.planted_mean_s.unwrap();
        assert!((p.mean_s - planted).abs() < 0.5 * planted);
    }
    assert!(s.slot_curve(from, from).is_err());

    let h = s.st_heatmap(3000.0, 3600.0, 12).unwrap();
    assert_eq!(h.values.len(), 12);
    assert!(h.values.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    assert!(s.st_heatmap(3000.0, 3600.0, 1).is_err());
    assert!(s.search(TrackRef::new(999, 0), 60.0, 1, 5, ScoreMode::Full).is_err());
}

#[test]
fn rejects_bad_specs() {
    for spec in [
        DemoSpec { cameras: 1, ..DemoSpec::default() },
        DemoSpec { vehicles: 0, ..DemoSpec::default() },
        DemoSpec { hours: f64::NAN, ..DemoSpec::default() },
    ] {
        assert!(DemoSession::new(&spec).is_err());
    }
}
