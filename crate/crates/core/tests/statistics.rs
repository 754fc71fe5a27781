use fso_core::engine::activity::schedule_activity;
use fso_core::domain::{AgentId, Individual, IndividualId, IndividualState};
use fso_core::protocol::CommunityId;
use fso_core::rng::{substream, StreamTag};
use fso_core::{build_world, Bounds, Position, WorldConfig};

#[test]
fn sickness_rate_matches_probability() {
    let c = WorldConfig { n_individuals: 200, ..WorldConfig::default() };
    let mut w = build_world(&c, 17).unwrap();
    while w.stats.activity_completions < 10_000 {
        w.step().unwrap();
    }
    let n = w.stats.activity_completions as f64;
    let expected = n * 0.09;
    let sigma = (n * 0.09 * 0.91).sqrt();
    let got = w.stats.sickness_events as f64;
    assert!((got - expected).abs() <= 3.0 * sigma, "{got} sick out of {n}");
    assert_eq!(w.stats.sickness_events, w.requests.len() as u64);
}

#[test]
fn activity_durations_average_150() {
    let ind = Individual {
        id: IndividualId(0),
        agent: AgentId(0),
        position: Position::new(50.0, 50.0),
        speed: 0.5,
        state: IndividualState::Idle,
        home_isoc: CommunityId(0),
        residents: 0,
        destination: None,
        depart_at: 0,
    };
    let bounds = Bounds { width: 100.0, height: 100.0 };
    let mut rng = substream(11, StreamTag::Activities);
    let total: u64 = (0..10_000).map(|_| schedule_activity(&ind, 0, &bounds, (100, 200), &mut rng).unwrap().ends_at).sum();
    let mean = total as f64 / 10_000.0;
    assert!((145.0..=155.0).contains(&mean), "{mean}");
}
