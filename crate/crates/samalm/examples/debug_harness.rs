use samalm::harness::*;
use samalm::gateway::{Gateway, ScriptedProfile};
use samalm::sim::{EventKind, ScenarioConfig};
use std::time::Instant;

fn main() {
    // AC5 shape: scripted, 360 FOV, 3 robots / 5 humans, 50 episodes.
    let cfg = ExperimentConfig {
        scenario: ScenarioConfig { n_robots: 3, n_humans: 5, ..ScenarioConfig::default() },
        episodes: 50,
        seed: 42,
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let mut rr = 0u32;
    let mut outcomes = std::collections::BTreeMap::<String, u32>::new();
    let mut requeries = 0u64;
    let mut forced = 0u64;
    for i in 0..cfg.episodes {
        let gateway = Gateway::new(cfg.backend.clone()).unwrap();
        let (result, logs) = run_episode(&cfg, i, &gateway);
        *outcomes.entry(format!("{:?}", result.outcome)).or_default() += 1;
        requeries += result.requery_count;
        forced += result.forced_count;
        for rec in &logs.trajectory {
            for e in &rec.events {
                if matches!(e.kind, EventKind::RobotRobotCollision { .. }) { rr += 1; }
            }
        }
    }
    println!("AC5 decentralized: outcomes={outcomes:?} rr_collisions={rr} requeries={requeries} forced={forced} elapsed={:.1}s", start.elapsed().as_secs_f64());

    // AC6 shape: faulty actor 10%, decentralized vs no-critic on same seeds.
    for mode in [RunMode::Decentralized, RunMode::NoCritic] {
        let mut cfg6 = ExperimentConfig {
            scenario: ScenarioConfig { n_robots: 3, n_humans: 5, ..ScenarioConfig::default() },
            episodes: 50,
            seed: 42,
            mode,
            ..ExperimentConfig::default()
        };
        cfg6.backend.scripted.default_profile = ScriptedProfile::Faulty;
        cfg6.backend.scripted.fault_rate = 0.10;
        cfg6.backend.scripted.fault_seed = 7;
        let start = Instant::now();
        let report = {
            let mut results = Vec::new();
            for i in 0..cfg6.episodes {
                let gateway = Gateway::new(cfg6.backend.clone()).unwrap();
                let (result, _) = run_episode(&cfg6, i, &gateway);
                results.push(result);
            }
            MetricsReport::from_results(results, &cfg6.ss_weights)
        };
        println!("AC6 {mode:?}: SR={:.1} SS={} successes={} collisions={} timeouts={} elapsed={:.1}s",
            report.sr, report.ss, report.successes, report.collisions, report.timeouts, start.elapsed().as_secs_f64());
    }
}
