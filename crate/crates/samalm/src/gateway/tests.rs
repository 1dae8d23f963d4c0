use super::scripted::{
    candidate_actions, parse_world_model, pick_best, scripted_actor_policy, unsafe_action,
    ScoredCandidate,
};
use super::*;
use crate::vec2::wrap_angle;
use std::io::Read;
use std::net::TcpListener;

fn actor_prompt(user: &str, robot_id: usize) -> Prompt {
    Prompt { system: "navigate".into(), user: user.into(), tag: PromptTag::Actor(robot_id), nonce: 0 }
}

const OPEN_FIELD: &str =
    "self: pos=(0.00,0.00) vel=(0.00,0.00) goal=(4.00,0.00) goal_dist=4.00 pref_speed=1.25 social_dist=0.45";

#[test]
fn parses_canonical_world_model_text() {
    let text = "self: pos=(0.00,0.00) vel=(0.10,0.00) goal=(4.00,1.00) goal_dist=4.12 pref_speed=1.25 social_dist=0.45\n\
                robot-2: pos=(1.00,1.00) vel=(0.00,-0.40) dist=1.41 trend=approaching accel=0.00 next=(1.00,0.90)\n\
                human-0: pos=(2.00,0.00) vel=(-1.00,0.00) dist=2.00 trend=approaching accel=0.00 next=(1.75,0.00)";
    let wm = parse_world_model(text).unwrap();
    assert_eq!(wm.goal, Vec2::new(4.0, 1.0));
    assert_eq!(wm.pref_speed, 1.25);
    assert_eq!(wm.social_dist, 0.45);
    assert_eq!(wm.robots.len(), 1);
    assert_eq!(wm.robots[0].id, 2);
    assert_eq!(wm.humans.len(), 1);
    assert_eq!(wm.humans[0].vel, Vec2::new(-1.0, 0.0));
}

#[test]
fn open_field_oracle_goes_full_speed_at_goal() {
    let gateway = Gateway::new(BackendConfig::default()).unwrap();
    let completion = gateway.complete(&actor_prompt(OPEN_FIELD, 0)).unwrap();
    assert!(
        completion.text.contains("\"action\": [1.25, 0.00]"),
        "unexpected completion: {}",
        completion.text
    );
    assert_eq!(completion.backend, BackendKind::Scripted);
    assert_eq!(completion.latency_ms, 0);
}

// Independent re-scoring of the candidate set: same candidate geometry,
// separately written penalty and progress arithmetic.
fn oracle_pick(wm: &super::scripted::ParsedWorldModel, dt: f64, k: usize) -> (Vec2, f64) {
    let mut best: Option<(f64, f64, Vec2, f64)> = None; // score, heading_change, action, penalty
    let goal_dist = (wm.goal - wm.self_pos).norm();
    let bearing = if (wm.goal - wm.self_pos).norm_sq() > 0.0 { (wm.goal - wm.self_pos).angle() } else { 0.0 };
    let current = if wm.self_vel.norm_sq() > 1e-18 { wm.self_vel.angle() } else { bearing };
    for action in candidate_actions(wm) {
        let mut penalty = 0.0;
        let np = wm.self_pos + action * dt;
        let kp = wm.self_pos + action * (k as f64 * dt);
        let mut crowd = 0;
        for h in &wm.humans {
            let d = np.dist(h.pos + h.vel * dt);
            if d < 0.7 {
                penalty += 10.0;
            } else if d < wm.social_dist + 0.6 {
                penalty += 5.0;
            }
            if kp.dist(h.pos + h.vel * (k as f64 * dt)) < wm.social_dist + 0.6 {
                crowd += 1;
            }
        }
        if crowd > 3 {
            penalty += 5.0 * (crowd - 3) as f64;
        }
        for r in &wm.robots {
            let d1 = np.dist(r.pos + r.vel * dt).min(np.dist(r.pos));
            if d1 < 0.7 {
                penalty += 10.0;
            } else if kp.dist(r.pos + r.vel * (k as f64 * dt)).min(kp.dist(r.pos)) < 1.2 {
                penalty += 5.0;
            }
        }
        let score = (goal_dist - np.dist(wm.goal)) - penalty;
        let hc = if action.norm_sq() > 0.0 { wrap_angle(action.angle() - current).abs() } else { 0.0 };
        let better = match &best {
            None => true,
            Some((bs, bhc, _, _)) => score > *bs || (score == *bs && hc < *bhc),
        };
        if better {
            best = Some((score, hc, action, penalty));
        }
    }
    let (_, _, action, penalty) = best.unwrap();
    (action, penalty)
}

#[test]
fn blocked_ray_forces_detour_matching_brute_force() {
    // A human parked 0.5 m ahead: every forward candidate is inside the
    // near-collision margin, so the picked action must turn away.
    let text = format!(
        "{OPEN_FIELD}\nhuman-0: pos=(0.50,0.00) vel=(0.00,0.00) dist=0.50 trend=static accel=0.00 next=(0.50,0.00)"
    );
    let wm = parse_world_model(&text).unwrap();
    let (action, reasoning) = scripted_actor_policy(&wm, 0.25, 2);
    let (expected, penalty) = oracle_pick(&wm, 0.25, 2);
    assert_eq!(action, expected, "policy disagrees with brute force");
    assert!(penalty < 10.0, "chosen action still near-collides");
    assert!(wrap_angle(action.angle()).abs() > 1e-6, "heading should deviate from the goal ray");
    assert!(!reasoning.is_empty());
}

#[test]
fn policy_matches_brute_force_on_random_scenes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(51);
    for _ in 0..300 {
        let mut text = String::from(
            "self: pos=(0.00,0.00) vel=(0.25,0.10) goal=(4.00,-2.00) goal_dist=4.47 pref_speed=1.25 social_dist=0.45",
        );
        for i in 0..rng.gen_range(0..5) {
            text.push_str(&format!(
                "\nhuman-{i}: pos=({:.2},{:.2}) vel=({:.2},{:.2}) dist=1.00 trend=static accel=0.00 next=(0.00,0.00)",
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
        }
        for i in 0..rng.gen_range(0..3) {
            text.push_str(&format!(
                "\nrobot-{i}: pos=({:.2},{:.2}) vel=({:.2},{:.2}) dist=1.00 trend=static accel=0.00 next=(0.00,0.00)",
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
        }
        let wm = parse_world_model(&text).unwrap();
        let (action, _) = scripted_actor_policy(&wm, 0.25, 2);
        let (expected, _) = oracle_pick(&wm, 0.25, 2);
        assert_eq!(action, expected);
    }
}

#[test]
fn equal_scores_pick_smaller_heading_change() {
    let scored = vec![
        ScoredCandidate { action: Vec2::new(1.0, 0.0), score: 1.0, penalty: 5.0, heading_change: 0.9 },
        ScoredCandidate { action: Vec2::new(0.0, 1.0), score: 1.0, penalty: 5.0, heading_change: 0.2 },
        ScoredCandidate { action: Vec2::new(0.0, -1.0), score: 1.0, penalty: 5.0, heading_change: 0.2 },
    ];
    // All candidates equally penalized and equally scored: minimal heading
    // change wins, first of the remaining tie wins.
    assert_eq!(pick_best(&scored), 1);
}

#[test]
fn unsafe_action_charges_nearest_human() {
    let text = format!(
        "{OPEN_FIELD}\nhuman-0: pos=(0.00,2.00) vel=(0.00,0.00) dist=2.00 trend=static accel=0.00 next=(0.00,2.00)\n\
         human-1: pos=(-1.00,0.00) vel=(0.00,0.00) dist=1.00 trend=static accel=0.00 next=(-1.00,0.00)"
    );
    let wm = parse_world_model(&text).unwrap();
    let action = unsafe_action(&wm);
    assert!((action - Vec2::new(-1.25, 0.0)).norm() < 1e-9, "should charge human-1: {action:?}");
}

#[test]
fn adversarial_profile_complies_after_feedback() {
    let mut cfg = BackendConfig::default();
    cfg.scripted.default_profile = ScriptedProfile::AdversarialFirst;
    let gateway = Gateway::new(cfg).unwrap();
    let text = format!(
        "{OPEN_FIELD}\nhuman-0: pos=(0.80,0.00) vel=(0.00,0.00) dist=0.80 trend=static accel=0.00 next=(0.80,0.00)"
    );
    let first = gateway.complete(&actor_prompt(&text, 0)).unwrap();
    assert!(first.text.contains("\"action\": [1.25, 0.00]"), "expected a charge: {}", first.text);
    let with_feedback = format!(
        "{text}\n\n{}\n[attempt 0] local critic: too close to human-0",
        crate::actor::FEEDBACK_HEADER
    );
    let second = gateway.complete(&actor_prompt(&with_feedback, 0)).unwrap();
    assert_ne!(first.text, second.text, "feedback must change the adversarial proposal");
}

#[test]
fn garbage_profile_returns_unparseable_text() {
    let mut cfg = BackendConfig::default();
    cfg.scripted.per_robot.insert(4, ScriptedProfile::Garbage);
    let gateway = Gateway::new(cfg).unwrap();
    let completion = gateway.complete(&actor_prompt(OPEN_FIELD, 4)).unwrap();
    assert!(!completion.text.contains('{'));
    // Other robots keep the normal policy.
    let normal = gateway.complete(&actor_prompt(OPEN_FIELD, 0)).unwrap();
    assert!(normal.text.contains("\"action\""));
}

#[test]
fn faulty_profile_rate_is_roughly_honored() {
    let mut cfg = BackendConfig::default();
    cfg.scripted.default_profile = ScriptedProfile::Faulty;
    cfg.scripted.fault_rate = 0.1;
    cfg.scripted.fault_seed = 9;
    let gateway = Gateway::new(cfg).unwrap();
    let mut unsafe_count = 0;
    for i in 0..400 {
        let text = format!(
            "self: pos=(0.00,0.00) vel=(0.00,0.00) goal=({}.00,3.00) goal_dist=5.00 pref_speed=1.25 social_dist=0.45\n\
             human-0: pos=(0.00,-2.00) vel=(0.00,0.00) dist=2.00 trend=static accel=0.00 next=(0.00,-2.00)",
            i + 1
        );
        let completion = gateway.complete(&actor_prompt(&text, 0)).unwrap();
        // The unsafe branch charges the human below; the normal branch
        // never commands -y here.
        if completion.text.contains("\"action\": [0.00, -1.25]") {
            unsafe_count += 1;
        }
    }
    assert!((20..=70).contains(&unsafe_count), "unsafe count {unsafe_count} of 400");
    // Determinism: the same prompt always rolls the same way.
    let text = format!("{OPEN_FIELD}\nhuman-0: pos=(0.00,-2.00) vel=(0.00,0.00) dist=2.00 trend=static accel=0.00 next=(0.00,-2.00)");
    let a = gateway.complete(&actor_prompt(&text, 0)).unwrap();
    let b = gateway.complete(&actor_prompt(&text, 0)).unwrap();
    assert_eq!(a.text, b.text);
}

#[test]
fn critic_prompts_echo_findings() {
    let gateway = Gateway::new(BackendConfig::default()).unwrap();
    let prompt = Prompt {
        system: "checklist".into(),
        user: "context\n\nDeterministic verification findings:\n- action brings the robot too close to human-7".into(),
        tag: PromptTag::LocalCritic(0),
        nonce: 0,
    };
    let completion = gateway.complete(&prompt).unwrap();
    assert!(completion.text.contains("human-7"));
    let clean = Prompt {
        system: "checklist".into(),
        user: "context\n\nDeterministic verification findings:\n(none)".into(),
        tag: PromptTag::GlobalCritic,
        nonce: 0,
    };
    let completion = gateway.complete(&clean).unwrap();
    assert!(completion.text.contains("passed"));
}

#[test]
fn replay_miss_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transcript.jsonl");
    std::fs::write(&path, "").unwrap();
    let cfg = BackendConfig {
        mode: BackendKind::Replay,
        transcript_path: Some(path),
        ..BackendConfig::default()
    };
    let gateway = Gateway::new(cfg).unwrap();
    let prompt = actor_prompt(OPEN_FIELD, 0);
    match gateway.complete(&prompt) {
        Err(GatewayError::ReplayMiss { key }) => {
            assert!(key.contains("actor-0"), "key: {key}");
            assert!(key.contains(&prompt.hash()));
        }
        other => panic!("expected ReplayMiss, got {other:?}"),
    }
}

#[test]
fn prompt_hash_is_stable_and_input_sensitive() {
    let a = actor_prompt("same", 0);
    let b = actor_prompt("same", 0);
    let c = actor_prompt("different", 0);
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn transcript_records_in_call_order_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let cfg = BackendConfig { transcript_path: Some(path.clone()), ..BackendConfig::default() };
    let gateway = Gateway::new(cfg).unwrap();
    let prompts: Vec<Prompt> = (1..=3)
        .map(|i| {
            actor_prompt(
                &format!(
                    "self: pos=(0.00,0.00) vel=(0.00,0.00) goal=({i}.00,0.00) goal_dist={i}.00 pref_speed=1.25 social_dist=0.45"
                ),
                0,
            )
        })
        .collect();
    let recorded: Vec<String> =
        prompts.iter().map(|p| gateway.complete(p).unwrap().text).collect();

    let lines: Vec<TranscriptEntry> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for (entry, prompt) in lines.iter().zip(&prompts) {
        assert_eq!(entry.prompt_hash, prompt.hash());
    }

    let replay_cfg = BackendConfig {
        mode: BackendKind::Replay,
        transcript_path: Some(path),
        ..BackendConfig::default()
    };
    let replayer = Gateway::new(replay_cfg).unwrap();
    for (prompt, text) in prompts.iter().zip(&recorded) {
        let completion = replayer.complete(prompt).unwrap();
        assert_eq!(&completion.text, text);
        assert_eq!(completion.backend, BackendKind::Replay);
    }
}

#[test]
fn batch_completions_match_their_prompts() {
    let gateway = Gateway::new(BackendConfig::default()).unwrap();
    let prompts: Vec<Prompt> = (0..8)
        .map(|i| {
            actor_prompt(
                &format!(
                    "self: pos=(0.00,0.00) vel=(0.00,0.00) goal=(0.00,{}.00) goal_dist={}.00 pref_speed=1.00 social_dist=0.30",
                    i + 1,
                    i + 1
                ),
                i,
            )
        })
        .collect();
    let sequential: Vec<String> =
        prompts.iter().map(|p| gateway.complete(p).unwrap().text.clone()).collect();
    let batch = gateway.complete_batch(&prompts);
    for (result, expected) in batch.into_iter().zip(sequential) {
        assert_eq!(result.unwrap().text, expected);
    }
}

// Minimal single-threaded HTTP stub: serves each queued (status, body)
// response on one connection, then closes it.
fn spawn_stub(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut requests = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut data = Vec::new();
            let mut buf = [0u8; 4096];
            loop {
                let n = stream.read(&mut buf).unwrap();
                if n == 0 {
                    break;
                }
                data.extend_from_slice(&buf[..n]);
                if let Some(pos) = data.windows(4).position(|w| w == b"\r\n\r\n") {
                    let headers = String::from_utf8_lossy(&data[..pos]).to_string();
                    let content_length = headers
                        .lines()
                        .find_map(|l| {
                            let l = l.to_ascii_lowercase();
                            l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                        })
                        .unwrap_or(0);
                    if data.len() - (pos + 4) >= content_length {
                        break;
                    }
                }
            }
            requests.push(String::from_utf8_lossy(&data).to_string());
            let reason = if status == 200 { "OK" } else { "Error" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            use std::io::Write;
            stream.write_all(response.as_bytes()).unwrap();
        }
        requests
    });
    (format!("http://{addr}"), handle)
}

fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn http_cfg(url: String) -> BackendConfig {
    BackendConfig {
        mode: BackendKind::Http,
        endpoint_url: Some(url),
        model_name: "stub-model".into(),
        timeout_s: 5.0,
        max_retries: 2,
        retry_backoff_ms: 10,
        ..BackendConfig::default()
    }
}

#[test]
fn http_backend_passes_content_through() {
    let reply = "{\"reasoning\":[\"stub\"],\"action\":[0.50, 0.00]}";
    let (url, handle) = spawn_stub(vec![(200, chat_body(reply))]);
    let gateway = Gateway::new(http_cfg(url)).unwrap();
    let completion = gateway.complete(&actor_prompt(OPEN_FIELD, 0)).unwrap();
    assert_eq!(completion.text, reply);
    assert_eq!(completion.backend, BackendKind::Http);
    let requests = handle.join().unwrap();
    assert!(requests[0].contains("\"model\":\"stub-model\""));
    assert!(requests[0].contains("\"temperature\":0.2"));
}

#[test]
fn critic_prompts_run_at_temperature_zero() {
    let (url, handle) = spawn_stub(vec![(200, chat_body("fine"))]);
    let gateway = Gateway::new(http_cfg(url)).unwrap();
    let prompt = Prompt { system: "c".into(), user: "u".into(), tag: PromptTag::GlobalCritic, nonce: 0 };
    gateway.complete(&prompt).unwrap();
    let requests = handle.join().unwrap();
    assert!(requests[0].contains("\"temperature\":0.0"), "{}", requests[0]);
}

#[test]
fn transient_http_errors_are_retried() {
    let (url, handle) = spawn_stub(vec![
        (500, "{\"error\":\"boom\"}".to_string()),
        (200, chat_body("recovered")),
    ]);
    let gateway = Gateway::new(http_cfg(url)).unwrap();
    let completion = gateway.complete(&actor_prompt(OPEN_FIELD, 0)).unwrap();
    assert_eq!(completion.text, "recovered");
    assert_eq!(handle.join().unwrap().len(), 2);
}

#[test]
fn hard_http_status_is_not_retried() {
    let (url, handle) = spawn_stub(vec![(400, "{\"error\":\"bad request\"}".to_string())]);
    let gateway = Gateway::new(http_cfg(url)).unwrap();
    match gateway.complete(&actor_prompt(OPEN_FIELD, 0)) {
        Err(GatewayError::HttpStatus { code: 400, .. }) => {}
        other => panic!("expected HttpStatus(400), got {other:?}"),
    }
    assert_eq!(handle.join().unwrap().len(), 1);
}

#[test]
fn http_mode_requires_endpoint() {
    let cfg = BackendConfig { mode: BackendKind::Http, ..BackendConfig::default() };
    assert!(matches!(Gateway::new(cfg), Err(GatewayError::InvalidConfig { .. })));
}
