//! Whole-pipeline properties on the fixtures.

use std::path::Path;

use headturn::engine::{run_multi, run_pipeline, AgentSpec, EngineConfig};
use headturn::error::Error;
use headturn::eval::{dtw, responsiveness_matrix, References, Toggle};
use headturn::geom::{angular_distance, UnitQuaternion};
use headturn::io::SceneFile;

fn load(name: &str) -> SceneFile {
    SceneFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

#[test]
fn mismatched_layouts_are_a_contract_error() {
    let mdc = load("bus_mdc.toml");
    let other = load("cafe_apc.toml");
    let cfg = EngineConfig { duration: Some(10.0), ..Default::default() };
    let (_, traj) = mdc.trajectory(None, cfg.tick).unwrap();
    let err = responsiveness_matrix("bus", &mdc.scene(), &other.scene(), &traj, &References::SameSeedBaseline, &cfg, &[0])
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn without_res_the_plan_is_executed_verbatim() {
    let mdc = load("injected_hazard_mdc.toml");
    let apc = load("injected_hazard_apc.toml");
    let cfg = Toggle::NoRes.apply(&EngineConfig { seed: 4, ..Default::default() });
    let (_, traj) = mdc.trajectory(None, cfg.tick).unwrap();
    let (plan, trace) = run_pipeline(&mdc.scene(), &apc.scene(), &traj, &cfg.reasoner().unwrap(), &cfg).unwrap();
    let planned: Vec<UnitQuaternion> = plan.track.iter().map(|s| s.q).collect();
    assert_eq!(trace.orientations(), planned);
    assert!(trace.replaced.is_empty());
}

#[test]
fn same_scene_keeps_every_action() {
    let s = load("street_apc.toml");
    let cfg = EngineConfig { seed: 9, ..Default::default() };
    let (_, traj) = s.trajectory(None, cfg.tick).unwrap();
    let (plan, trace) = run_pipeline(&s.scene(), &s.scene(), &traj, &cfg.reasoner().unwrap(), &cfg).unwrap();
    assert!(trace.replaced.is_empty());
    assert!(trace.bundles.iter().all(|b| b.verdict == "keep"));
    let planned: Vec<UnitQuaternion> = plan.track.iter().map(|s| s.q).collect();
    assert_eq!(trace.orientations(), planned);
}

#[test]
fn multi_agent_traces_cover_each_trajectory() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ucy/zara01_replica.vsp")).unwrap();
    let template = load("ucy/zara01_template.toml");
    let ingest = headturn::io::ingest_ucy(&text, &template.scene(), &Default::default()).unwrap();
    let agents: Vec<AgentSpec> = ingest
        .agents
        .iter()
        .map(|a| AgentSpec { id: a.id.clone(), trajectory: a.trajectory.clone(), goal: None })
        .collect();
    let cfg = EngineConfig::default();
    let traces = run_multi(&ingest.scene, &agents, &cfg).unwrap();
    assert_eq!(traces.len(), agents.len());
    for ((id, trace), spec) in traces.iter().zip(&agents) {
        assert_eq!(id, &spec.id);
        let expected = (spec.trajectory.duration() / cfg.tick).round() as usize + 1;
        assert!(trace.samples.len().abs_diff(expected) <= 1, "{id}: {} vs {expected}", trace.samples.len());
        assert!((trace.samples[0].t - spec.trajectory.start()).abs() < 1e-9);
    }
}

#[test]
fn dtw_is_symmetric_and_forgives_time_shifts() {
    let s = load("novel_interest.toml");
    let cfg = EngineConfig { seed: 2, ..Default::default() };
    let (_, traj) = s.trajectory(None, cfg.tick).unwrap();
    let (_, a) = run_pipeline(&s.scene(), &s.scene(), &traj, &cfg.reasoner().unwrap(), &cfg).unwrap();
    let cfg2 = EngineConfig { seed: 3, ..cfg.clone() };
    let (_, b) = run_pipeline(&s.scene(), &s.scene(), &traj, &cfg2.reasoner().unwrap(), &cfg2).unwrap();
    let (a, b) = (a.orientations(), b.orientations());
    let ab = dtw(&a, &b).unwrap().total_cost;
    let ba = dtw(&b, &a).unwrap().total_cost;
    assert!((ab - ba).abs() < 1e-9);

    // a delayed copy costs far less under warping than pointwise
    let mut shifted = vec![a[0]; 5];
    shifted.extend_from_slice(&a[..a.len() - 5]);
    let warped = dtw(&a, &shifted).unwrap().total_cost;
    let pointwise: f64 = a.iter().zip(&shifted).map(|(x, y)| angular_distance(x, y)).sum();
    assert!(warped <= pointwise);
    assert!(warped < 0.5 * pointwise || pointwise < 1e-9);
}
