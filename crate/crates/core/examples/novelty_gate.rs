//! Replays a simulated head trace through the renderer and shows which frames the gate keeps.

use std::path::Path;

use headturn::engine::{run_pipeline, EngineConfig};
use headturn::io::SceneFile;
use headturn::perception::{novelty_gate, ssim, NoveltyState};
use headturn::world::render_semantic_raster;

fn main() -> anyhow::Result<()> {
    let file = SceneFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cafe_apc.toml"))?;
    let cfg = EngineConfig::default();
    let scene = file.scene();
    let (_, traj) = file.trajectory(None, cfg.tick)?;
    let (_, trace) = run_pipeline(&scene, &scene, &traj, &cfg.reasoner()?, &cfg)?;

    let mut state = NoveltyState::default();
    let mut kept = 0;
    for s in &trace.samples {
        let pose = traj.pose_at(s.t)?;
        let frame = render_semantic_raster(&scene, &pose, &s.q, &cfg.fov, s.t);
        let score = match &state.last_novel {
            Some(prev) => ssim(prev, &frame)? * 100.0,
            None => 0.0,
        };
        if novelty_gate(&mut state, &frame, cfg.ssim_threshold)? {
            kept += 1;
            println!("{:5.1} s  novel  ssim {score:5.1}  phase {}", s.t, s.phase.as_str());
        }
    }
    println!("{kept} of {} frames novel at threshold {}", trace.samples.len(), cfg.ssim_threshold);
    Ok(())
}
