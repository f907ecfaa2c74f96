//! Aligns two simulated head traces with dynamic time warping.

use std::path::Path;

use headturn::engine::{run_pipeline, EngineConfig};
use headturn::eval::dtw;
use headturn::io::SceneFile;

fn main() -> anyhow::Result<()> {
    let file = SceneFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/crossing_apc.toml"))?;
    let mut traces = Vec::new();
    for seed in [0, 1] {
        let cfg = EngineConfig { seed, ..Default::default() };
        let (_, traj) = file.trajectory(None, cfg.tick)?;
        let (_, trace) = run_pipeline(&file.scene(), &file.scene(), &traj, &cfg.reasoner()?, &cfg)?;
        traces.push(trace.orientations());
    }
    let r = dtw(&traces[0], &traces[1])?;
    println!("seed 0 vs seed 1: total {:.3} rad, normalized {:.4}", r.total_cost, r.normalized_cost);
    println!("warping path: {} steps for {} x {} samples", r.path.len(), traces[0].len(), traces[1].len());

    let warps = r.path.windows(2).filter(|w| w[1].0 == w[0].0 || w[1].1 == w[0].1).count();
    println!("non-diagonal steps: {warps}");

    let self_cost = dtw(&traces[0], &traces[0])?.total_cost;
    println!("trace vs itself: {self_cost}");
    Ok(())
}
