//! Switches off one component at a time and reports the DTW cost against the full model.

use std::path::Path;

use headturn::engine::EngineConfig;
use headturn::eval::{ablation_suite, AblationCase, References, Toggle};
use headturn::io::SceneFile;

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let cfg = EngineConfig::default();
    let mut cases = Vec::new();
    for name in ["hazard_safety", "novel_interest", "flow_social"] {
        let f = SceneFile::load(&dir.join(format!("{name}.toml")))?;
        let (_, trajectory) = f.trajectory(None, cfg.tick)?;
        cases.push(AblationCase { name: f.name.clone(), plan_scene: f.scene(), run_scene: f.scene(), trajectory });
    }
    let out = ablation_suite(&cases, &Toggle::all(), &References::SameSeedBaseline, &cfg, &[0, 1, 2])?;
    for r in &out.rows {
        let ci = r.ci95.map_or("-".into(), |c| format!("{c:.3}"));
        println!("{:<16} {:<34} {:.4} ± {ci}", r.scenario, r.method, r.mean);
    }
    Ok(())
}
