//! Plan on the familiar layout, run on the altered one, and compare the three pairings.

use std::path::Path;

use headturn::engine::EngineConfig;
use headturn::eval::{responsiveness_matrix, write_table, References};
use headturn::io::SceneFile;

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mdc = SceneFile::load(&dir.join("injected_hazard_mdc.toml"))?;
    let apc = SceneFile::load(&dir.join("injected_hazard_apc.toml"))?;
    let cfg = EngineConfig::default();
    let (_, traj) = mdc.trajectory(None, cfg.tick)?;

    let rows = responsiveness_matrix(
        &mdc.name,
        &mdc.scene(),
        &apc.scene(),
        &traj,
        &References::SameSeedBaseline,
        &cfg,
        &[0, 1, 2, 3, 4],
    )?;
    write_table(&rows, std::io::stdout())?;
    Ok(())
}
