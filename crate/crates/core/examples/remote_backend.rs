//! Runs against an HTTP reasoning service when one is configured.
//!
//! HEADTURN_BACKEND_URL=http://host/v1/reason HEADTURN_BACKEND_TOKEN=... \
//!     cargo run --example remote_backend
//!
//! Without a URL the built-in oracle is used. Failed remote calls fall back per call
//! and are counted.

use std::path::Path;

use headturn::engine::{run_pipeline, BackendKind, EngineConfig};
use headturn::io::{config_to_toml, SceneFile};
use headturn::reasoning::{RemoteConfig, BACKEND_URL_ENV};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let mut cfg = EngineConfig { duration: Some(30.0), ..Default::default() };
    if let Ok(url) = std::env::var(BACKEND_URL_ENV) {
        cfg.backend = BackendKind::Remote;
        cfg.remote = Some(RemoteConfig { url, plan_timeout: 20.0, ..Default::default() });
    }
    println!("--- effective config ---\n{}", config_to_toml(&cfg)?);

    let file = SceneFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mall_apc.toml"))?;
    let (_, traj) = file.trajectory(None, cfg.tick)?;
    let (plan, trace) = run_pipeline(&file.scene(), &file.scene(), &traj, &cfg.reasoner()?, &cfg)?;
    let flagged = trace.bundles.iter().filter(|b| b.fallback).count();
    println!(
        "{} actions, {} plan fallbacks, {} of {} validations fell back",
        plan.actions.len(),
        plan.fallbacks,
        flagged,
        trace.bundles.len()
    );
    Ok(())
}
