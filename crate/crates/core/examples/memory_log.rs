//! Inspects the working memory after a run: retained entries and their scores.

use std::path::Path;

use headturn::engine::{run_pipeline, EngineConfig};
use headturn::io::SceneFile;

fn main() -> anyhow::Result<()> {
    let file = SceneFile::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/bus_apc.toml"))?;
    let cfg = EngineConfig { seed: 1, ..Default::default() };
    let (_, traj) = file.trajectory(None, cfg.tick)?;
    let (plan, trace) = run_pipeline(&file.scene(), &file.scene(), &traj, &cfg.reasoner()?, &cfg)?;

    let fmm = &plan.fmm;
    println!("{} of {} slots used", fmm.len(), fmm.capacity());
    for e in fmm.entries() {
        let seen: Vec<&str> = e.objects.iter().chain(&e.agents).map(|s| s.id.as_str()).collect();
        let action = e.action_reason.as_ref().map_or("-", |a| a.driver.as_str());
        println!(
            "#{:<3} {:5.1} s  rel {:.2}  action {:<18} executed {:<5} sees {}",
            e.seq,
            e.t,
            e.relevance.unwrap_or(0.0),
            action,
            e.executed,
            seen.join(",")
        );
    }
    println!("attended: {:?}", fmm.attended());
    println!("execution-side memory: {} entries", trace.fmm.len());
    if let Some(line) = fmm.to_jsonl().lines().next() {
        println!("first log line: {line}");
    }
    Ok(())
}
