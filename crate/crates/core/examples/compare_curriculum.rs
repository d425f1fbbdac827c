//! Curriculum vs from-scratch comparison under an equal step budget.
//!
//! ```text
//! cargo run --release --example compare_curriculum -- <config> [n_seeds] [out_dir]
//! ```
//!
//! The curriculum arm follows `[2, 1, 0]`; the scratch arm trains on `[0]`
//! for the same total number of steps. Writes `comparison.csv` into `out_dir`.

use std::path::PathBuf;

use icrl::run::{compare_curriculum, RunConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 2 {
        anyhow::bail!("usage: compare_curriculum <config> [n_seeds] [out_dir]");
    }
    let base = RunConfig::load(&PathBuf::from(&args[1]))?;
    let n_seeds: u64 = args.get(2).map_or(Ok(5), |s| s.parse())?;
    let out = PathBuf::from(args.get(3).map_or("runs/comparison", String::as_str));
    let seeds: Vec<u64> = (1..=n_seeds).collect();
    let report = compare_curriculum(&base, &[2, 1, 0], &seeds, &out)?;
    print!("{}", report.to_csv());
    let (curr, scratch) = (report.mean_curriculum(), report.mean_scratch());
    println!("mean zero-shot composite: curriculum {curr:.4}, scratch {scratch:.4}");
    println!("final-stage valid-search trend nondecreasing: {}", report.curriculum_search_trend_ok());
    println!("slowest seed: {:.0} s", report.slowest_seed_secs());
    Ok(())
}
