//! Compare two demonstration schedules and print their cumulative finish
//! tables side by side.
//!
//! ```text
//! cargo run --release --example ablation -- [config] [out_dir]
//! ```

use std::path::PathBuf;

use icrl::run::{ablation, RunConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "configs/ablation.toml".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/ablation".into()));
    let base = RunConfig::load(&PathBuf::from(path))?;
    let rows = ablation(&base, &[vec![3, 2, 0], vec![3, 2, 1, 0]], &out)?;
    for r in &rows {
        println!("{:?}: {} steps, zero-shot composite {:.3}, em {:.3}", r.schedule, r.steps, r.eval_composite, r.eval_em);
    }
    println!("turns  {}", rows.iter().map(|r| format!("{:>12?}", r.schedule)).collect::<String>());
    for n in rows[0].finish.keys() {
        let cells: String = rows.iter().map(|r| format!("{:>11.1}%", r.finish[n])).collect();
        println!("{n:>5}  {cells}");
    }
    println!("wrote {}", out.join("ablation.csv").display());
    Ok(())
}
