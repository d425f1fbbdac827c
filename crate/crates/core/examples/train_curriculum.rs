//! Train through a staged demonstration schedule and write the run directory.
//!
//! ```text
//! cargo run --release --example train_curriculum -- [config] [out_dir]
//! ```

use std::path::PathBuf;

use icrl::run::{train, Experiment, RunConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "configs/curriculum.toml".into());
    let cfg = RunConfig::load(&PathBuf::from(path))?;
    let out = args.next().map_or_else(|| cfg.resolved_output_dir(), PathBuf::from);
    let exp = Experiment::prepare(&cfg)?;
    println!(
        "schedule {:?}, {} steps per stage, {} train / {} test questions",
        cfg.schedule.stages,
        cfg.schedule.steps_per_stage,
        exp.train.len(),
        exp.test.len()
    );
    let summary = train(&exp, &out, None)?;
    for (step, k, m) in summary.history.iter().step_by(cfg.schedule.steps_per_stage.div_ceil(4).max(1)) {
        println!(
            "step {step:>4} k={k}  reward {:.3}  format {:.3}  searches {:.2}",
            m.mean_reward, m.mean_format_reward, m.valid_search_mean
        );
    }
    print!("{}", summary.eval.to_csv());
    println!("wrote {}", out.display());
    Ok(())
}
