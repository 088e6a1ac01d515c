// Runs the same budget under every training schedule from one shared
// starting policy and prints the final held-out numbers side by side.
//
// cargo run --release --example schedules -- [steps] [seed]

use selfverify::scheduler::{base_policy, Trainer};
use selfverify::{Regime, TrainConfig};

fn main() -> selfverify::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(Ok(150), |s| s.parse()).expect("steps must be an integer");
    let seed = args.next().map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");
    let base = TrainConfig {
        total_steps: steps,
        eval_every: steps,
        verify_init_steps: steps / 3,
        seed,
        ..TrainConfig::default()
    };
    let start = base_policy(&base)?;

    println!("{:<13} {:>6} {:>7} {:>7} {:>6}", "regime", "steps", "acc@k", "verify", "secs");
    for regime in [Regime::Generate, Regime::SelfVerify, Regime::Mixed, Regime::VerifyInit, Regime::VerifyAlter] {
        let config = TrainConfig { regime, ..base.clone() };
        let mut trainer = Trainer::with_params(config, start.clone())?;
        let report = trainer.run(&mut ())?;
        let last = report.last_eval().expect("final evaluation");
        println!(
            "{:<13} {:>6} {:>7.3} {:>7} {:>6.1}",
            regime.name(),
            report.metrics.len(),
            last.accuracy,
            last.verification_accuracy.map_or("-".into(), |v| format!("{v:.3}")),
            report.wall_clock_secs
        );
    }
    Ok(())
}
