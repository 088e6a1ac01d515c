// Trains on the answer-generation task alone and prints held-out accuracy.
//
// cargo run --release --example generate_training -- [steps] [seed]

use selfverify::scheduler::{run_generate, TrainReport};
use selfverify::TrainConfig;

fn main() -> selfverify::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(Ok(150), |s| s.parse()).expect("steps must be an integer");
    let seed = args.next().map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");
    let config = TrainConfig {
        total_steps: steps,
        seed,
        ..TrainConfig::default()
    };
    let report = run_generate(&config)?;
    print_report(&report);
    Ok(())
}

fn print_report(report: &TrainReport) {
    println!("step  acc@k   tokens  verify");
    for e in &report.evals {
        let verify = e.verification_accuracy.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:>4}  {:.3}  {:>6.2}  {verify}", e.step, e.accuracy, e.avg_tokens);
    }
    println!("wall clock {:.1}s", report.wall_clock_secs);
}
