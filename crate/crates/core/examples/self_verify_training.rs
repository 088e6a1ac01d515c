// Trains only on judging the policy's own candidates, then reports how
// answer accuracy moved even though no generation reward was ever used.
//
// cargo run --release --example self_verify_training -- [steps] [seed]

use selfverify::scheduler::run_self_verify;
use selfverify::TrainConfig;

fn main() -> selfverify::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(Ok(300), |s| s.parse()).expect("steps must be an integer");
    let seed = args.next().map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");
    let config = TrainConfig {
        regime: selfverify::Regime::SelfVerify,
        total_steps: steps,
        eval_every: 50,
        seed,
        ..TrainConfig::default()
    };
    let report = run_self_verify(&config)?;

    println!("step  acc@k   verify  reward");
    for e in &report.evals {
        let window: Vec<f64> = report
            .metrics
            .iter()
            .filter(|r| r.step <= e.step && r.step + 50 > e.step)
            .map(|r| r.mean_reward)
            .collect();
        let reward = if window.is_empty() {
            "-".to_string()
        } else {
            format!("{:.3}", window.iter().sum::<f64>() / window.len() as f64)
        };
        let verify = e.verification_accuracy.map_or("-".into(), |v| format!("{v:.3}"));
        println!("{:>4}  {:.3}  {verify:>6}  {reward:>6}", e.step, e.accuracy);
    }
    if let (Some(first), Some(last)) = (report.first_eval(), report.last_eval()) {
        println!("generation accuracy {:+.1} points", 100.0 * (last.accuracy - first.accuracy));
    }
    Ok(())
}
