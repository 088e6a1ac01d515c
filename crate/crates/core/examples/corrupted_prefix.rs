// Overwrites tokens in the policy's own greedy reasoning and measures how
// often it still reaches the right answer when continuing from there.
//
// cargo run --release --example corrupted_prefix -- [seed]

use selfverify::evaluator::{corrupted_prefix_eval, EvalSet};
use selfverify::scheduler::base_policy;
use selfverify::task_env::CorruptionConfig;
use selfverify::TrainConfig;

fn main() -> selfverify::Result<()> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let params = base_policy(&config)?;
    let set = EvalSet::generate(&config.task, seed, config.eval.size)?;

    println!("corrupted  keep  success  evaluated  skipped");
    for keep in [1.0, 0.5] {
        for count in 0..4 {
            let corruption = CorruptionConfig {
                corrupt_count: count,
                keep_fraction: keep,
            };
            let r = corrupted_prefix_eval(&params, &set, &corruption, &config.eval.decode, seed)?;
            println!("{count:>9}  {keep:>4}  {:>7.3}  {:>9}  {:>7}", r.success_rate, r.evaluated, r.skipped);
        }
    }
    Ok(())
}
