// Compares plain majority voting with verification-weighted voting on a
// self-verify-trained policy, sweeping the weight given to the policy's own
// YES rate.
//
// cargo run --release --example voting -- [steps] [seed]

use selfverify::evaluator::{voting_accuracy, EvalSet, VoteConfig};
use selfverify::scheduler::Trainer;
use selfverify::{Regime, TrainConfig};

fn main() -> selfverify::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(Ok(300), |s| s.parse()).expect("steps must be an integer");
    let seed = args.next().map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");
    let config = TrainConfig {
        regime: Regime::SelfVerify,
        total_steps: steps,
        eval_every: steps,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config.clone())?;
    trainer.run(&mut ())?;
    let params = trainer.params();
    let set = EvalSet::generate(&config.task, seed, config.eval.size)?;

    println!("lambda  majority  with_verify  agreement");
    for lambda in [0.0, 0.25, 1.0, 4.0] {
        let vote = VoteConfig {
            combine_lambda: lambda,
            ..config.eval.vote.clone()
        };
        let acc = voting_accuracy(params, &config.task, &set, &vote, &config.eval.decode, seed)?;
        println!("{lambda:>6}  {:>8.3}  {:>11.3}  {:>9.3}", acc.majority, acc.with_verify, acc.agreement);
    }
    Ok(())
}
