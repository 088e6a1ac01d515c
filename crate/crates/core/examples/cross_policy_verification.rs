// Trains one policy on generation and one on self-verification, then lets
// each judge both its own candidates and the other's.
//
// cargo run --release --example cross_policy_verification -- [steps] [seed]

use selfverify::evaluator::{own_candidate_set, verification_accuracy, EvalSet};
use selfverify::scheduler::{base_policy, Trainer};
use selfverify::{PolicyParams, Regime, TrainConfig};

fn main() -> selfverify::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(Ok(200), |s| s.parse()).expect("steps must be an integer");
    let seed = args.next().map_or(Ok(0), |s| s.parse()).expect("seed must be an integer");
    let base = TrainConfig {
        total_steps: steps,
        eval_every: steps,
        seed,
        ..TrainConfig::default()
    };
    let start = base_policy(&base)?;
    let train = |regime| -> selfverify::Result<PolicyParams> {
        let mut trainer = Trainer::with_params(TrainConfig { regime, ..base.clone() }, start.clone())?;
        trainer.run(&mut ())?;
        Ok(trainer.params().clone())
    };
    let policies = [("generate", train(Regime::Generate)?), ("self_verify", train(Regime::SelfVerify)?)];

    let set = EvalSet::generate(&base.task, seed, base.eval.size)?;
    let ev = &base.eval;
    println!("{:<12} {:<12} {:>8} {:>9}", "verifier", "candidates", "accuracy", "triplets");
    for (cand_name, cand) in &policies {
        let triplets = own_candidate_set(cand, &set, ev.verify_candidates, &ev.decode, seed)?;
        for (judge_name, judge) in &policies {
            let acc = verification_accuracy(judge, &triplets, ev.verify_k, &ev.decode, seed)?;
            println!("{judge_name:<12} {cand_name:<12} {acc:>8.3} {:>9}", triplets.len());
        }
    }
    Ok(())
}
