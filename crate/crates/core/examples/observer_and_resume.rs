// Streams step records through an observer, stops halfway, checkpoints to
// disk and resumes from the file.
//
// cargo run --release --example observer_and_resume

use selfverify::scheduler::{Checkpoint, TrainObserver, Trainer};
use selfverify::{Regime, StepRecord, TrainConfig};

struct Printer;

impl TrainObserver for Printer {
    fn on_record(&mut self, r: &StepRecord) -> selfverify::Result<()> {
        println!(
            "step {:>3} {:<11} reward {:.3}  grad {:.4}  gen/verify groups {}/{}",
            r.step, r.regime, r.mean_reward, r.grad_norm, r.generation_groups, r.verification_groups
        );
        Ok(())
    }
}

fn main() -> selfverify::Result<()> {
    let config = TrainConfig {
        regime: Regime::VerifyAlter,
        total_steps: 10,
        alternation_period_n: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config)?;
    let half = trainer.plan().len() / 2;
    trainer.run_steps(half, &mut Printer)?;

    let path = std::env::temp_dir().join("svrl-example-checkpoint.json");
    trainer.checkpoint()?.save(&path)?;
    println!("checkpoint written to {}", path.display());

    let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&path)?)?;
    resumed.run_steps(usize::MAX, &mut Printer)?;
    let eval = resumed.evaluate()?;
    println!("final acc@k {:.3}, avg tokens {:.2}", eval.accuracy, eval.avg_tokens);
    std::fs::remove_file(&path).ok();
    Ok(())
}
