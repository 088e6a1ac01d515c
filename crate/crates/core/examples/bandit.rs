// Runs the trainer on a two-armed, single-token bandit where arm A always
// pays; the probability of pulling A should approach 1.
//
// cargo run --release --example bandit

use selfverify::acceptance::{bandit_config, bandit_correct_probability};
use selfverify::scheduler::Trainer;

fn main() -> selfverify::Result<()> {
    let config = bandit_config();
    let mut trainer = Trainer::new(config.clone())?;
    println!("step  P(A)");
    println!("{:>4}  {:.4}", 0, bandit_correct_probability(trainer.params()));
    while !trainer.is_finished() {
        trainer.run_steps(25, &mut ())?;
        println!("{:>4}  {:.4}", trainer.step(), bandit_correct_probability(trainer.params()));
    }
    Ok(())
}
