// Walks the verification data path by hand: sample candidates, filter them,
// buffer them, and draw a label-balanced batch of judging groups.
//
// cargo run --release --example pipeline

use selfverify::grpo::ClipConfig;
use selfverify::pipeline::{
    balance_and_sample, build_verification_groups, collect_candidates, filter_samples, CandidateBuffer,
};
use selfverify::rng::rng_from_seed;
use selfverify::scheduler::base_policy;
use selfverify::task_env::{Task, Vocabulary};
use selfverify::warmstart::WarmStartConfig;
use selfverify::TrainConfig;

fn main() -> selfverify::Result<()> {
    let config = TrainConfig {
        warm_start: WarmStartConfig {
            steps: 150,
            ..WarmStartConfig::default()
        },
        ..TrainConfig::default()
    };
    let params = base_policy(&config)?;
    let task = Task::default();
    let mut rng = rng_from_seed(3);
    let queries = (0..8)
        .map(|i| task.sample_query(&mut rng, i))
        .collect::<selfverify::Result<Vec<_>>>()?;

    let raw = collect_candidates(&params, &queries, 8, &config.decode, &mut rng, 0)?;
    let raw_len = raw.len();
    let kept = filter_samples(raw, config.decode.max_new_tokens);
    println!("{raw_len} candidates, {} survive filtering", kept.len());

    let mut buffer = CandidateBuffer::new(config.buffer.capacity);
    buffer.insert(kept);
    println!("buffer: {} correct, {} incorrect", buffer.count_label(true), buffer.count_label(false));

    let batch = balance_and_sample(&mut buffer, 8, &mut rng)?;
    for t in &batch {
        println!(
            "  query {:>2}  {} -> {}  {}",
            t.query_id,
            Vocabulary.render(&t.prompt_tokens),
            Vocabulary.render(&t.candidate_answer),
            if t.label { "correct" } else { "wrong" }
        );
    }
    if batch.is_empty() {
        println!("no balanced batch available");
        return Ok(());
    }
    let groups = build_verification_groups(&params, &batch, 8, &config.decode, &mut rng, ClipConfig::default().eps_norm, None)?;
    let rewards: f64 = groups.iter().flat_map(|g| &g.rewards).sum();
    let degenerate = groups.iter().filter(|g| g.is_degenerate()).count();
    println!(
        "{} judging groups, mean reward {:.3}, {degenerate} degenerate; {} triplets left in buffer",
        groups.len(),
        rewards / (8 * groups.len()) as f64,
        buffer.len()
    );
    Ok(())
}
