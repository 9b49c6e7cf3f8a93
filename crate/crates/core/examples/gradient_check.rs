//! Analytic gradients against central differences.
//!
//! cargo run --release --example gradient_check -- 100

use frap::grad::{central_difference, loss_and_grad, loss_at};
use frap::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let report = grad_check(&GradCheckConfig::default(), trials, 1e-4, 1e-4)?;
    println!(
        "{}/{} passed, max relative error {:.2e}",
        report.passed,
        report.trials.len(),
        report.max_rel_error
    );

    // One gradient in detail.
    let prompt = parse_annotated("a [m1:red] [o1:apple] and a [o2:horse]", 16)?;
    let den = ToyDenoiser::new(0);
    let emb = ToyTextEncoder::new(0, 8).encode(&prompt);
    let z = Latent::gaussian(16, 4, &mut ChaCha8Rng::seed_from_u64(3));
    let w = TokenWeights::neutral(&prompt);
    let cfg = ObjectiveConfig::default();
    let (loss, grad) = loss_and_grad(&den, &emb, &z, 45, &prompt, &w, &cfg)?;
    let numeric = central_difference(&w.alpha, 1e-4, |a| {
        Ok(loss_at(&den, &emb, &z, 45, &prompt, &w.clone().with_alpha(a.to_vec())?, &cfg)?.total)
    })?;
    println!("loss {:.6}", loss.total);
    for (i, tok) in prompt.tokens().iter().enumerate().take(8) {
        println!("{tok:>8} analytic {:+.8} numeric {:+.8}", grad[i], numeric[i]);
    }
    Ok(())
}
