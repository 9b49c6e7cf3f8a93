//! Scoring a batch of starting latents and restarting from the best one.

use frap::pipeline::select_latent;
use frap::prelude::*;

fn main() -> Result<()> {
    let prompt = parse_annotated("a [m1:blue] [o1:bench] and a [m2:yellow] [o2:kite]", 16)?;
    let den = ToyDenoiser::new(0);
    let emb = ToyTextEncoder::new(0, 8).encode(&prompt);
    let objective = ObjectiveConfig::default();
    for batch in [1, 4, 8] {
        let cfg = LoopConfig {
            batch,
            seed: 5,
            ..LoopConfig::default()
        };
        let sel = select_latent(&den, &emb, &prompt, &objective, &cfg)?;
        let losses: Vec<String> = sel.losses.iter().map(|l| format!("{l:.4}")).collect();
        println!(
            "B={batch}: losses [{}] -> b*={} ({} calls)",
            losses.join(", "),
            sel.b_star,
            sel.calls
        );
    }
    Ok(())
}
