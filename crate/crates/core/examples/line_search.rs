//! Objective along the negative gradient at a fixed latent and step.

use frap::pipeline::initial_latents;
use frap::prelude::*;

fn main() -> Result<()> {
    let prompt = parse_annotated("a [m1:purple] [o1:clock] and a [m2:orange] [o2:vase]", 16)?;
    let den = ToyDenoiser::new(0);
    let emb = ToyTextEncoder::new(0, 8).encode(&prompt);
    let z = initial_latents(&den, &LoopConfig::default()).remove(0);
    let w = TokenWeights::neutral(&prompt);
    let etas = [1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0];
    for row in line_search_probe(&den, &emb, &z, 50, &prompt, &w, &ObjectiveConfig::default(), &etas)? {
        println!("eta {:>8} loss {:.6}", row.eta, row.loss);
    }
    Ok(())
}
