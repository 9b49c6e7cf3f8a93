//! The loop variants side by side from one selected latent.

use frap::pipeline::{run_from, select_latent, Variant};
use frap::prelude::*;

fn main() -> Result<()> {
    let prompt = parse_annotated("a [m1:red] [o1:chair] and a [m2:white] [o2:balloon]", 16)?;
    let den = ToyDenoiser::new(0);
    let emb = ToyTextEncoder::new(0, 8).encode(&prompt);
    let objective = ObjectiveConfig::default();
    let base = LoopConfig::default();
    let z_t = select_latent(&den, &emb, &prompt, &objective, &base)?.z_t;

    println!("{:<18} {:>6} {:>10} {:>10}", "variant", "calls", "mean loss", "final");
    for variant in Variant::ALL {
        let cfg = LoopConfig {
            variant,
            ..base.clone()
        };
        let rec = run_from(&den, &emb, &prompt, &objective, &cfg, z_t.clone())?;
        let mean = rec.losses.iter().map(|l| l.total).sum::<f64>() / rec.losses.len() as f64;
        let calls = rec.call_count + cfg.selection_steps() as u64;
        println!(
            "{:<18} {:>6} {:>10.5} {:>10.5}",
            variant.name(),
            calls,
            mean,
            rec.final_loss().map_or(f64::NAN, |l| l.total)
        );
    }
    Ok(())
}
