//! One adaptive-weighting run on an annotated prompt.
//!
//! cargo run --example quickstart -- "a [m1:pink] [o1:crown] and a [m2:green] [o2:apple]"

use frap::prelude::*;

fn main() -> Result<()> {
    let markup = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "a [m1:pink] [o1:crown] and a [m2:green] [o2:apple]".into());
    let prompt = parse_annotated(&markup, 16)?;
    let denoiser = ToyDenoiser::new(0);
    let emb = ToyTextEncoder::new(0, denoiser.embed_dim()).encode(&prompt);

    let record = run(
        &denoiser,
        &emb,
        &prompt,
        &ObjectiveConfig::default(),
        &LoopConfig::default(),
    )?;

    println!("{}", prompt.text());
    println!(
        "selected latent {} of 4, {} denoiser calls",
        record.b_star.unwrap_or(1),
        record.call_count
    );
    println!(
        "{:>4} {:>9} {:>9} {:>10}  phi(objects)",
        "t", "total", "presence", "binding"
    );
    for ((t, loss), phi) in record.steps.iter().zip(&record.losses).zip(&record.phi) {
        let objs: Vec<String> = prompt.objects().iter().map(|&s| format!("{:.3}", phi[s])).collect();
        println!(
            "{t:>4} {:>9.5} {:>9.5} {:>10.6}  {}",
            loss.total,
            loss.presence,
            loss.binding,
            objs.join(" ")
        );
    }
    let out = std::env::temp_dir().join("frap-quickstart.ppm");
    record.image.write_ppm(&out)?;
    println!("image written to {}", out.display());
    Ok(())
}
