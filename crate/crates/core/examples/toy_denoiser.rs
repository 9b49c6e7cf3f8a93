//! Plain generation with the toy denoiser: attention, guidance and the
//! deterministic update, step by step.

use frap::denoiser::DenoiserState;
use frap::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let prompt = parse_annotated("a [o1:dog] and a [o2:cat]", 16)?;
    let denoiser = ToyDenoiser::new(7);
    let emb = ToyTextEncoder::new(7, denoiser.embed_dim()).encode(&prompt);
    let z = Latent::gaussian(
        denoiser.latent_size(),
        denoiser.channels(),
        &mut ChaCha8Rng::seed_from_u64(1),
    );

    let mut state = DenoiserState::new(z, denoiser.steps());
    for t in (1..=denoiser.steps()).rev() {
        let (cond, attn) = denoiser.forward(&state.z, t, &emb.conditional)?;
        let (uncond, _) = denoiser.forward(&state.z, t, &emb.unconditional)?;
        state.record_call();
        if t % 10 == 0 {
            let dog = attn.token_map(2)?;
            let cat = attn.token_map(5)?;
            println!(
                "t={t:>2} alpha_bar={:.4} max attention dog {:.3} cat {:.3}",
                denoiser.schedule().alpha_bar(t),
                grid_max(&dog),
                grid_max(&cat)
            );
        }
        let noise = cfg_noise(&cond, &uncond, 7.5)?;
        state.z = denoiser.step(&state.z, t, &noise)?;
    }
    let image = denoiser.decode(&state.z);
    let out = std::env::temp_dir().join("frap-toy.ppm");
    image.write_ppm(&out)?;
    println!(
        "{} calls, image {:?} written to {}",
        state.calls(),
        image.shape(),
        out.display()
    );
    Ok(())
}
