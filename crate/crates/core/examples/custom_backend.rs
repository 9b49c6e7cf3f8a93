//! Plugging a different backend into the loop. This one wraps the toy
//! denoiser and counts raw network evaluations, which shows that a guided
//! step costs two evaluations but is accounted as one call.

use std::sync::atomic::{AtomicUsize, Ordering};

use frap::denoiser::Image;
use frap::prelude::*;
use frap::tape::{Tape, Var};

struct Counting {
    inner: ToyDenoiser,
    evaluations: AtomicUsize,
}

impl Denoiser for Counting {
    fn latent_size(&self) -> usize {
        self.inner.latent_size()
    }
    fn channels(&self) -> usize {
        self.inner.channels()
    }
    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }
    fn schedule(&self) -> &Schedule {
        self.inner.schedule()
    }
    fn forward(&self, z: &Latent, t: usize, emb: &[f64]) -> Result<(Latent, AttentionMap)> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.inner.forward(z, t, emb)
    }
    fn attention_on_tape(&self, tape: &mut Tape, z: &Latent, t: usize, emb: Var) -> Result<Var> {
        self.inner.attention_on_tape(tape, z, t, emb)
    }
    fn decode(&self, z0: &Latent) -> Image {
        self.inner.decode(z0)
    }
}

fn main() -> Result<()> {
    let prompt = parse_annotated("a [o1:zebra] and a [m1:green] [o2:umbrella]", 16)?;
    let den = Counting {
        inner: ToyDenoiser::new(0),
        evaluations: AtomicUsize::new(0),
    };
    let emb = ToyTextEncoder::new(0, 8).encode(&prompt);
    let rec = run(&den, &emb, &prompt, &ObjectiveConfig::default(), &LoopConfig::default())?;
    println!("accounted calls   {}", rec.call_count);
    println!("raw evaluations   {}", den.evaluations.load(Ordering::Relaxed));
    println!(
        "  selection       {} steps x 4 latents x 2 branches",
        LoopConfig::default().selection_steps()
    );
    println!("  generation      50 steps x 2 branches");
    Ok(())
}
