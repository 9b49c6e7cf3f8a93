//! Markup parsing, bounded token weights and embedding interpolation.

use frap::prelude::*;

fn main() -> Result<()> {
    let prompt = parse_annotated("a [m1:pink] [o1:crown] and a [m2:green] [o2:apple]", 16)?;
    println!("tokens  {:?}", prompt.tokens());
    println!("objects {:?}", prompt.objects());
    println!("pairs   {:?}", prompt.pairs());
    println!("frozen  {:?}", prompt.frozen());
    println!("json    {}", serde_json::to_string(&prompt)?);

    let alpha: Vec<f64> = (0..prompt.len())
        .map(|i| if i == 3 { 3f64.ln() } else { 0.0 })
        .collect();
    let weights = TokenWeights::neutral(&prompt).with_alpha(alpha)?;
    let phi = weights_from_alpha(&weights);
    println!(
        "phi     {:?}",
        phi.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>()
    );

    let emb = ToyTextEncoder::new(0, 8).encode(&prompt);
    let weighted = weighted_embedding(&emb, &phi)?;
    let row = |m: &[f64], i: usize| {
        m[i * 8..(i + 1) * 8]
            .iter()
            .map(|v| format!("{v:+.2}"))
            .collect::<Vec<_>>()
    };
    println!("crown c^y      {:?}", row(&emb.conditional, 3));
    println!("crown c^null   {:?}", row(&emb.unconditional, 3));
    println!("crown weighted {:?}", row(&weighted, 3));

    for markup in ["a [m1:red] cat", "a <pad> [o1:dog]"] {
        println!("{markup:?} -> {}", parse_annotated(markup, 16).unwrap_err());
    }
    Ok(())
}
