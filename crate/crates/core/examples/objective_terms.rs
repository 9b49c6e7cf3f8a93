//! Presence and binding terms on hand-made attention maps.

use frap::prelude::*;

fn blob(p: usize, r0: f64, c0: f64, height: f64) -> Grid2D {
    Grid2D::from_fn(p, |r, c| {
        let d2 = (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2);
        height * (-d2 / 4.0).exp()
    })
}

fn main() -> Result<()> {
    let cfg = ObjectiveConfig::default();
    let object = blob(16, 5.0, 5.0, 0.8);
    let near = blob(16, 6.0, 5.0, 0.6);
    let far = blob(16, 13.0, 12.0, 0.6);

    println!("presence (strong object)   {:.4}", presence_loss(&object, &cfg)?);
    println!(
        "presence (faint object)    {:.4}",
        presence_loss(&blob(16, 5.0, 5.0, 0.1), &cfg)?
    );
    println!("binding, modifier nearby   {:.6}", binding_loss(&object, &near, &cfg)?);
    println!("binding, modifier far away {:.6}", binding_loss(&object, &far, &cfg)?);
    println!("upper bound 1/P^2          {:.6}", 1.0 / 256.0);

    for variant in [BindingVariant::Jsd, BindingVariant::Kld] {
        let c = ObjectiveConfig {
            binding_variant: variant,
            ..cfg.clone()
        };
        println!("{variant:?} divergence (far)  {:.6}", binding_loss(&object, &far, &c)?);
    }

    let smoothed = smooth(&object, &cfg.kernel)?;
    println!(
        "max before/after smoothing {:.4} / {:.4}",
        grid_max(&object),
        grid_max(&smoothed)
    );
    Ok(())
}
