//! Compares backpropagation against central differences on the small model.
//!
//! `cargo run --release --example gradient_check -- [trials]`

use facepulse::stmap::{Label, MemstMap};
use facepulse::train::{finite_diff_check, Sample};
use facepulse::vit::{ViTConfig, ViTParams};
use ndarray::Array3;
use rand::{Rng, SeedableRng};

fn main() -> anyhow::Result<()> {
    let trials: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(210);
    let config = ViTConfig { dropout_rate: 0.0, ..ViTConfig::toy() };
    let params = ViTParams::random(config, 0.1, 3)?;
    println!("{} parameters", params.parameter_count());

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let values = Array3::from_shape_fn((60, 196, 3), |_| rng.random::<f32>());
    let sample = Sample::from_map(&MemstMap::new(values, "random", 0, Label::Fake)?)?;

    let report = finite_diff_check(&params, &sample, 1e-5, trials, 1)?;
    for (kind, err) in &report.per_kind {
        println!("{kind:>12}: {err:.2e}");
    }
    println!("max relative error over {} coordinates: {:.2e}", report.trials, report.max_relative_error);
    Ok(())
}
