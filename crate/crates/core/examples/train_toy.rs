//! Trains the small transformer on the synthetic real/shuffled corpus.
//!
//! Usage: `cargo run --release --example train_toy -- [batch] [epochs] [lr] [positions] [videos] [windows] [column|row]`
//!
//! `positions` is `zeros`, `normal`, or a sinusoid scale such as `0.5`.
//! `column` fakes permute whole columns; `row` fakes permute each row in time.

use std::time::Instant;

use facepulse::toy::{toy_dataset, FakeMode, ToySpec};
use facepulse::train::{evaluate, train_loop_with, Sample, TrainConfig};
use facepulse::vit::ViTConfig;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());

    let started = Instant::now();
    let spec = ToySpec {
        videos: arg(4, "40").parse()?,
        windows_per_video: arg(5, "10").parse()?,
        fake: if arg(6, "column") == "row" { FakeMode::RowShuffle } else { FakeMode::ColumnShuffle },
        ..ToySpec::default()
    };
    let data = toy_dataset(&spec)?;
    let to_samples = |maps: &[facepulse::stmap::MemstMap]| maps.iter().map(Sample::from_map).collect::<Result<Vec<_>, _>>();
    let (train, val, test) = (to_samples(&data.train)?, to_samples(&data.val)?, to_samples(&data.test)?);
    println!(
        "corpus: {} train / {} val / {} test maps in {:.1}s",
        train.len(),
        val.len(),
        test.len(),
        started.elapsed().as_secs_f64()
    );

    let cfg = TrainConfig {
        batch_size: arg(0, "8").parse()?,
        epochs: arg(1, "30").parse()?,
        learning_rate: arg(2, "5e-5").parse()?,
        seed: 7,
        target_accuracy: Some(1.0),
        positional_init: match arg(3, "zeros").as_str() {
            "zeros" => facepulse::vit::PositionalInit::Zeros,
            "normal" => facepulse::vit::PositionalInit::TruncatedNormal,
            s => facepulse::vit::PositionalInit::Sinusoidal { scale: s.parse()? },
        },
        ..TrainConfig::default()
    };
    let started = Instant::now();
    let outcome = train_loop_with(&train, &val, ViTConfig::toy(), &cfg, |m| {
        println!(
            "epoch {:2}  loss {:.4}  train acc {:.3}  val acc {:.3}  ({:.0}s)",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            m.val_accuracy.unwrap_or(f64::NAN),
            started.elapsed().as_secs_f64()
        );
    })?;
    let test_summary = evaluate(&test, &outcome.params)?;
    println!("best epoch {}, test accuracy {:.3}", outcome.best_epoch, test_summary.accuracy);
    Ok(())
}
