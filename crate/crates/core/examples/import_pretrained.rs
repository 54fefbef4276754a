//! Loads transformer weights exported in timm's safetensors layout.
//!
//! With a path argument the file is imported into the ViT-Base geometry
//! (head kept only when it has two classes). Without one, a random model is
//! exported and read back to show the round trip.
//!
//! `cargo run --release --example import_pretrained -- [weights.safetensors] [out.vitw]`

use std::path::PathBuf;

use facepulse::vit::import::{export_timm, import_timm, read_safetensors, write_safetensors};
use facepulse::vit::weights::write_weights;
use facepulse::vit::{ViTConfig, ViTParams};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let (path, config) = match args.next() {
        Some(p) => (PathBuf::from(p), ViTConfig::base()),
        None => {
            let path = std::env::temp_dir().join("facepulse-random.safetensors");
            write_safetensors(&export_timm(&ViTParams::random(ViTConfig::toy(), 0.02, 5)?), &path)?;
            (path, ViTConfig::toy())
        }
    };
    let tensors = read_safetensors(&path)?;
    println!("{} tensors in {}", tensors.len(), path.display());
    let params = import_timm(&tensors, config, 0)?;
    println!("imported D={} L={} H={} ({} parameters)", config.hidden_dim, config.num_layers, config.num_heads, params.parameter_count());
    if let Some(out) = args.next() {
        write_weights(&params, std::path::Path::new(&out))?;
        println!("saved {out}");
    }
    Ok(())
}
