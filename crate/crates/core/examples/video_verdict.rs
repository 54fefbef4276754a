//! Aggregates per-map probabilities into a video verdict.
//!
//! `cargo run --example video_verdict`

use facepulse::decide::{video_verdict, MapPrediction};

fn show(name: &str, probs: &[[f64; 2]]) -> anyhow::Result<()> {
    let preds: Vec<MapPrediction> = probs.iter().enumerate().map(|(i, &p)| MapPrediction::new(format!("{name}#{i}"), p)).collect();
    let v = video_verdict(name, &preds)?;
    println!(
        "{name:>10}: {:?} (real {} / fake {} votes, mean probs [{:.2}, {:.2}]{})",
        v.verdict,
        v.votes.real,
        v.votes.fake,
        v.mean_probs[0],
        v.mean_probs[1],
        if v.tie_break { ", tie broken by mean" } else { "" }
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    show("majority", &[[0.2, 0.8], [0.3, 0.7], [0.1, 0.9], [0.6, 0.4], [0.7, 0.3]])?;
    show("tied", &[[0.45, 0.55], [0.1, 0.9], [0.55, 0.45], [0.5, 0.5]])?;
    show("single", &[[0.8, 0.2]])?;
    println!("{}", serde_json::to_string_pretty(&video_verdict("json", &[MapPrediction::new("a", [0.3, 0.7])])?)?);
    Ok(())
}
