//! Saves an HRED model, reloads it and checks the bytes and the failure modes.

use datml::cli::{load_checkpoint, payload_path, save_checkpoint, CheckpointError};
use datml::hred::{HredConfig, HredModel, LatentShape};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = HredConfig {
        vocab_size: 50,
        embed_dim: 8,
        hidden_dim: 12,
        dropout: 0.3,
        latent: Some(LatentShape { y: 10, k: 5 }),
        max_context: 4,
    };
    let model = HredModel::new(config.clone(), 7)?;
    let dir = std::env::temp_dir().join(format!("datml-ckpt-{}", std::process::id()));
    let stem = dir.join("hred");
    let manifest = save_checkpoint(&model.params, "hred", &serde_json::to_value(&config)?, "example", &stem)?;
    println!("{} tensors, {} payload bytes", manifest.params.len(), manifest.payload_bytes);
    for r in manifest.params.iter().take(4) {
        println!("  {:<10} {:?} @ {}", r.name, r.shape, r.offset);
    }

    let (params, _) = load_checkpoint(&stem, "hred")?;
    println!("bitwise equal: {}", params.values_equal(&model.params));

    match load_checkpoint(&stem, "divae") {
        Err(e @ CheckpointError::KindMismatch { .. }) => println!("wrong kind: {e}"),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    let bytes = std::fs::read(payload_path(&stem))?;
    std::fs::write(payload_path(&stem), &bytes[..bytes.len() - 4])?;
    match load_checkpoint(&stem, "hred") {
        Err(e @ CheckpointError::Truncated { .. }) => println!("truncated: {e}"),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    std::fs::remove_dir_all(dir)?;
    Ok(())
}
