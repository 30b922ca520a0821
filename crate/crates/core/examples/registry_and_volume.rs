//! Publishes a dataset and a model, lists both stores, and shows that a
//! corrupted artifact is refused.

use robustops::data::{make_synthetic, DatasetRegistry};
use robustops::nn::{Architecture, Model};
use robustops::orchestrator::{ModelRole, ModelVolume, NewModel};
use robustops::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let registry = DatasetRegistry::new(dir.path());
    let volume = ModelVolume::new(dir.path());

    let data = make_synthetic(5, 10, 0)?.with_identity("digits", "1");
    let entry = registry.put(&data)?;
    assert_eq!(registry.get("digits", "1")?, data);
    println!("dataset {} checksum {}", entry.reference(), &entry.checksum[..16]);
    if let Err(e) = registry.put(&data) {
        println!("second put refused: {e}");
    }

    let rec = volume.store(NewModel {
        role: ModelRole::Baseline,
        model: Model::new(Architecture::SmallCnn, 0)?,
        baseline_accuracy: 0.1,
        train_config: None,
        defense_config: None,
        parent_model_id: None,
    })?;
    for m in volume.list()? {
        println!("model {} ({}, {:?})", m.model_id, m.role, m.architecture);
    }

    let params = dir.path().join("volume/models").join(&rec.meta.model_id).join("params.bin");
    let mut bytes = std::fs::read(&params).expect("read params");
    bytes[100] ^= 0x01;
    std::fs::write(&params, bytes).expect("write params");
    match volume.load(&rec.meta.model_id) {
        Err(e) => println!("after flipping one bit: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    Ok(())
}
