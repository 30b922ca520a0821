//! Reads the bundled MNIST subset (gzipped IDX) and prints its class
//! balance.

use std::path::Path;

use robustops::data::load_idx;
use robustops::Result;

fn main() -> Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset");
    for split in ["train", "t10k"] {
        let d = load_idx(
            &dir.join(format!("{split}-images-idx3-ubyte.gz")),
            &dir.join(format!("{split}-labels-idx1-ubyte.gz")),
        )?;
        let mut counts = [0usize; 10];
        for &l in d.labels() {
            counts[l as usize] += 1;
        }
        println!("{split}: {} images {:?}, per class {counts:?}", d.len(), d.images().shape());
    }
    Ok(())
}
