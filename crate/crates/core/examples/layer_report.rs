//! Saves a network with a mixed assignment to a checkpoint, loads it back and
//! prints the per-layer memory table.
//!
//! Run with `cargo run --example layer_report`.

use mixq::nn::{build_mnist_dwsep, Checkpoint};
use mixq::quant::QuantCandidate;
use mixq::report::{assignment_csv, layer_memory, layer_memory_csv};
use mixq::search::{apply_assignment, Assignment};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mixq::Result<()> {
    let net = build_mnist_dwsep(&mut ChaCha8Rng::seed_from_u64(0))?;
    let candidates = [QuantCandidate::binary(), QuantCandidate::affine(8)];
    // Small convolutions at 8 bits, the large classifier binary.
    let assignment = Assignment::from_indices(&net.specs(), &candidates, &[1, 1, 1, 1, 0])?;
    let quantized = apply_assignment(&net, &assignment)?;

    let mut ck = Checkpoint::new(quantized);
    ck.assignment = Some(assignment);
    let path = std::env::temp_dir().join("mixq-layer-report.ckpt");
    ck.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    assert_eq!(loaded, ck);

    let assignment = loaded.assignment.expect("saved with an assignment");
    print!("{}", assignment_csv(&assignment));
    print!("{}", layer_memory_csv(&layer_memory(&loaded.network.specs(), &assignment)?));
    println!("compression {:.2}x", assignment.compression_rate());
    std::fs::remove_file(path)?;
    Ok(())
}
