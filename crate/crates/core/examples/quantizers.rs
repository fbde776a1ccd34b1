//! Fake quantization of one weight tensor with every candidate kind, plus the
//! straight-through gradient mask.
//!
//! Run with `cargo run --example quantizers`.

use mixq::quant::{affine_scale, payload_bits, quantize_affine, quantize_binary, ste_backward, QuantCandidate};
use mixq::Tensor;

fn main() -> mixq::Result<()> {
    let w = Tensor::vector(&[0.9, -0.4, 0.1, -1.3, 0.05, 0.7]);
    println!("weights         {:?}", w.data());
    println!("binary          {:?}", quantize_binary(&w).data());
    for bits in [2, 4, 8] {
        let q = quantize_affine(&w, bits);
        let worst = w.data().iter().zip(q.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{bits}-bit affine    {:?}  (scale {:.4}, max error {:.4})",
            q.data(),
            affine_scale(&w, bits),
            worst
        );
    }

    // Gradients pass straight through where |w| <= clip and are zeroed elsewhere.
    let upstream = Tensor::ones(w.shape());
    let masked = ste_backward(&upstream, &w, 1.0)?;
    println!("STE mask (clip 1) {:?}", masked.data());

    for c in [QuantCandidate::binary(), QuantCandidate::affine(8), QuantCandidate::float32()] {
        println!("{:>8}: {} bits for 1000 weights", c.label(), payload_bits(&c, 1000));
    }
    Ok(())
}
