//! One relaxed dense layer: the softmax mixture over a binary and an 8-bit
//! branch, the expected payload, and their gradients with respect to the
//! logits.
//!
//! Run with `cargo run --example relaxed_layer`.

use mixq::autodiff::Graph;
use mixq::nn::{LayerKind, LayerSpec, QuantLayer};
use mixq::quant::QuantCandidate;
use mixq::search::{expected_size, mix_forward};
use mixq::Tensor;

fn main() -> mixq::Result<()> {
    let spec = LayerSpec {
        name: "fc".into(),
        kind: LayerKind::Dense,
        weight_shape: vec![3, 4],
        quantizable: true,
    };
    let weight = Tensor::from_fn(&[3, 4], |i| ((i * 7 % 11) as f64 - 5.0) / 6.0);
    let candidates = [QuantCandidate::binary(), QuantCandidate::affine(8)];
    let mut layer = QuantLayer::new(spec.clone(), weight)?;
    // One batch norm per candidate, weights clipped for the binary branch.
    layer.norms = vec![layer.norms[0].clone(); candidates.len()];
    layer.precision = mixq::nn::Precision::Relaxed(candidates.to_vec());
    layer.clip_weights();

    for logits in [[0.0, 0.0], [2.0, -1.0], [40.0, -40.0]] {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[5, 4], |i| (i as f64 * 0.37).sin()));
        let vars = layer.bind(&mut g, false);
        let alpha = g.param(Tensor::vector(&logits));
        let (y, _) = mix_forward(&mut g, x, &layer, &vars, alpha, true)?;
        let size = expected_size(&mut g, &[alpha], std::slice::from_ref(&spec), &candidates)?;
        let out = g.value(y).data()[..3].to_vec();
        let grads = g.backward(size)?;
        println!(
            "logits {logits:?}: first outputs {out:.3?}, expected size {:.2} bits, dG/dalpha {:.3?}",
            g.value(size).item()?,
            grads.get(alpha).expect("logit gradient").data()
        );
    }
    Ok(())
}
