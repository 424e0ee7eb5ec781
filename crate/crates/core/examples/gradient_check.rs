//! Compare the network's backward pass with central finite differences in
//! double precision on a tiny model.
//!
//! cargo run --release --example gradient_check

use tist::model::{ModelConfig, SegmentationNetwork, UNet};
use tist::rng::derive_rng;
use tist::tensor::Tensor3;

fn main() -> tist::Result<()> {
    run()
}

pub fn run() -> tist::Result<()> {
    let cfg = ModelConfig { in_channels: 1, num_classes: 2, base_width: 2 };
    let net = UNet::<f64>::new(cfg, &mut derive_rng(0, &[]))?;
    let x = Tensor3::from_vec(1, 8, 8, (0..64).map(|i| ((i * 37 % 64) as f64) / 64.0).collect())?;
    let dy = Tensor3::from_vec(2, 8, 8, (0..128).map(|i| ((i % 5) as f64 - 2.0) / 5.0).collect())?;
    let objective = |n: &UNet<f64>| -> f64 { n.forward(&x).unwrap().data.iter().zip(&dy.data).map(|(a, b)| a * b).sum() };

    let (_, cache) = net.forward_train(&x)?;
    let mut grads = net.zero_grads();
    net.backward(&cache, &dy, &mut grads);
    let analytic = grads.flatten();

    let params = net.flat_params();
    let mut probe = net.clone();
    let coords: Vec<usize> = (0..params.len()).step_by(11).collect();
    // Relative error is measured against max(|g|, 1e-6); smaller partials
    // are below the rounding noise of the difference quotient.
    let report = tist_oracles::fd_gradient_check_floor(
        |p| {
            probe.set_flat_params(p).unwrap();
            objective(&probe)
        },
        &params,
        &analytic,
        1e-5,
        &coords,
        1e-6,
    )
    .expect("finite loss");
    println!("{} parameters, {report}", params.len());
    Ok(())
}
