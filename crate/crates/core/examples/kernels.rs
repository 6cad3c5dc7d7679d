//! The tensor kernels on their own, with the operation counts they report.
//!
//!     cargo run --example kernels

use mel_enhance::kernels::{conv1d, layer_norm, linear, lstm_seq, ConvMode, LstmParams, LN_EPS};
use mel_enhance::rng::SplitMix64;
use mel_enhance::{OpCounter, Tensor};

fn rand(rng: &mut SplitMix64, dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims, |_| rng.uniform(0.5))
}

fn main() -> mel_enhance::Result<()> {
    let mut rng = SplitMix64::new(5);

    let x = rand(&mut rng, &[10, 64]);
    let mut ctr = OpCounter::new();
    let y = linear(
        &x,
        &rand(&mut rng, &[32, 64]),
        &rand(&mut rng, &[32]),
        &mut ctr,
    )?;
    println!("linear     {:?} -> {:?}  {ctr:?}", x.dims(), y.dims());

    let mut ctr = OpCounter::new();
    let n = layer_norm(
        &y,
        &Tensor::filled(&[32], 1.0),
        &Tensor::zeros(&[32]),
        LN_EPS,
        &mut ctr,
    )?;
    println!("layer_norm {:?} -> {:?}  {ctr:?}", y.dims(), n.dims());

    let x = rand(&mut rng, &[40, 8]);
    let k = rand(&mut rng, &[16, 8, 3]);
    for mode in [ConvMode::SameCentered, ConvMode::CausalPast { past_pad: 2 }] {
        let mut ctr = OpCounter::new();
        let y = conv1d(&x, &k, None, mode, &mut ctr)?;
        println!(
            "conv1d     {:?} -> {:?}  {mode:?}  {ctr:?}",
            x.dims(),
            y.dims()
        );
    }

    let p = LstmParams::new(
        rand(&mut rng, &[4 * 12, 8]),
        rand(&mut rng, &[4 * 12, 12]),
        rand(&mut rng, &[4 * 12]),
    )?;
    let q = LstmParams::new(
        rand(&mut rng, &[4 * 12, 8]),
        rand(&mut rng, &[4 * 12, 12]),
        rand(&mut rng, &[4 * 12]),
    )?;
    let mut ctr = OpCounter::new();
    let y = lstm_seq(&x, &p, None, &mut ctr)?;
    println!("lstm       {:?} -> {:?}  {ctr:?}", x.dims(), y.dims());
    let mut ctr = OpCounter::new();
    let y = lstm_seq(&x, &p, Some(&q), &mut ctr)?;
    println!("bi-lstm    {:?} -> {:?}  {ctr:?}", x.dims(), y.dims());
    Ok(())
}
