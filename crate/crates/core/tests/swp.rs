use fgv_core::nn::PoolSpec;
use fgv_core::swp::{swp_param_count, SwpSpec, SwpState};
use fgv_core::{Fill, Tape, Tensor};
use proptest::prelude::*;

fn swp_out(state: &SwpState<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let y = state.forward(&mut tape, xv).unwrap();
    tape.value(y).to_vec()
}

#[test]
fn full_scale_count() {
    assert_eq!(swp_param_count(&SwpSpec::new(9, 7, 7).unwrap()), 441);
}

#[test]
fn uniform_masks_reproduce_global_average_pooling() {
    let (b, c) = (2, 64);
    let x = Tensor::<f64>::new(&[b, c, 7, 7], Fill::Normal { mean: 0.5, std: 1.0, seed: 3 }).unwrap();
    let state = SwpState::<f64>::new(SwpSpec::default());
    let got = swp_out(&state, &x);
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let gap = tape.pool2d(xv, &PoolSpec::average(7, 1)).unwrap();
    let gap = tape.value(gap).to_vec();
    // Replicated: slot k*C + c of image b holds the channel-c average.
    for bi in 0..b {
        for k in 0..9 {
            for ci in 0..c {
                let (s, g) = (got[bi * 9 * c + k * c + ci], gap[bi * c + ci]);
                assert!((s - g).abs() < 1e-6, "b{bi} k{k} c{ci}: {s} vs {g}");
            }
        }
    }
}

proptest! {
    #[test]
    fn forward_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = SwpSpec::new(3, 4, 4).unwrap();
        let mut state = SwpState::<f64>::new(spec);
        state.masks = Tensor::new(&spec.mask_shape(), Fill::Normal { mean: 0.0, std: 1.0, seed }).unwrap();
        let x = Tensor::<f64>::new(&[2, 5, 4, 4], Fill::Normal { mean: 0.0, std: 1.0, seed: seed + 1 }).unwrap();
        let y = Tensor::<f64>::new(&[2, 5, 4, 4], Fill::Normal { mean: 0.0, std: 1.0, seed: seed + 2 }).unwrap();
        let mix = Tensor::from_vec(&[2, 5, 4, 4], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let (fx, fy, fm) = (swp_out(&state, &x), swp_out(&state, &y), swp_out(&state, &mix));
        for i in 0..fm.len() {
            let want = a * fx[i] + b * fy[i];
            prop_assert!((fm[i] - want).abs() <= 1e-5 * want.abs().max(1.0));
        }
    }
}
