mod common;

use ohpl::autodiff::{conv2d_forward, Conv2dSpec, ConvGeometry, Tape, Tensor};

#[test]
fn gradients_match_finite_differences() {
    for (layer, err) in common::gradient_suite(11, 4) {
        assert!(err <= 1e-4, "{layer}: relative error {err:e}");
    }
}

#[test]
fn fast_conv_matches_direct_loops() {
    for (case, diff) in common::conv_oracle_suite(5, 3) {
        assert!(diff <= 1e-10, "{case}: max abs diff {diff:e}");
    }
}

#[test]
fn fast_conv_single_precision_tolerance() {
    let mut rng = common::rng(9);
    let spec = Conv2dSpec::new(3, 8, 3).dilation(2).padding(2);
    let shape = [1, 3, 30, 30];
    let input = common::random_vec(&mut rng, 2700, -1.0, 1.0);
    let weight = common::random_vec(&mut rng, 8 * 27, -1.0, 1.0);
    let bias = common::random_vec(&mut rng, 8, -1.0, 1.0);
    let (slow, _) = common::naive_conv2d(&input, shape, &weight, &bias, &spec);
    let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let g = ConvGeometry::new(spec, &shape).unwrap();
    let (fast, _) = conv2d_forward(&g, &f(&input), &f(&weight), &f(&bias));
    let diff = fast.iter().zip(&slow).map(|(a, b)| (f64::from(*a) - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-4, "{diff}");
}

#[test]
fn dilated_padded_conv_keeps_84() {
    let mut tape = Tape::<f32>::no_grad();
    let x = tape.constant(Tensor::zeros(&[1, 3, 84, 84]));
    let spec = Conv2dSpec::new(3, 3, 3).dilation(2).padding(2);
    let w = tape.constant(Tensor::zeros(&spec.weight_shape()));
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.conv2d(x, w, b, spec).unwrap();
    assert_eq!(tape.shape(y), &[1, 3, 84, 84]);
}

#[test]
fn conv_weight_shape_mismatch() {
    let mut tape = Tape::<f64>::no_grad();
    let x = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
    let w = tape.constant(Tensor::zeros(&[2, 3, 3, 3]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.conv2d(x, w, b, Conv2dSpec::new(3, 3, 3)).is_err());
}
