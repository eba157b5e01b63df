//! Independent oracles shared by the integration suites. Nothing here calls
//! into the code paths it checks.

#![allow(dead_code)]

use ohpl::autodiff::{Conv2dSpec, Tape, Tensor, Var};
use ohpl::rng::{seeded, SimRng};
use rand::Rng;

/// Direct-loop cross-correlation over an NCHW batch.
pub fn naive_conv2d(
    input: &[f64],
    shape: [usize; 4],
    weight: &[f64],
    bias: &[f64],
    spec: &Conv2dSpec,
) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = shape;
    let k = spec.kernel;
    let (s, d, p) = (spec.stride as isize, spec.dilation as isize, spec.padding as isize);
    let oh = ((h as isize + 2 * p - d * (k as isize - 1) - 1) / s + 1) as usize;
    let ow = ((w as isize + 2 * p - d * (k as isize - 1) - 1) / s + 1) as usize;
    let oc_n = spec.out_channels;
    let mut out = vec![0.0; n * oc_n * oh * ow];
    for b in 0..n {
        for oc in 0..oc_n {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize * s - p + ky as isize * d;
                                let ix = x as isize * s - p + kx as isize * d;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((oc * c + ic) * k + ky) * k + kx];
                                acc += iv * wv;
                            }
                        }
                    }
                    out[((b * oc_n + oc) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    (out, [n, oc_n, oh, ow])
}

/// Central finite differences of a scalar function.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + h;
            let fp = f(&xs);
            xs[i] = orig - h;
            let fm = f(&xs);
            xs[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        0.0
    } else {
        diff / denom
    }
}

pub fn random_vec(rng: &mut SimRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random values bounded away from zero (for the ReLU kink).
pub fn random_away_from_zero(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Which tensor of a layer test is differentiated.
pub struct GradCase {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Builds `loss = sum(layer(inputs) ⊙ probe)` on a tape, returning the loss
/// value and, when `grads` is set, the analytic gradients of every input.
pub fn probe_loss(
    inputs: &[(Vec<usize>, Vec<f64>)],
    probe: &[f64],
    grads: bool,
    layer: &dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(s, d)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap().with_requires_grad(true)))
        .collect();
    let out = layer(&mut tape, &vars);
    let loss = if tape.value(out).numel() == 1 {
        out
    } else {
        let p = tape.constant(Tensor::new(tape.shape(out).to_vec(), probe.to_vec()).unwrap());
        let m = tape.mul(out, p).unwrap();
        tape.sum(m)
    };
    let value = tape.value(loss).data()[0];
    if !grads {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let g = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    (value, g)
}

/// Runs a full finite-difference check of `layer` at the given inputs and
/// returns the worst relative error over all inputs.
pub fn check_layer(
    inputs: &[(Vec<usize>, Vec<f64>)],
    out_numel: usize,
    rng: &mut SimRng,
    layer: &dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
) -> f64 {
    let probe = random_vec(rng, out_numel, -1.0, 1.0);
    let (_, analytic) = probe_loss(inputs, &probe, true, layer);
    let mut worst = 0.0f64;
    for (i, (_, data)) in inputs.iter().enumerate() {
        let numeric = numeric_grad(data, 1e-5, |x| {
            let mut perturbed = inputs.to_vec();
            perturbed[i].1 = x.to_vec();
            probe_loss(&perturbed, &probe, false, layer).0
        });
        worst = worst.max(rel_error(&analytic[i], &numeric));
    }
    worst
}

/// Integer pixel-membership overlap of two integer-coordinate squares.
pub fn pixel_count_jaccard(a: (i64, i64, i64), b: (i64, i64, i64)) -> f64 {
    let inside = |bx: (i64, i64, i64), px: i64, py: i64| px >= bx.0 && px < bx.0 + bx.2 && py >= bx.1 && py < bx.1 + bx.2;
    let x0 = a.0.min(b.0);
    let y0 = a.1.min(b.1);
    let x1 = (a.0 + a.2).max(b.0 + b.2);
    let y1 = (a.1 + a.2).max(b.1 + b.2);
    let (mut inter, mut union) = (0u64, 0u64);
    for py in y0..y1 {
        for px in x0..x1 {
            let (ia, ib) = (inside(a, px, py), inside(b, px, py));
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
    }
    inter as f64 / union as f64
}

/// Deterministic line world: states `0..n`, goal `goal`, ShiftLeft/ShiftRight
/// move by one, every other action stays. Reward +1 on reaching the goal
/// (terminal), `step_penalty` otherwise.
pub struct LineWorldModel {
    pub n: usize,
    pub goal: usize,
    pub step_penalty: f64,
}

impl LineWorldModel {
    pub fn next(&self, s: usize, a: usize) -> usize {
        match a {
            0 => s.saturating_sub(1),
            1 => (s + 1).min(self.n - 1),
            _ => s,
        }
    }

    /// Value iteration; returns the set of optimal actions per state.
    pub fn optimal_actions(&self, gamma: f64) -> Vec<Vec<usize>> {
        let mut v = vec![0.0f64; self.n];
        for _ in 0..1000 {
            v = (0..self.n)
                .map(|s| {
                    if s == self.goal {
                        0.0
                    } else {
                        (0..7).map(|a| self.q(s, a, &v, gamma)).fold(f64::MIN, f64::max)
                    }
                })
                .collect();
        }
        (0..self.n)
            .map(|s| {
                if s == self.goal {
                    return (0..7).collect();
                }
                let qs: Vec<f64> = (0..7).map(|a| self.q(s, a, &v, gamma)).collect();
                let best = qs.iter().cloned().fold(f64::MIN, f64::max);
                (0..7).filter(|&a| qs[a] > best - 1e-9).collect()
            })
            .collect()
    }

    fn q(&self, s: usize, a: usize, v: &[f64], gamma: f64) -> f64 {
        let ns = self.next(s, a);
        if ns == self.goal {
            1.0
        } else {
            self.step_penalty + gamma * v[ns]
        }
    }
}

pub fn rng(seed: u64) -> SimRng {
    seeded(seed)
}

/// The convolution configurations used by the two networks:
/// `(kernel, stride, dilation, padding)`.
pub const NETWORK_CONV_CONFIGS: [(usize, usize, usize, usize); 7] = [
    (8, 4, 1, 0),
    (4, 2, 1, 0),
    (3, 1, 1, 0),
    (3, 1, 1, 1),
    (3, 1, 2, 2),
    (3, 1, 4, 4),
    (1, 1, 1, 0),
];

fn random_conv_case(rng: &mut SimRng, cfg: (usize, usize, usize, usize), max_extra: usize) -> (Conv2dSpec, [usize; 4]) {
    let (k, s, d, p) = cfg;
    let spec = Conv2dSpec::new(rng.random_range(1..=3), rng.random_range(1..=3), k)
        .stride(s)
        .dilation(d)
        .padding(p);
    let span = d * (k - 1) + 1;
    let min_in = span.saturating_sub(2 * p).max(1);
    let h = min_in + rng.random_range(0..=max_extra);
    let w = min_in + rng.random_range(0..=max_extra);
    (spec, [rng.random_range(1..=2), spec.in_channels, h, w])
}

/// Worst relative finite-difference error per layer type over `cases`
/// random shapes each.
pub fn gradient_suite(seed: u64, cases: usize) -> Vec<(String, f64)> {
    let mut rng = seeded(seed);
    let mut report = Vec::new();

    for cfg in NETWORK_CONV_CONFIGS {
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let (spec, shape) = random_conv_case(&mut rng, cfg, 5);
            let n_in: usize = shape.iter().product();
            let wshape = spec.weight_shape().to_vec();
            let n_w: usize = wshape.iter().product();
            let oh = spec.output_size(shape[2]).unwrap();
            let ow = spec.output_size(shape[3]).unwrap();
            let inputs = vec![
                (shape.to_vec(), random_vec(&mut rng, n_in, -1.0, 1.0)),
                (wshape, random_vec(&mut rng, n_w, -1.0, 1.0)),
                (vec![spec.out_channels], random_vec(&mut rng, spec.out_channels, -1.0, 1.0)),
            ];
            let out_numel = shape[0] * spec.out_channels * oh * ow;
            let e = check_layer(&inputs, out_numel, &mut rng, &|t, v| t.conv2d(v[0], v[1], v[2], spec).unwrap());
            worst = worst.max(e);
        }
        let (k, s, d, p) = cfg;
        report.push((format!("conv k{k} s{s} d{d} p{p}"), worst));
    }

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, fin, fout) = (rng.random_range(1..=4), rng.random_range(1..=6), rng.random_range(1..=5));
        let inputs = vec![
            (vec![n, fin], random_vec(&mut rng, n * fin, -1.0, 1.0)),
            (vec![fout, fin], random_vec(&mut rng, fout * fin, -1.0, 1.0)),
            (vec![fout], random_vec(&mut rng, fout, -1.0, 1.0)),
        ];
        worst = worst.max(check_layer(&inputs, n * fout, &mut rng, &|t, v| t.linear(v[0], v[1], v[2]).unwrap()));
    }
    report.push(("linear".into(), worst));

    type Op<'a> = &'a dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var;
    let elementwise: [(&str, Op); 2] = [
        ("relu", &|t, v| t.relu(v[0])),
        ("sigmoid", &|t, v| t.sigmoid(v[0])),
    ];
    for (name, f) in elementwise {
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let shape = vec![rng.random_range(1..=3), rng.random_range(1..=7)];
            let n = shape[0] * shape[1];
            let data = if name == "relu" {
                random_away_from_zero(&mut rng, n)
            } else {
                random_vec(&mut rng, n, -4.0, 4.0)
            };
            worst = worst.max(check_layer(&[(shape, data)], n, &mut rng, f));
        }
        report.push((name.into(), worst));
    }

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let shape = vec![rng.random_range(1..=3), rng.random_range(1..=7)];
        let n = shape[0] * shape[1];
        let inputs = vec![
            (shape.clone(), random_vec(&mut rng, n, -2.0, 2.0)),
            (shape, random_vec(&mut rng, n, -2.0, 2.0)),
        ];
        worst = worst.max(check_layer(&inputs, n, &mut rng, &|t, v| t.mul(v[0], v[1]).unwrap()));
    }
    report.push(("mul".into(), worst));

    for loss in ["huber", "mse"] {
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let n = rng.random_range(1..=12);
            let target = random_vec(&mut rng, n, -2.0, 2.0);
            // keep |pred - target| away from the Huber kink at 1
            let pred: Vec<f64> = target
                .iter()
                .map(|t| {
                    let d = rng.random_range(0.05..2.5);
                    let d = if (d - 1.0f64).abs() < 0.05 { d + 0.2 } else { d };
                    if rng.random_bool(0.5) {
                        t + d
                    } else {
                        t - d
                    }
                })
                .collect();
            let tgt = target.clone();
            let e = if loss == "huber" {
                check_layer(&[(vec![n], pred)], 1, &mut rng, &move |t, v| t.huber(v[0], &tgt, 1.0).unwrap())
            } else {
                check_layer(&[(vec![n], pred)], 1, &mut rng, &move |t, v| t.mse(v[0], &tgt).unwrap())
            };
            worst = worst.max(e);
        }
        report.push((loss.into(), worst));
    }
    report
}

/// Max |fast − naive| over random inputs for every network convolution
/// configuration, including the full 84×84 layers.
pub fn conv_oracle_suite(seed: u64, cases: usize) -> Vec<(String, f64)> {
    use ohpl::autodiff::{conv2d_forward, ConvGeometry};
    let mut rng = seeded(seed);
    let mut report = Vec::new();
    let full: [(Conv2dSpec, [usize; 4]); 8] = [
        (Conv2dSpec::new(3, 32, 8).stride(4), [2, 3, 84, 84]),
        (Conv2dSpec::new(32, 64, 4).stride(2), [2, 32, 20, 20]),
        (Conv2dSpec::new(64, 64, 3), [2, 64, 9, 9]),
        (Conv2dSpec::new(3, 16, 8).stride(4), [2, 3, 84, 84]),
        (Conv2dSpec::new(16, 32, 4).stride(2), [2, 16, 20, 20]),
        (Conv2dSpec::new(3, 3, 3).padding(1), [2, 3, 84, 84]),
        (Conv2dSpec::new(3, 3, 3).dilation(2).padding(2), [2, 3, 84, 84]),
        (Conv2dSpec::new(3, 3, 3).dilation(4).padding(4), [2, 3, 84, 84]),
    ];
    let mut cases_list: Vec<(String, Conv2dSpec, [usize; 4])> = full
        .iter()
        .map(|(s, sh)| (format!("{}->{} k{} s{} d{} p{} @{}", s.in_channels, s.out_channels, s.kernel, s.stride, s.dilation, s.padding, sh[2]), *s, *sh))
        .collect();
    cases_list.push(("3->3 k1 s1 d1 p0 @84".into(), Conv2dSpec::new(3, 3, 1), [2, 3, 84, 84]));
    for cfg in NETWORK_CONV_CONFIGS {
        for i in 0..cases {
            let (spec, shape) = random_conv_case(&mut rng, cfg, 12);
            cases_list.push((format!("random {cfg:?} #{i}"), spec, shape));
        }
    }
    for (name, spec, shape) in cases_list {
        let n_in: usize = shape.iter().product();
        let input = random_vec(&mut rng, n_in, -1.0, 1.0);
        let weight = random_vec(&mut rng, spec.weight_shape().iter().product(), -1.0, 1.0);
        let bias = random_vec(&mut rng, spec.out_channels, -1.0, 1.0);
        let g = ConvGeometry::new(spec, &shape).unwrap();
        let (fast, _) = conv2d_forward(&g, &input, &weight, &bias);
        let (slow, oshape) = naive_conv2d(&input, shape, &weight, &bias, &spec);
        assert_eq!(g.output_shape(), oshape.to_vec());
        let diff = fast.iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report.push((name, diff));
    }
    report
}
