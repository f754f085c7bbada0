use pointrefine::numeric::{conv3d_forward, max_pool3d_forward, DiffArray, Graph, Mode, RunningStats};
use pointrefine::seed;
use proptest::prelude::*;
use rand::Rng;

fn random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Direct six-fold loop over output voxels and kernel taps.
fn conv_oracle(x: &[f64], shape: [usize; 5], k: &[f64], c_out: usize, bias: &[f64], pad: usize) -> Vec<f64> {
    let [b, c_in, nx, ny, nz] = shape;
    let o = [nx, ny, nz].map(|d| d + 2 * pad - 2);
    let mut out = Vec::new();
    for bi in 0..b {
        for co in 0..c_out {
            for ox in 0..o[0] {
                for oy in 0..o[1] {
                    for oz in 0..o[2] {
                        let mut acc = bias[co];
                        for ci in 0..c_in {
                            for (t, kv) in k[(co * c_in + ci) * 27..(co * c_in + ci + 1) * 27].iter().enumerate() {
                                let (kx, ky, kz) = (t / 9, t / 3 % 3, t % 3);
                                let (x0, y0, z0) = (ox + kx, oy + ky, oz + kz);
                                if x0 < pad || y0 < pad || z0 < pad {
                                    continue;
                                }
                                let (xi, yi, zi) = (x0 - pad, y0 - pad, z0 - pad);
                                if xi >= nx || yi >= ny || zi >= nz {
                                    continue;
                                }
                                acc += kv * x[(((bi * c_in + ci) * nx + xi) * ny + yi) * nz + zi];
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv3d_matches_loop_oracle() {
    for (case, (shape, c_out, pad)) in [
        ([2, 1, 5, 5, 5], 4, 1),
        ([3, 4, 5, 5, 5], 8, 1),
        ([1, 2, 6, 4, 3], 3, 0),
        ([2, 3, 3, 7, 4], 2, 1),
    ]
    .into_iter()
    .enumerate()
    {
        let x = random(shape.iter().product(), case as u64);
        let k = random(c_out * shape[1] * 27, 100 + case as u64);
        let bias = random(c_out, 200 + case as u64);
        let got = conv3d_forward(&x, shape, &k, c_out, &bias, pad);
        let want = conv_oracle(&x, shape, &k, c_out, &bias, pad);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "case {case}: {g} vs {w}");
        }
    }
}

#[test]
fn max_pool_floors_odd_extents_and_prefers_first_maximum() {
    let shape = [1, 1, 3, 2, 2];
    let mut x = vec![0.0; 12];
    x[5] = 2.0;
    x[8] = 9.0;
    assert_eq!(max_pool3d_forward(&x, shape), vec![2.0]);

    let mut g = Graph::new();
    let v = g.variable(DiffArray::new([1, 1, 2, 2, 2], vec![1.0; 8]).unwrap());
    let p = g.max_pool3d(v).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    assert_eq!(g.grad(v).unwrap(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
}

fn small_net(g: &mut Graph, x: &[f64], w: &[f64], stats: &mut RunningStats) -> (pointrefine::numeric::Var, [pointrefine::numeric::Var; 2]) {
    let xv = g.variable(DiffArray::new([6, 4], x.to_vec()).unwrap());
    let wv = g.variable(DiffArray::new([4, 3], w.to_vec()).unwrap());
    let b = g.constant(DiffArray::zeros([3]));
    let gamma = g.constant(DiffArray::filled([3], 1.0));
    let beta = g.constant(DiffArray::zeros([3]));
    let h = g.dense(xv, wv, b).unwrap();
    let h = g.elu(h);
    let h = g.batch_norm(h, gamma, beta, Mode::Train, stats).unwrap();
    let loss = g.softmax_cross_entropy(h, &[0, 1, 2, 0, 1, 2]).unwrap();
    (loss, [xv, wv])
}

#[test]
fn forward_is_deterministic() {
    let (x, w) = (random(24, 1), random(12, 2));
    let run = || {
        let mut g = Graph::new();
        let (loss, _) = small_net(&mut g, &x, &w, &mut RunningStats::default());
        g.data(loss)[0].to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn backward_after_zeroing_repeats_exactly() {
    let (x, w) = (random(24, 3), random(12, 4));
    let mut g = Graph::new();
    let (loss, [xv, wv]) = small_net(&mut g, &x, &w, &mut RunningStats::default());
    g.backward(loss).unwrap();
    let first = (g.grad(xv).unwrap().to_vec(), g.grad(wv).unwrap().to_vec());
    g.zero_grad();
    g.backward(loss).unwrap();
    assert_eq!(first, (g.grad(xv).unwrap().to_vec(), g.grad(wv).unwrap().to_vec()));
}

#[test]
fn backward_without_zeroing_accumulates() {
    let (x, w) = (random(24, 5), random(12, 6));
    let mut g = Graph::new();
    let (loss, [_, wv]) = small_net(&mut g, &x, &w, &mut RunningStats::default());
    g.backward(loss).unwrap();
    let once = g.grad(wv).unwrap().to_vec();
    g.backward(loss).unwrap();
    for (a, b) in once.iter().zip(g.grad(wv).unwrap()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn eval_batch_norm_needs_statistics() {
    let mut g = Graph::new();
    let x = g.constant(DiffArray::zeros([2, 3]));
    let gamma = g.constant(DiffArray::filled([3], 1.0));
    let beta = g.constant(DiffArray::zeros([3]));
    let err = g.batch_norm(x, gamma, beta, Mode::Eval, &mut RunningStats::default());
    assert!(matches!(err, Err(pointrefine::Error::State(_))));
}

#[test]
fn shape_errors_are_reported() {
    let mut g = Graph::new();
    let a = g.constant(DiffArray::zeros([2, 3]));
    let b = g.constant(DiffArray::zeros([2, 3]));
    assert!(matches!(g.matmul(a, b), Err(pointrefine::Error::Dimension(_))));
    let s = g.sum(a);
    assert!(g.backward(s).is_err(), "untracked loss");
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..8, cols in 1usize..6, scale in 0.1f64..500.0, s in any::<u64>()) {
        let mut g = Graph::new();
        let data: Vec<f64> = random(rows * cols, s).iter().map(|v| v * scale).collect();
        let x = g.constant(DiffArray::new([rows, cols], data).unwrap());
        let p = g.softmax(x).unwrap();
        for row in g.data(p).chunks(cols) {
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
