//! Finite-difference checks of every differentiable graph op and of a full
//! reduced network pass.

use pointrefine::geometry::Point;
use pointrefine::network::{BatchInput, Network, NetworkSpec, XConvLayer, XConvLayerSpec};
use pointrefine::numeric::gradcheck::{central_difference, relative_error};
use pointrefine::numeric::{DiffArray, Graph, Mode, RunningStats, Var};
use pointrefine::seed;
use rand::seq::index::sample;
use rand::Rng;

const H: f64 = 1e-5;
const PRIMITIVE_TOL: f64 = 1e-4;
const NETWORK_TOL: f64 = 1e-3;
const COORDS: usize = 20;

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;

fn random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn coords(len: usize, seed: u64) -> Vec<usize> {
    if len <= COORDS {
        return (0..len).collect();
    }
    sample(&mut seed::rng(seed), len, COORDS).into_vec()
}

/// Reduces `out` to a scalar with fixed random weights so every output
/// element receives a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let shape = g.shape(out).to_vec();
    let w = g.constant(DiffArray::new(shape.clone(), random(shape.iter().product(), seed)).unwrap());
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

fn eval(inputs: &[(Vec<usize>, Vec<f64>)], build: &Build, seed: u64) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(s, d)| g.variable(DiffArray::new(s.clone(), d.clone()).unwrap()))
        .collect();
    let out = build(&mut g, &vars);
    let loss = if g.value(out).len() == 1 { out } else { weighted_sum(&mut g, out, seed) };
    let value = g.data(loss)[0];
    g.backward(loss).unwrap();
    let grads = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
    (value, grads)
}

/// Compares analytic and central-difference gradients for every input at
/// up to `COORDS` random coordinates; returns the worst relative error.
fn check(name: &str, shapes: &[&[usize]], build: &Build, seed: u64) -> f64 {
    let mut inputs: Vec<(Vec<usize>, Vec<f64>)> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_vec(), random(s.iter().product(), seed::derive(seed, &[i as u64]))))
        .collect();
    let w_seed = seed::derive(seed, &[99]);
    let (_, analytic) = eval(&inputs, build, w_seed);
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        for i in coords(inputs[k].1.len(), seed::derive(seed, &[100, k as u64])) {
            let mut x = inputs[k].1.clone();
            let numeric = central_difference(
                |v| {
                    inputs[k].1.copy_from_slice(v);
                    eval(&inputs, build, w_seed).0
                },
                &mut x,
                i,
                H,
            );
            inputs[k].1.copy_from_slice(&x);
            let err = relative_error(analytic[k][i], numeric);
            assert!(
                err < PRIMITIVE_TOL,
                "{name}: input {k} coordinate {i}: analytic {} numeric {numeric} rel {err:e}",
                analytic[k][i]
            );
            worst = worst.max(err);
        }
    }
    println!("{name}: worst relative error {worst:.3e}");
    worst
}

pub fn dense_matmul_and_elementwise() {
    check("dense", &[&[6, 5], &[5, 4], &[4]], &|g, v| g.dense(v[0], v[1], v[2]).unwrap(), 1);
    check("matmul", &[&[4, 6], &[6, 5]], &|g, v| g.matmul(v[0], v[1]).unwrap(), 2);
    check(
        "batched_matmul",
        &[&[3, 4, 4], &[3, 4, 5]],
        &|g, v| g.batched_matmul(v[0], v[1]).unwrap(),
        3,
    );
    check("add", &[&[5, 6], &[5, 6]], &|g, v| g.add(v[0], v[1]).unwrap(), 4);
    check("mul", &[&[5, 6], &[5, 6]], &|g, v| g.mul(v[0], v[1]).unwrap(), 5);
    check("scale", &[&[30]], &|g, v| g.scale(v[0], -2.5), 6);
    check("sum", &[&[4, 7]], &|g, v| g.sum(v[0]), 7);
}

pub fn activations() {
    check("relu", &[&[6, 8]], &|g, v| g.relu(v[0]), 11);
    check("elu", &[&[6, 8]], &|g, v| g.elu(v[0]), 12);
    check("softmax", &[&[6, 4]], &|g, v| g.softmax(v[0]).unwrap(), 13);
    check(
        "softmax_cross_entropy",
        &[&[10, 3]],
        &|g, v| g.softmax_cross_entropy(v[0], &[0, 1, 2, 2, 1, 0, 0, 1, 2, 1]).unwrap(),
        14,
    );
    check(
        "dropout",
        &[&[6, 8]],
        &|g, v| {
            let mut rng = seed::rng(15);
            g.dropout(v[0], 0.5, &mut rng).unwrap()
        },
        15,
    );
}

pub fn shape_ops() {
    check(
        "reshape",
        &[&[4, 6]],
        &|g, v| {
            let r = g.reshape(v[0], [3, 8]).unwrap();
            let s = g.scale(r, 1.0);
            g.elu(s)
        },
        21,
    );
    check("concat_cols", &[&[5, 3], &[5, 4]], &|g, v| g.concat_cols(&[v[0], v[1]]).unwrap(), 22);
    check(
        "gather_rows",
        &[&[6, 4]],
        &|g, v| g.gather_rows(v[0], vec![5, 0, 0, 3, 2, 5, 1]).unwrap(),
        23,
    );
}

pub fn convolution_and_pooling() {
    check(
        "conv3d pad 1",
        &[&[2, 2, 4, 4, 3], &[3, 2, 3, 3, 3], &[3]],
        &|g, v| g.conv3d(v[0], v[1], v[2], 1).unwrap(),
        31,
    );
    check(
        "conv3d pad 0",
        &[&[1, 1, 5, 4, 4], &[2, 1, 3, 3, 3], &[2]],
        &|g, v| g.conv3d(v[0], v[1], v[2], 0).unwrap(),
        32,
    );
    check("max_pool3d", &[&[2, 3, 4, 4, 2]], &|g, v| g.max_pool3d(v[0]).unwrap(), 33);
}

pub fn batch_norm_train_and_eval() {
    check(
        "batch_norm train [B, C]",
        &[&[8, 3], &[3], &[3]],
        &|g, v| {
            let mut stats = RunningStats::default();
            g.batch_norm(v[0], v[1], v[2], Mode::Train, &mut stats).unwrap()
        },
        41,
    );
    check(
        "batch_norm train [B, C, X, Y, Z]",
        &[&[2, 2, 3, 2, 2], &[2], &[2]],
        &|g, v| {
            let mut stats = RunningStats::default();
            g.batch_norm(v[0], v[1], v[2], Mode::Train, &mut stats).unwrap()
        },
        42,
    );
    check(
        "batch_norm eval",
        &[&[8, 3], &[3], &[3]],
        &|g, v| {
            let mut stats = RunningStats {
                mean: vec![0.1, -0.2, 0.3],
                var: vec![0.5, 1.5, 0.9],
            };
            g.batch_norm(v[0], v[1], v[2], Mode::Eval, &mut stats).unwrap()
        },
        43,
    );
}

/// Patches are drawn from a few prototypes: with 512 distinct patches the
/// feature extractor holds ~250k ReLU units and nearly every probe of its
/// kernel would straddle a kink.
fn cloud_input(spec: &NetworkSpec, seed: u64) -> (BatchInput, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let n = spec.input_size();
    let points: Vec<Point> = (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let labels = points.iter().map(|p| usize::from(p[0] > 0.0)).collect();
    let cube = spec.patch_size.pow(3);
    let prototypes: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..cube).map(|_| rng.random_range(-1.0..2.0)).collect())
        .collect();
    let patches = points
        .iter()
        .flat_map(|p| prototypes[usize::from(p[1] > 0.0) * 2 + usize::from(p[2] > 0.0)].clone())
        .collect();
    (
        BatchInput {
            points: vec![points],
            patches,
        },
        labels,
    )
}

struct Probe {
    loss: f64,
    kinks: u64,
    grads: Vec<Option<Vec<f64>>>,
}

fn network_loss(net: &Network, input: &BatchInput, labels: &[usize], grads: bool) -> Probe {
    let mut g = Graph::new();
    let out = net.forward(&mut g, input, Mode::Train, 5).unwrap();
    let loss = g.softmax_cross_entropy(out.logits, labels).unwrap();
    let mut probe = Probe {
        loss: g.data(loss)[0],
        kinks: g.kink_signature(),
        grads: Vec::new(),
    };
    if grads {
        g.backward(loss).unwrap();
        probe.grads = g.param_grads(net.params().len());
    }
    probe
}

/// Every parameter group gets `COORDS` probes (all kink-free coordinates
/// when the group is smaller).
/// A probe whose two evaluations take different ReLU / max-pool branches
/// straddles a kink, where central differences are meaningless; it is
/// replaced by the next random coordinate.
pub fn reduced_network_end_to_end() {
    let spec = NetworkSpec::reduced();
    let mut net = Network::new(spec.clone(), 3).unwrap();
    let (input, labels) = cloud_input(&spec, 4);
    let base = network_loss(&net, &input, &labels, true);
    let ids: Vec<_> = net.params().ids().collect();
    let (mut worst, mut probes, mut straddled) = (0.0f64, 0, 0);
    for id in ids {
        let name = net.params().name(id).to_string();
        let analytic = base.grads[id.index()].clone().unwrap_or_else(|| panic!("no gradient for {name}"));
        let order = sample(&mut seed::rng(seed::derive(6, &[id.index() as u64])), analytic.len(), analytic.len());
        let (mut checked, mut skipped) = (0, 0);
        for i in order {
            if checked == COORDS {
                break;
            }
            let orig = net.params().value(id).data()[i];
            let mut at = |x: f64| {
                net.params_mut().value_mut(id).data_mut()[i] = x;
                network_loss(&net, &input, &labels, false)
            };
            let (plus, minus) = (at(orig + H), at(orig - H));
            net.params_mut().value_mut(id).data_mut()[i] = orig;
            if plus.kinks != minus.kinks || plus.kinks != base.kinks {
                skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * H);
            let err = relative_error(analytic[i], numeric);
            assert!(
                err < NETWORK_TOL,
                "{name}[{i}]: analytic {} numeric {numeric} rel {err:e}",
                analytic[i]
            );
            worst = worst.max(err);
            checked += 1;
        }
        assert!(
            checked == COORDS.min(analytic.len() - skipped) && checked > 0,
            "{name}: only {checked} kink-free probes"
        );
        probes += checked;
        straddled += skipped;
    }
    println!("reduced network: {probes} probes, {straddled} straddled a kink, worst relative error {worst:.3e}");
}

pub fn single_xconv_layer() {
    let mut rng = seed::rng(50);
    let cloud: Vec<Point> = (0..30).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0))).collect();
    let reps = cloud[..10].to_vec();
    let feats = random(30 * 4, 51);
    let mut layer = XConvLayer::new(XConvLayerSpec::new(10, 5, 2, 6, 3), 4, 52).unwrap();
    let loss_of = |layer: &mut XConvLayer, feats: &[f64], grads: bool| {
        let mut g = Graph::new();
        let f = g.variable(DiffArray::new([30, 4], feats.to_vec()).unwrap());
        let out = layer.apply(&mut g, &reps, &cloud, f, Mode::Train, 53).unwrap();
        let loss = weighted_sum(&mut g, out, 54);
        let value = g.data(loss)[0];
        if !grads {
            return (value, Vec::new(), Vec::new());
        }
        g.backward(loss).unwrap();
        (value, g.grad(f).unwrap().to_vec(), g.param_grads(layer.params().len()))
    };
    let (_, d_feats, d_params) = loss_of(&mut layer, &feats, true);
    let mut worst: f64 = 0.0;
    for id in layer.params().ids().collect::<Vec<_>>() {
        let analytic = d_params[id.index()].clone().unwrap();
        for i in coords(analytic.len(), seed::derive(55, &[id.index() as u64])) {
            let orig = layer.params().value(id).data()[i];
            let mut x = [orig];
            let numeric = central_difference(
                |v| {
                    layer.params_mut().value_mut(id).data_mut()[i] = v[0];
                    loss_of(&mut layer, &feats, false).0
                },
                &mut x,
                0,
                H,
            );
            layer.params_mut().value_mut(id).data_mut()[i] = orig;
            let err = relative_error(analytic[i], numeric);
            assert!(err < PRIMITIVE_TOL, "{}[{i}]: rel {err:e}", layer.params().name(id));
            worst = worst.max(err);
        }
    }
    let mut f = feats.clone();
    for i in coords(f.len(), 56) {
        let numeric = central_difference(|v| loss_of(&mut layer, v, false).0, &mut f, i, H);
        let err = relative_error(d_feats[i], numeric);
        assert!(err < PRIMITIVE_TOL, "features[{i}]: rel {err:e}");
        worst = worst.max(err);
    }
    println!("xconv layer: worst relative error {worst:.3e}");
}
