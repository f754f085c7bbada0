use std::collections::BTreeMap;
use std::path::Path;

use super::layers::{Ctx, Dense, FeatureExtractor, XConv};
use super::plan::{plan_stage, select_representatives, StagePlan};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::numeric::checkpoint::Checkpoint;
use crate::numeric::{DiffArray, Graph, Mode, ParamStore, RunningStats, Var};
use crate::seed;

/// A batch of equally sized subclouds with their patches stacked in the
/// same cloud-major point order.
#[derive(Clone, Debug, Default)]
pub struct BatchInput {
    pub points: Vec<Vec<Point>>,
    pub patches: Vec<f64>,
}

impl BatchInput {
    pub fn rows(&self) -> usize {
        self.points.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[rows, classes]` pre-softmax scores.
    pub logits: Var,
    /// `[rows, classes]` class probabilities.
    pub probs: Var,
}

/// Parameters, running statistics and layer layout for one [`NetworkSpec`].
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamStore,
    stats: Vec<RunningStats>,
    stat_names: Vec<String>,
    features: FeatureExtractor,
    encoder: Vec<XConv>,
    decoder: Vec<XConv>,
    fc1: Dense,
    fc2: Dense,
}

const DROPOUT_STREAM: u64 = 0xD0;

impl Network {
    /// Freshly initialized network; `seed` drives every weight draw.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed);
        let mut params = ParamStore::new();
        let mut names = Vec::new();
        let features = FeatureExtractor::new(&mut params, &mut names, spec.patch_size, &mut rng)?;

        let e = spec.encoder.len();
        let width = |level: usize| {
            if level == 0 {
                spec.patch_feature_len()
            } else {
                spec.encoder[level - 1].c_out
            }
        };
        let mut encoder = Vec::with_capacity(e);
        for (i, s) in spec.encoder.iter().enumerate() {
            encoder.push(XConv::new(&mut params, &mut names, &format!("encoder{i}"), *s, width(i), &mut rng)?);
        }
        let mut decoder = Vec::with_capacity(e - 1);
        let mut c_in = width(e);
        for (j, s) in spec.decoder.iter().enumerate() {
            decoder.push(XConv::new(&mut params, &mut names, &format!("decoder{j}"), *s, c_in, &mut rng)?);
            c_in = s.c_out + width(e - 1 - j);
        }
        let fc1 = Dense::new(&mut params, "fc1", c_in, spec.fc_widths[0], &mut rng)?;
        let fc2 = Dense::new(&mut params, "fc2", spec.fc_widths[0], spec.fc_widths[1], &mut rng)?;
        Ok(Self {
            stats: vec![RunningStats::default(); names.len()],
            stat_names: names,
            spec,
            params,
            features,
            encoder,
            decoder,
            fc1,
            fc2,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    /// Trainable scalar count.
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Training-mode forward pass that also folds batch statistics into the
    /// running estimates.
    pub fn forward_train(&mut self, g: &mut Graph, input: &BatchInput, seed: u64) -> Result<ForwardOutput> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.run(g, input, Mode::Train, &mut stats, seed);
        self.stats = stats;
        out
    }

    /// Forward pass in `mode` that leaves running statistics untouched.
    pub fn forward(&self, g: &mut Graph, input: &BatchInput, mode: Mode, seed: u64) -> Result<ForwardOutput> {
        let mut stats = self.stats.clone();
        self.run(g, input, mode, &mut stats, seed)
    }

    /// Eval-mode class probabilities, one row per input point.
    pub fn predict(&self, input: &BatchInput, seed: u64) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, input, Mode::Eval, seed)?;
        Ok(g.data(out.probs).to_vec())
    }

    fn check_input(&self, input: &BatchInput) -> Result<()> {
        let n = self.spec.input_size();
        if input.points.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        if let Some(bad) = input.points.iter().find(|p| p.len() != n) {
            return Err(Error::Config(format!(
                "subcloud of {} points given to a network expecting {n}",
                bad.len()
            )));
        }
        let cube = self.spec.patch_size.pow(3);
        if input.patches.len() != input.rows() * cube {
            return Err(Error::Config(format!(
                "{} patch values for {} points of patch size {}",
                input.patches.len(),
                input.rows(),
                self.spec.patch_size
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        g: &mut Graph,
        input: &BatchInput,
        mode: Mode,
        stats: &mut [RunningStats],
        seed: u64,
    ) -> Result<ForwardOutput> {
        self.check_input(input)?;
        let plans = self.plan(input, seed)?;
        let mut ctx = Ctx {
            params: &self.params,
            stats,
            mode,
        };
        let e = self.encoder.len();
        let mut level_features = Vec::with_capacity(e + 1);
        level_features.push(self.features.apply(g, &mut ctx, input.rows(), input.patches.clone())?);
        for (i, layer) in self.encoder.iter().enumerate() {
            let f = layer.apply(g, &mut ctx, &plans[i], level_features[i])?;
            level_features.push(f);
        }
        let mut h = level_features[e];
        for (j, layer) in self.decoder.iter().enumerate() {
            let up = layer.apply(g, &mut ctx, &plans[e + j], h)?;
            h = g.concat_cols(&[up, level_features[e - 1 - j]])?;
        }
        let h = self.fc1.apply(g, &ctx, h)?;
        let mut h = g.relu(h);
        if mode == Mode::Train {
            let mut rng = seed::rng_at(seed, &[DROPOUT_STREAM]);
            h = g.dropout(h, self.spec.dropout_rate, &mut rng)?;
        }
        let logits = self.fc2.apply(g, &ctx, h)?;
        let probs = g.softmax(logits)?;
        Ok(ForwardOutput { logits, probs })
    }

    /// Encoder plans first, then decoder plans; stage `s` samples with a
    /// seed derived from `(seed, s)` and the representative coordinates.
    fn plan(&self, input: &BatchInput, seed: u64) -> Result<Vec<StagePlan>> {
        let e = self.encoder.len();
        let mut levels: Vec<Vec<Vec<Point>>> = vec![input.points.clone()];
        let mut plans = Vec::with_capacity(2 * e - 1);
        for (i, s) in self.spec.encoder.iter().enumerate() {
            let stage_seed = seed::derive(seed, &[i as u64]);
            let reps = levels[i]
                .iter()
                .map(|pts| select_representatives(pts, s.n_out, stage_seed))
                .collect::<Result<Vec<_>>>()?;
            levels.push(reps.clone());
            plans.push(plan_stage(&levels[i], reps, s.k, s.dilation, stage_seed)?);
        }
        for (j, s) in self.spec.decoder.iter().enumerate() {
            let stage_seed = seed::derive(seed, &[(e + j) as u64]);
            let reps = levels[e - 1 - j].clone();
            plans.push(plan_stage(&levels[e - j], reps, s.k, s.dilation, stage_seed)?);
        }
        Ok(plans)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = BTreeMap::new();
        let spec = serde_json::to_string(&self.spec).map_err(|e| Error::Config(format!("spec encoding: {e}")))?;
        meta.insert("spec".to_string(), spec);
        let mut tensors: Vec<(String, DiffArray)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), DiffArray::new(p.value.shape().to_vec(), p.value.data().to_vec())))
            .map(|(n, a)| a.map(|a| (n, a)))
            .collect::<Result<_>>()?;
        for (name, s) in self.stat_names.iter().zip(&self.stats) {
            if s.is_populated() {
                tensors.push((format!("{name}.running_mean"), DiffArray::new([s.mean.len()], s.mean.clone())?));
                tensors.push((format!("{name}.running_var"), DiffArray::new([s.var.len()], s.var.clone())?));
            }
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec_text = ck
            .meta
            .get("spec")
            .ok_or_else(|| Error::Config("checkpoint lacks a network spec".into()))?;
        let spec: NetworkSpec =
            serde_json::from_str(spec_text).map_err(|e| Error::Config(format!("checkpoint spec: {e}")))?;
        let mut net = Network::new(spec, 0)?;
        for id in net.params.ids().collect::<Vec<_>>() {
            let name = net.params.name(id).to_string();
            let stored = ck
                .get(&name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            let target = net.params.value_mut(id);
            if stored.shape() != target.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?} in the checkpoint but {:?} in the spec",
                    stored.shape(),
                    target.shape()
                )));
            }
            target.data_mut().copy_from_slice(stored.data());
        }
        for (name, s) in net.stat_names.iter().zip(net.stats.iter_mut()) {
            if let (Some(m), Some(v)) = (ck.get(&format!("{name}.running_mean")), ck.get(&format!("{name}.running_var"))) {
                s.mean = m.data().to_vec();
                s.var = v.data().to_vec();
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?).map_err(|e| match e {
            Error::Config(reason) => Error::format(path, reason),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::XConvLayerSpec;
    use rand::Rng;

    pub(crate) fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            encoder: vec![XConvLayerSpec::new(32, 4, 1, 6, 3), XConvLayerSpec::new(8, 4, 2, 8, 3)],
            decoder: vec![XConvLayerSpec::new(32, 4, 1, 6, 3)],
            fc_widths: vec![8, 2],
            patch_size: 5,
            dropout_rate: 0.0,
            num_classes: 2,
        }
    }

    fn batch(spec: &NetworkSpec, clouds: usize, seed: u64) -> BatchInput {
        let mut rng = seed::rng(seed);
        let n = spec.input_size();
        let points = (0..clouds)
            .map(|_| (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect())
            .collect();
        let patches = (0..clouds * n * 125).map(|_| rng.random_range(-1.0..1.0)).collect();
        BatchInput { points, patches }
    }

    #[test]
    fn rows_are_distributions() {
        let spec = tiny_spec();
        let mut net = Network::new(spec.clone(), 3).unwrap();
        let input = batch(&spec, 2, 1);
        let mut g = Graph::new();
        let out = net.forward_train(&mut g, &input, 5).unwrap();
        assert_eq!(g.shape(out.probs), &[64, 2]);
        for row in g.data(out.probs).chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_before_training_is_a_state_error() {
        let spec = tiny_spec();
        let net = Network::new(spec.clone(), 3).unwrap();
        assert!(matches!(net.predict(&batch(&spec, 1, 1), 0), Err(Error::State(_))));
    }

    #[test]
    fn wrong_cloud_size_is_a_config_error() {
        let spec = tiny_spec();
        let mut net = Network::new(spec.clone(), 3).unwrap();
        let mut input = batch(&spec, 1, 1);
        input.points[0].pop();
        let mut g = Graph::new();
        assert!(matches!(net.forward_train(&mut g, &input, 0), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let spec = tiny_spec();
        let mut net = Network::new(spec.clone(), 3).unwrap();
        let input = batch(&spec, 2, 4);
        net.forward_train(&mut Graph::new(), &input, 1).unwrap();
        let before = net.predict(&input, 2).unwrap();
        let back = Network::from_checkpoint(&net.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back.predict(&input, 2).unwrap(), before);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Network::new(tiny_spec(), 11).unwrap();
        let b = Network::new(tiny_spec(), 11).unwrap();
        let c = Network::new(tiny_spec(), 12).unwrap();
        let flat = |n: &Network| n.params().iter().flat_map(|p| p.value.data().to_vec()).collect::<Vec<_>>();
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }
}
