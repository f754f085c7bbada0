//! Parameterized building blocks. Each block owns the ids of its
//! parameters and running statistics and emits graph nodes on demand.

use rand::Rng;

use super::plan::{plan_stage, StagePlan};
use super::spec::{XConvLayerSpec, FEATURE_CHANNELS};
use crate::error::Result;
use crate::geometry::Point;
use crate::numeric::{DiffArray, Graph, Mode, ParamId, ParamStore, RunningStats, Var};

pub(crate) struct Ctx<'a> {
    pub params: &'a ParamStore,
    pub stats: &'a mut [RunningStats],
    pub mode: Mode,
}

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.weight"), &[c_in, c_out], c_in, c_out, rng)?;
        let b = store.add(format!("{name}.bias"), DiffArray::zeros([c_out]))?;
        Ok(Self { w, b })
    }

    pub fn apply(&self, g: &mut Graph, ctx: &Ctx, x: Var) -> Result<Var> {
        let w = g.param(ctx.params, self.w);
        let b = g.param(ctx.params, self.b);
        g.dense(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
    slot: usize,
}

impl Norm {
    pub fn new(store: &mut ParamStore, stat_names: &mut Vec<String>, name: &str, c: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), DiffArray::filled([c], 1.0))?;
        let beta = store.add(format!("{name}.beta"), DiffArray::zeros([c]))?;
        stat_names.push(name.to_string());
        Ok(Self {
            gamma,
            beta,
            slot: stat_names.len() - 1,
        })
    }

    pub fn apply(&self, g: &mut Graph, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let gamma = g.param(ctx.params, self.gamma);
        let beta = g.param(ctx.params, self.beta);
        g.batch_norm(x, gamma, beta, ctx.mode, &mut ctx.stats[self.slot])
    }
}

/// Two same-padded 3x3x3 convolutions (ReLU, batch norm after each) and a
/// 2x2x2 max pool, flattened to one feature row per patch.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    patch_size: usize,
    k1: ParamId,
    b1: ParamId,
    n1: Norm,
    k2: ParamId,
    b2: ParamId,
    n2: Norm,
}

impl FeatureExtractor {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        stat_names: &mut Vec<String>,
        patch_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let [c1, c2] = FEATURE_CHANNELS;
        let k1 = store.add_glorot("features.conv1.kernel", &[c1, 1, 3, 3, 3], 27, c1 * 27, rng)?;
        let b1 = store.add("features.conv1.bias", DiffArray::zeros([c1]))?;
        let n1 = Norm::new(store, stat_names, "features.bn1", c1)?;
        let k2 = store.add_glorot("features.conv2.kernel", &[c2, c1, 3, 3, 3], c1 * 27, c2 * 27, rng)?;
        let b2 = store.add("features.conv2.bias", DiffArray::zeros([c2]))?;
        let n2 = Norm::new(store, stat_names, "features.bn2", c2)?;
        Ok(Self {
            patch_size,
            k1,
            b1,
            n1,
            k2,
            b2,
            n2,
        })
    }

    /// `patches` holds `rows` cubes of side `patch_size`; returns `[rows, F]`.
    pub(crate) fn apply(&self, g: &mut Graph, ctx: &mut Ctx, rows: usize, patches: Vec<f64>) -> Result<Var> {
        let p = self.patch_size;
        let x = g.constant(DiffArray::new([rows, 1, p, p, p], patches)?);
        let (k1, b1) = (g.param(ctx.params, self.k1), g.param(ctx.params, self.b1));
        let h = g.conv3d(x, k1, b1, 1)?;
        let h = g.relu(h);
        let h = self.n1.apply(g, ctx, h)?;
        let (k2, b2) = (g.param(ctx.params, self.k2), g.param(ctx.params, self.b2));
        let h = g.conv3d(h, k2, b2, 1)?;
        let h = g.relu(h);
        let h = self.n2.apply(g, ctx, h)?;
        let h = g.max_pool3d(h)?;
        let len: usize = g.shape(h)[1..].iter().product();
        g.reshape(h, [rows, len])
    }
}

/// Learned permutation-and-weighting of a local neighborhood followed by a
/// dense projection.
#[derive(Clone, Debug)]
pub struct XConv {
    spec: XConvLayerSpec,
    lift1: Dense,
    lift2: Dense,
    xform1: Dense,
    xform2: Dense,
    out: Dense,
    norm: Norm,
}

impl XConv {
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        stat_names: &mut Vec<String>,
        name: &str,
        spec: XConvLayerSpec,
        c_in: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (k, cd) = (spec.k, spec.c_delta);
        Ok(Self {
            spec,
            lift1: Dense::new(store, &format!("{name}.lift1"), 3, cd, rng)?,
            lift2: Dense::new(store, &format!("{name}.lift2"), cd, cd, rng)?,
            xform1: Dense::new(store, &format!("{name}.xform1"), 3 * k, k * k, rng)?,
            xform2: Dense::new(store, &format!("{name}.xform2"), k * k, k * k, rng)?,
            out: Dense::new(store, &format!("{name}.out"), k * (cd + c_in), spec.c_out, rng)?,
            norm: Norm::new(store, stat_names, &format!("{name}.bn"), spec.c_out)?,
        })
    }

    pub fn spec(&self) -> &XConvLayerSpec {
        &self.spec
    }

    /// `features` has one row per stacked source point; returns one row of
    /// `c_out` features per representative in `plan`.
    pub(crate) fn apply(&self, g: &mut Graph, ctx: &mut Ctx, plan: &StagePlan, features: Var) -> Result<Var> {
        let k = plan.k;
        let rows = plan.rows();
        let local = g.constant(DiffArray::new([rows * k, 3], plan.local.clone())?);
        let lifted = self.lift1.apply(g, ctx, local)?;
        let lifted = g.elu(lifted);
        let lifted = self.lift2.apply(g, ctx, lifted)?;
        let lifted = g.elu(lifted);
        let gathered = g.gather_rows(features, plan.neighbors.clone())?;
        let joined = g.concat_cols(&[lifted, gathered])?;
        let width = g.shape(joined)[1];

        let flat = g.constant(DiffArray::new([rows, 3 * k], plan.local.clone())?);
        let x = self.xform1.apply(g, ctx, flat)?;
        let x = g.elu(x);
        let x = self.xform2.apply(g, ctx, x)?;
        let x = g.reshape(x, [rows, k, k])?;

        let joined = g.reshape(joined, [rows, k, width])?;
        let mixed = g.batched_matmul(x, joined)?;
        let mixed = g.reshape(mixed, [rows, k * width])?;
        let y = self.out.apply(g, ctx, mixed)?;
        let y = g.elu(y);
        self.norm.apply(g, ctx, y)
    }
}

/// A single X-Conv layer owning its parameters and batch-norm statistics,
/// usable outside a [`Network`](super::Network).
#[derive(Clone, Debug)]
pub struct XConvLayer {
    params: ParamStore,
    stats: Vec<RunningStats>,
    layer: XConv,
}

impl XConvLayer {
    pub fn new(spec: XConvLayerSpec, c_in: usize, seed: u64) -> Result<Self> {
        spec.validate("xconv")?;
        let mut params = ParamStore::new();
        let mut names = Vec::new();
        let layer = XConv::new(&mut params, &mut names, "xconv", spec, c_in, &mut crate::seed::rng(seed))?;
        Ok(Self {
            params,
            stats: vec![RunningStats::default(); names.len()],
            layer,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Features `[reps.len(), c_out]` for every representative, gathering
    /// neighbors from `cloud` whose rows are `features`. Training mode folds
    /// batch statistics into the running estimates.
    pub fn apply(
        &mut self,
        g: &mut Graph,
        reps: &[Point],
        cloud: &[Point],
        features: Var,
        mode: Mode,
        seed: u64,
    ) -> Result<Var> {
        let s = self.layer.spec;
        let plan = plan_stage(&[cloud.to_vec()], vec![reps.to_vec()], s.k, s.dilation, seed)?;
        let mut ctx = Ctx {
            params: &self.params,
            stats: &mut self.stats,
            mode,
        };
        self.layer.apply(g, &mut ctx, &plan, features)
    }
}
