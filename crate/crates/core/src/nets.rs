//! Segmentation generator (dilated encoder, SGR, decoder) and the
//! discriminator that judges class-probability maps.

use rand::Rng;

use crate::autodiff::{BatchStats, ConvGeom, Graph, Var};
use crate::error::{CoreError, Result};
use crate::init::{derive_seed, xavier_init};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::segmap::{SegmentationMap, NUM_CLASSES};
use crate::sgr::{sgr_forward, SgrConfig, SgrGraphState, SgrVars};
use crate::symbolic::SymbolicGraph;
use crate::tensor::Tensor;

/// Encoder downsampling factor.
pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Output channels of the two strided convs, then the four dilated convs.
    pub channels: [usize; 6],
    pub dilations: [usize; 4],
    pub use_sgr: bool,
    pub sgr_hidden: usize,
    /// Per-sample feature normalization after every conv except the head.
    pub instance_norm: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { channels: [8, 16, 32, 32, 32, 32], dilations: [2, 4, 8, 16], use_sgr: true, sgr_hidden: 16, instance_norm: true }
    }
}

/// Conv weight `[out, in, k, k]` plus bias, Xavier-initialized.
fn add_conv<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: [usize; 4], seed: u64) -> Result<()> {
    let w = format!("{name}.w");
    store.add(&w, xavier_init(&shape, derive_seed(seed, &w))?)?;
    let bias_len = shape[0];
    store.add(&format!("{name}.b"), Tensor::zeros(&[bias_len]))
}

/// Transposed conv weight `[in, out, k, k]` plus bias over `out`.
fn add_convt<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: [usize; 4], seed: u64) -> Result<()> {
    let w = format!("{name}.w");
    store.add(&w, xavier_init(&shape, derive_seed(seed, &w))?)?;
    store.add(&format!("{name}.b"), Tensor::zeros(&[shape[1]]))
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    pub store: ParamStore<T>,
    pub sgr: Option<SgrGraphState<T>>,
}

const STRIDED: ConvGeom = ConvGeom::new(2, 1, 1);
const HEAD: ConvGeom = ConvGeom::new(1, 1, 1);
const NORMED: [&str; 8] =
    ["gen.enc1", "gen.enc2", "gen.dil1", "gen.dil2", "gen.dil3", "gen.dil4", "gen.dec1", "gen.dec2"];
const NORM_EPS: f64 = 1e-5;

impl<T: Scalar> Generator<T> {
    /// `graph` is required when `cfg.use_sgr` is set.
    pub fn new(cfg: GeneratorConfig, graph: Option<&SymbolicGraph>, seed: u64) -> Result<Self> {
        let c = cfg.channels;
        let mut store = ParamStore::new();
        add_conv(&mut store, "gen.enc1", [c[0], 1, 4, 4], seed)?;
        add_conv(&mut store, "gen.enc2", [c[1], c[0], 4, 4], seed)?;
        for i in 0..4 {
            add_conv(&mut store, &format!("gen.dil{}", i + 1), [c[i + 2], c[i + 1], 3, 3], seed)?;
        }
        let sgr = if cfg.use_sgr {
            let graph = graph.ok_or_else(|| CoreError::invalid("SGR generator needs a symbolic graph"))?;
            let sc = SgrConfig { d_local: c[5], n: graph.n, hidden: cfg.sgr_hidden };
            sc.register(&mut store, "gen.sgr", seed)?;
            Some(SgrGraphState::from_graph(graph)?)
        } else {
            None
        };
        add_convt(&mut store, "gen.dec1", [c[5], c[1], 4, 4], seed)?;
        add_convt(&mut store, "gen.dec2", [c[1], c[0], 4, 4], seed)?;
        add_conv(&mut store, "gen.head", [NUM_CLASSES, c[0], 3, 3], seed)?;
        if cfg.instance_norm {
            let widths = [c[0], c[1], c[2], c[3], c[4], c[5], c[1], c[0]];
            for (layer, &width) in NORMED.iter().zip(&widths) {
                store.add(&format!("{layer}.gamma"), Tensor::full(&[width], T::one()))?;
                store.add(&format!("{layer}.beta"), Tensor::zeros(&[width]))?;
            }
        }
        Ok(Generator { cfg, store, sgr })
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, name: &str, geom: ConvGeom, track: bool) -> Result<Var> {
        let w = g.param(&self.store, &format!("{name}.w"), track)?;
        let b = g.param(&self.store, &format!("{name}.b"), track)?;
        g.conv2d(x, w, b, geom)
    }

    /// Optional instance norm then ReLU.
    fn activate(&self, g: &mut Graph<T>, x: Var, name: &str, track: bool) -> Result<Var> {
        if !self.cfg.instance_norm {
            return g.relu(x);
        }
        let gamma = g.param(&self.store, &format!("{name}.gamma"), track)?;
        let beta = g.param(&self.store, &format!("{name}.beta"), track)?;
        let s = g.shape(x).to_vec();
        let mut outs = Vec::with_capacity(s[0]);
        for i in 0..s[0] {
            let one = g.select(x, i)?;
            let one = g.reshape(one, &[1, s[1], s[2], s[3]])?;
            let (y, _) = g.batch_norm_train(one, gamma, beta, T::lit(NORM_EPS))?;
            outs.push(g.reshape(y, &s[1..])?);
        }
        let y = g.stack(&outs)?;
        g.relu(y)
    }

    fn convt(&self, g: &mut Graph<T>, x: Var, name: &str, track: bool) -> Result<Var> {
        let w = g.param(&self.store, &format!("{name}.w"), track)?;
        let b = g.param(&self.store, &format!("{name}.b"), track)?;
        g.conv_transpose2d(x, w, b, STRIDED)
    }

    /// `x: [B,1,H,W]` to logits `[B,7,H,W]`; `H` and `W` must be multiples of 4.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, track: bool) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] % DOWNSAMPLE != 0 || s[3] % DOWNSAMPLE != 0 || s[2] < 8 || s[3] < 8 {
            return Err(CoreError::invalid(format!(
                "generator input must be [B,1,H,W] with H, W multiples of {DOWNSAMPLE} and at least 8, got {s:?}"
            )));
        }
        let mut h = self.conv(g, x, "gen.enc1", STRIDED, track)?;
        h = self.activate(g, h, "gen.enc1", track)?;
        h = self.conv(g, h, "gen.enc2", STRIDED, track)?;
        h = self.activate(g, h, "gen.enc2", track)?;
        for (i, &rate) in self.cfg.dilations.iter().enumerate() {
            let name = format!("gen.dil{}", i + 1);
            h = self.conv(g, h, &name, ConvGeom::new(1, rate, rate), track)?;
            h = self.activate(g, h, &name, track)?;
        }
        if let Some(state) = &self.sgr {
            let vars = SgrVars::bind(g, &self.store, "gen.sgr", state, track)?;
            let (b, c, fh, fw) = (s[0], self.cfg.channels[5], s[2] / DOWNSAMPLE, s[3] / DOWNSAMPLE);
            let mut outs = Vec::with_capacity(b);
            for i in 0..b {
                let sample = g.select(h, i)?;
                let flat = g.reshape(sample, &[c, fh * fw])?;
                let local = g.transpose(flat)?;
                let out = sgr_forward(g, local, &vars)?;
                let back = g.transpose(out.x_dec)?;
                outs.push(g.reshape(back, &[c, fh, fw])?);
            }
            h = g.stack(&outs)?;
        }
        h = self.convt(g, h, "gen.dec1", track)?;
        h = self.activate(g, h, "gen.dec1", track)?;
        h = self.convt(g, h, "gen.dec2", track)?;
        h = self.activate(g, h, "gen.dec2", track)?;
        self.conv(g, h, "gen.head", HEAD, track)
    }

    /// Logits and argmax map for one `h × w` image.
    pub fn predict(&self, image: &[f64], h: usize, w: usize) -> Result<(Vec<T>, SegmentationMap)> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_f64(&[1, 1, h, w], &standardize(image))?);
        let y = self.forward(&mut g, x, false)?;
        let logits = g.data(y).to_vec();
        Ok((logits.clone(), argmax_map(&logits, h, w)?))
    }
}

/// Zero mean, unit variance copy of one image; a constant image maps to zeros.
pub fn standardize(image: &[f64]) -> Vec<f64> {
    let n = image.len().max(1) as f64;
    let mean = image.iter().sum::<f64>() / n;
    let var = image.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
    image.iter().map(|v| (v - mean) * inv).collect()
}

/// Per-pixel argmax over `[7, H, W]` logits; ties go to the lower class.
pub fn argmax_map<T: Scalar>(logits: &[T], h: usize, w: usize) -> Result<SegmentationMap> {
    let hw = h * w;
    if logits.len() != NUM_CLASSES * hw {
        return Err(CoreError::invalid(format!("{} logits for a {h}x{w} map", logits.len())));
    }
    let classes = (0..hw)
        .map(|p| {
            let mut best = 0;
            for m in 1..NUM_CLASSES {
                if logits[m * hw + p] > logits[best * hw + p] {
                    best = m;
                }
            }
            best as u8
        })
        .collect();
    SegmentationMap::new(h, w, classes)
}

/// One-hot `[7, H, W]` encoding of a truth map.
pub fn one_hot<T: Scalar>(map: &SegmentationMap) -> Vec<T> {
    let hw = map.height() * map.width();
    let mut out = vec![T::zero(); NUM_CLASSES * hw];
    map.classes().iter().enumerate().for_each(|(p, &c)| out[c as usize * hw + p] = T::one());
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub channels: [usize; 3],
    pub kernel: usize,
    pub hidden: usize,
    pub dropout: f64,
    /// Weight of the newest batch in the running statistics.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { channels: [8, 16, 32], kernel: 7, hidden: 64, dropout: 0.5, bn_momentum: 0.1, bn_eps: 1e-5 }
    }
}

/// Spatial plan for one input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorPlan {
    /// Padding of the stride-3 first conv.
    pub pad1: usize,
    pub extent1: usize,
}

impl DiscriminatorConfig {
    /// First conv uses stride 3 with the smallest padding that divides
    /// exactly for both extents.
    pub fn plan(&self, h: usize, w: usize) -> Result<DiscriminatorPlan> {
        let k = self.kernel;
        for pad in 0..3 {
            let exact = |n: usize| n + 2 * pad >= k && (n + 2 * pad - k) % 3 == 0;
            if exact(h) && exact(w) {
                let e = |n: usize| (n + 2 * pad - k) / 3 + 1;
                if e(h) >= 6 && e(w) >= 6 {
                    return Ok(DiscriminatorPlan { pad1: pad, extent1: e(h) });
                }
            }
        }
        Err(CoreError::invalid(format!("discriminator has no exact stride-3 plan for {h}x{w}")))
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    pub cfg: DiscriminatorConfig,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let c = cfg.channels;
        let k = cfg.kernel;
        let mut store = ParamStore::new();
        let ins = [NUM_CLASSES, c[0], c[1]];
        for i in 0..3 {
            add_conv(&mut store, &format!("disc.conv{}", i + 1), [c[i], ins[i], k, k], seed)?;
            store.add(&format!("disc.bn{}.gamma", i + 1), Tensor::full(&[c[i]], T::one()))?;
            store.add(&format!("disc.bn{}.beta", i + 1), Tensor::zeros(&[c[i]]))?;
            store.add_buffer(&format!("disc.bn{}.mean", i + 1), Tensor::zeros(&[c[i]]))?;
            store.add_buffer(&format!("disc.bn{}.var", i + 1), Tensor::full(&[c[i]], T::one()))?;
        }
        let fc1 = "disc.fc1.w";
        store.add(fc1, xavier_init(&[c[2], cfg.hidden], derive_seed(seed, fc1))?)?;
        store.add("disc.fc1.b", Tensor::zeros(&[cfg.hidden]))?;
        let fc2 = "disc.fc2.w";
        store.add(fc2, xavier_init(&[cfg.hidden, 1], derive_seed(seed, fc2))?)?;
        store.add("disc.fc2.b", Tensor::zeros(&[1]))?;
        Ok(Discriminator { cfg, store })
    }

    /// `x: [B,7,H,W]` to logits `[B]`. With `rng` the net runs in training
    /// mode (batch statistics, dropout) and returns the batch statistics of
    /// each norm layer; otherwise running statistics are used.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        rng: Option<&mut R>,
        track: bool,
    ) -> Result<(Var, Vec<BatchStats<T>>)> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != NUM_CLASSES {
            return Err(CoreError::invalid(format!("discriminator input must be [B,7,H,W], got {s:?}")));
        }
        let plan = self.cfg.plan(s[2], s[3])?;
        let training = rng.is_some();
        let eps = T::lit(self.cfg.bn_eps);
        let k = self.cfg.kernel;
        let mut stats = Vec::new();
        let mut h = x;
        for i in 0..3 {
            let name = format!("disc.conv{}", i + 1);
            let geom = if i == 0 { ConvGeom::new(3, plan.pad1, 1) } else { ConvGeom::new(1, k / 2, 1) };
            let w = g.param(&self.store, &format!("{name}.w"), track)?;
            let b = g.param(&self.store, &format!("{name}.b"), track)?;
            h = g.conv2d(h, w, b, geom)?;
            let bn = format!("disc.bn{}", i + 1);
            let gamma = g.param(&self.store, &format!("{bn}.gamma"), track)?;
            let beta = g.param(&self.store, &format!("{bn}.beta"), track)?;
            h = if training {
                let (y, st) = g.batch_norm_train(h, gamma, beta, eps)?;
                stats.push(st);
                y
            } else {
                let mean = self.store.get(&format!("{bn}.mean"))?.data().to_vec();
                let var = self.store.get(&format!("{bn}.var"))?.data().to_vec();
                g.batch_norm_eval(h, gamma, beta, &mean, &var, eps)?
            };
            h = g.relu(h)?;
            h = match i {
                0 => g.avg_pool2d(h, 2)?,
                1 => g.avg_pool2d(h, 3)?,
                _ => global_average(g, h)?,
            };
        }
        let w1 = g.param(&self.store, "disc.fc1.w", track)?;
        let b1 = g.param(&self.store, "disc.fc1.b", track)?;
        let z = g.matmul(h, w1)?;
        let z = g.add_bias(z, b1)?;
        let mut z = g.relu(z)?;
        if let Some(rng) = rng {
            z = g.dropout(z, self.cfg.dropout, true, rng)?;
        }
        let w2 = g.param(&self.store, "disc.fc2.w", track)?;
        let b2 = g.param(&self.store, "disc.fc2.b", track)?;
        let out = g.matmul(z, w2)?;
        let out = g.add_bias(out, b2)?;
        Ok((g.reshape(out, &[s[0]])?, stats))
    }

    /// Folds batch statistics into the running buffers:
    /// `running = (1 - m) * running + m * batch`.
    pub fn update_running(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        let m = T::lit(self.cfg.bn_momentum);
        for (i, st) in stats.iter().enumerate() {
            for (buf, new) in [("mean", &st.mean), ("var", &st.var)] {
                let t = self.store.get_mut(&format!("disc.bn{}.{buf}", i + 1))?;
                t.data_mut().iter_mut().zip(new.iter()).for_each(|(r, &b)| *r = (T::one() - m) * *r + m * b);
            }
        }
        Ok(())
    }
}

/// `[B,C,H,W] -> [B,C]` mean over space.
fn global_average<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let hw = s[2] * s[3];
    let flat = g.reshape(x, &[s[0] * s[1], hw])?;
    let ones = g.constant(Tensor::full(&[hw, 1], T::one() / T::lit(hw as f64)));
    let pooled = g.matmul(flat, ones)?;
    g.reshape(pooled, &[s[0], s[1]])
}
