//! Symbolic graph reasoning layer between encoder and decoder.
//!
//! Local features `X: [HW, D_L]` are pooled onto the `M` class nodes by a
//! per-pixel softmax over nodes, evolved by one graph convolution over the
//! normalized prior adjacency with the HOG node priors concatenated, and
//! mapped back to pixels by a per-node softmax over pixels. The result is
//! added to `X`, so zero mapping weights make the layer the identity.

use crate::autodiff::{Graph, Var};
use crate::error::{CoreError, Result};
use crate::init::{derive_seed, xavier_init};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::symbolic::SymbolicGraph;
use crate::tensor::Tensor;

pub const M: usize = crate::segmap::NUM_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SgrConfig {
    /// Local feature width `D_L`.
    pub d_local: usize,
    /// Node feature width `N`.
    pub n: usize,
    /// Hidden width of the node/pixel compatibility score.
    pub hidden: usize,
}

impl SgrConfig {
    pub fn new(d_local: usize, n: usize) -> Self {
        SgrConfig { d_local, n, hidden: 16 }
    }

    /// `(suffix, shape)` of every weight.
    pub fn weight_shapes(&self) -> [(&'static str, [usize; 2]); 8] {
        let (d, n, k) = (self.d_local, self.n, self.hidden);
        [
            ("w_a", [d, M]),
            ("w_lsa", [d, n]),
            ("w_g", [2 * n, n]),
            ("w_glm", [n, n]),
            ("w_proj", [n, d]),
            ("w_s_node", [n, k]),
            ("w_s_pixel", [d, k]),
            ("w_s", [k, 1]),
        ]
    }

    /// Registers Xavier-initialized weights under `prefix.`.
    pub fn register<T: Scalar>(&self, store: &mut ParamStore<T>, prefix: &str, seed: u64) -> Result<()> {
        for (suffix, shape) in self.weight_shapes() {
            let name = format!("{prefix}.{suffix}");
            store.add(&name, xavier_init(&shape, derive_seed(seed, &name))?)?;
        }
        Ok(())
    }
}

/// `Q^{-1/2} (E + I) Q^{-1/2}` with `Q` the row degrees of `E + I`.
pub fn normalize_adjacency(e_hard: &[f64], m: usize) -> Vec<f64> {
    assert_eq!(e_hard.len(), m * m);
    let a: Vec<f64> = (0..m * m).map(|k| e_hard[k] + if k / m == k % m { 1.0 } else { 0.0 }).collect();
    let inv_sqrt: Vec<f64> = (0..m).map(|i| 1.0 / a[i * m..(i + 1) * m].iter().sum::<f64>().sqrt()).collect();
    (0..m * m).map(|k| inv_sqrt[k / m] * a[k] * inv_sqrt[k % m]).collect()
}

/// Fixed graph inputs: node priors and normalized adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SgrGraphState<T> {
    /// `[M, N]`.
    pub v: Tensor<T>,
    /// `M × M` entries in {0, 1}, zero diagonal.
    pub e_hard: Vec<f64>,
    /// `[M, M]`.
    pub e_norm: Tensor<T>,
}

impl<T: Scalar> SgrGraphState<T> {
    pub fn new(v: &[f64], n: usize, e_hard: &[f64]) -> Result<Self> {
        if e_hard.len() != M * M || e_hard.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(CoreError::invalid("hard adjacency must be 7x7 with entries in {0,1}"));
        }
        let mut e_hard = e_hard.to_vec();
        (0..M).for_each(|i| e_hard[i * M + i] = 0.0);
        let e_norm = Tensor::from_f64(&[M, M], &normalize_adjacency(&e_hard, M))?;
        Ok(SgrGraphState { v: Tensor::from_f64(&[M, n], v)?, e_hard, e_norm })
    }

    pub fn from_graph(graph: &SymbolicGraph) -> Result<Self> {
        Self::new(&graph.v, graph.n, &graph.hard_edges())
    }
}

/// Weight and graph leaves bound once per tape.
#[derive(Clone, Copy, Debug)]
pub struct SgrVars {
    pub w_a: Var,
    pub w_lsa: Var,
    pub w_g: Var,
    pub w_glm: Var,
    pub w_proj: Var,
    pub w_s_node: Var,
    pub w_s_pixel: Var,
    pub w_s: Var,
    pub v: Var,
    pub e_norm: Var,
}

impl SgrVars {
    pub fn bind<T: Scalar>(
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        prefix: &str,
        state: &SgrGraphState<T>,
        track: bool,
    ) -> Result<Self> {
        let mut p = |s: &str| g.param(store, &format!("{prefix}.{s}"), track);
        let (w_a, w_lsa, w_g, w_glm) = (p("w_a")?, p("w_lsa")?, p("w_g")?, p("w_glm")?);
        let (w_proj, w_s_node, w_s_pixel, w_s) = (p("w_proj")?, p("w_s_node")?, p("w_s_pixel")?, p("w_s")?);
        let v = g.constant(state.v.clone());
        let e_norm = g.constant(state.e_norm.clone());
        Ok(SgrVars { w_a, w_lsa, w_g, w_glm, w_proj, w_s_node, w_s_pixel, w_s, v, e_norm })
    }
}

/// `A_l[m,i] = softmax_m(x_i · W_a[:,m])`, `H_lsa = A_l · X · W_lsa`.
/// Returns `(H_lsa [M,N], A_l [M,HW])`.
pub fn local_semantic_attention<T: Scalar>(g: &mut Graph<T>, x: Var, p: &SgrVars) -> Result<(Var, Var)> {
    let logits = g.matmul(x, p.w_a)?;
    let per_pixel = g.softmax(logits, 1)?;
    let a_l = g.transpose(per_pixel)?;
    let xw = g.matmul(x, p.w_lsa)?;
    let h_lsa = g.matmul(a_l, xw)?;
    Ok((h_lsa, a_l))
}

/// `H_g = relu(E_norm · [relu(H_lsa) | V] · W_g)`.
pub fn global_graph_reasoning<T: Scalar>(g: &mut Graph<T>, h_lsa: Var, p: &SgrVars) -> Result<Var> {
    let act = g.relu(h_lsa)?;
    let b_g = g.concat_cols(act, p.v)?;
    let mixed = g.matmul(p.e_norm, b_g)?;
    let z = g.matmul(mixed, p.w_g)?;
    g.relu(z)
}

/// Compatibility `l[m,i] = w_s · relu(h_m W_s_node + x_i W_s_pixel)`,
/// `A_g = softmax_i(l)`, and `X_dec = X + A_gᵀ · H_g · W_glm · W_proj`.
/// Returns `(X_dec [HW,D_L], A_g [M,HW])`.
pub fn global_local_mapping<T: Scalar>(g: &mut Graph<T>, h_g: Var, x: Var, p: &SgrVars) -> Result<(Var, Var)> {
    let hw = g.shape(x)[0];
    let node = g.matmul(h_g, p.w_s_node)?;
    let pixel = g.matmul(x, p.w_s_pixel)?;
    let pairs = g.pairwise_sum(node, pixel)?;
    let hidden = g.relu(pairs)?;
    let flat = g.matmul(hidden, p.w_s)?;
    let logits = g.reshape(flat, &[M, hw])?;
    let a_g = g.softmax(logits, 1)?;
    let glm = g.matmul(h_g, p.w_glm)?;
    let proj = g.matmul(glm, p.w_proj)?;
    let a_t = g.transpose(a_g)?;
    let mapped = g.matmul(a_t, proj)?;
    Ok((g.add(mapped, x)?, a_g))
}

#[derive(Clone, Copy, Debug)]
pub struct SgrOutput {
    pub x_dec: Var,
    pub a_l: Var,
    pub h_lsa: Var,
    pub h_g: Var,
    pub a_g: Var,
}

/// Full layer on one sample's `[HW, D_L]` features.
pub fn sgr_forward<T: Scalar>(g: &mut Graph<T>, x: Var, p: &SgrVars) -> Result<SgrOutput> {
    let (h_lsa, a_l) = local_semantic_attention(g, x, p)?;
    let h_g = global_graph_reasoning(g, h_lsa, p)?;
    let (x_dec, a_g) = global_local_mapping(g, h_g, x, p)?;
    Ok(SgrOutput { x_dec, a_l, h_lsa, h_g, a_g })
}
