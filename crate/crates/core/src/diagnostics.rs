//! Gradient suites shared by the command line and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{grad_check, grad_check_params, GradCheckReport, Graph, ParamSet, Tensor, Var};
use crate::data::{CorruptionSpec, Synth};
use crate::error::Result;
use crate::model::{CarModel, ModelConfig, Variant, Vocab};
use crate::nn::{attention, AttentionParams, EncoderLayer, LayerConfig, ReviserLayer};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Bound on the relative error of single operations and layers.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Bound on the relative error of the full joint loss.
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// One line of a gradient-check table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckRow {
    fn new(name: impl Into<String>, report: GradCheckReport, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            checked: report.checked,
            max_rel_error: report.max_rel_error,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.max_rel_error.is_finite()
    }
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches length")
}

/// Contracts `v` with fixed random weights so every output coordinate
/// receives a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<'_>, v: Var, w: &Tensor) -> Result<Var> {
    let w = g.constant(w.clone());
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

type OpFn = Box<dyn Fn(&mut Graph<'_>, &[Var]) -> Result<Var>>;

/// Checks every differentiable tensor operation and each network layer on
/// random tensors with shapes drawn from `seed`.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, m) = (
        rng.random_range(2..=5),
        rng.random_range(2..=5),
        rng.random_range(2..=5),
    );
    let a = random(&[n, k], &mut rng);
    let b = random(&[k, m], &mut rng);
    let bt = random(&[m, k], &mut rng);
    let same = random(&[n, k], &mut rng);
    let row = random(&[k], &mut rng);
    let gain = random(&[k], &mut rng);
    let w_nk = random(&[n, k], &mut rng);
    let w_nm = random(&[n, m], &mut rng);
    let w_nn = random(&[n, n], &mut rng);
    let w_2nk = random(&[2 * n, k], &mut rng);
    let w_n2k = random(&[n, 2 * k], &mut rng);
    let ids: Vec<usize> = (0..4).map(|_| rng.random_range(0..n)).collect();
    let w_ids = random(&[ids.len(), k], &mut rng);
    let start = rng.random_range(0..k);
    let w_slice = random(&[n, k - start], &mut rng);
    let w_flat = random(&[n * k], &mut rng);
    let target = rng.random_range(0..n * k);
    let mask: Vec<bool> = (0..n * k).map(|i| i % k == 0 || rng.random_bool(0.6)).collect();

    let cases: Vec<(&str, OpFn, Vec<Tensor>)> = vec![
        ("matmul", { let w = w_nm.clone(); Box::new(move |g, v| { let c = g.matmul(v[0], v[1])?; weighted_sum(g, c, &w) }) }, vec![a.clone(), b]),
        ("matmul_nt", { let w = w_nm.clone(); Box::new(move |g, v| { let c = g.matmul_nt(v[0], v[1])?; weighted_sum(g, c, &w) }) }, vec![a.clone(), bt]),
        ("add", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.add(v[0], v[1])?; weighted_sum(g, c, &w) }) }, vec![a.clone(), same.clone()]),
        ("sub", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.sub(v[0], v[1])?; weighted_sum(g, c, &w) }) }, vec![a.clone(), same.clone()]),
        ("mul", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.mul(v[0], v[1])?; weighted_sum(g, c, &w) }) }, vec![a.clone(), same.clone()]),
        ("add_row", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.add_row(v[0], v[1])?; weighted_sum(g, c, &w) }) }, vec![a.clone(), row.clone()]),
        ("scale", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.scale(v[0], -1.7); weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("relu", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.relu(v[0]); weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("softmax_rows", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.softmax(v[0], 1)?; weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("softmax_cols", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.softmax(v[0], 0)?; weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("masked_softmax", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.masked_softmax(v[0], &mask)?; weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("layer_norm", { let w = w_nk.clone(); Box::new(move |g, v| { let c = g.layer_norm(v[0], v[1], v[2], 1e-5)?; weighted_sum(g, c, &w) }) }, vec![a.clone(), gain, row.clone()]),
        ("concat_rows", { let w = w_2nk.clone(); Box::new(move |g, v| { let c = g.concat(&[v[0], v[1]], 0)?; weighted_sum(g, c, &w) }) }, vec![a.clone(), same.clone()]),
        ("concat_cols", { let w = w_n2k.clone(); Box::new(move |g, v| { let c = g.concat(&[v[0], v[1]], 1)?; weighted_sum(g, c, &w) }) }, vec![a.clone(), same]),
        ("embedding_lookup", { let w = w_ids.clone(); let ids = ids.clone(); Box::new(move |g, v| { let c = g.embedding_lookup(v[0], &ids)?; weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("gather_rows", { let w = w_ids.clone(); Box::new(move |g, v| { let c = g.gather_rows(v[0], &ids)?; weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("slice_cols", { let w = w_slice.clone(); Box::new(move |g, v| { let c = g.slice_cols(v[0], start, k - start)?; weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("reshape", { let w = w_flat.clone(); Box::new(move |g, v| { let c = g.reshape(v[0], &[n * k])?; weighted_sum(g, c, &w) }) }, vec![a.clone()]),
        ("cross_entropy", Box::new(move |g, v| g.cross_entropy(v[0], target)), vec![a.clone()]),
        ("sum", Box::new(|g, v| Ok(g.sum(v[0]))), vec![a.clone()]),
        ("self_attention_scores", { let w = w_nn.clone(); Box::new(move |g, v| { let c = g.matmul_nt(v[0], v[0])?; let c = g.softmax(c, 1)?; weighted_sum(g, c, &w) }) }, vec![a]),
    ];

    let mut rows = Vec::new();
    for (name, f, inputs) in &cases {
        let report = grad_check(f, inputs, FD_STEP)?;
        rows.push(GradCheckRow::new(*name, report, OP_TOLERANCE));
    }
    rows.extend(layer_suite(&mut rng)?);
    Ok(rows)
}

fn layer_suite(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckRow>> {
    let (d, heads) = (8, 2);
    let cfg = LayerConfig::new(d, heads);
    let x = random(&[3, d], rng);
    let mem = random(&[4, d], rng);
    let w3 = random(&[3, d], rng);
    let valid = [true, true, false, true];
    let mut rows = Vec::new();

    let mut ps = ParamSet::new();
    let attn = AttentionParams::new(&mut ps, "attn", d, heads, rng)?;
    let report = grad_check_params(
        &mut ps,
        |g| {
            let q = g.constant(x.clone());
            let kv = g.constant(mem.clone());
            let y = attention(g, q, kv, &attn, &valid)?;
            weighted_sum(g, y, &w3)
        },
        FD_STEP,
        None,
    )?;
    rows.push(GradCheckRow::new("multi_head_attention", report, OP_TOLERANCE));

    let mut ps = ParamSet::new();
    let enc = EncoderLayer::new(&mut ps, "enc", &cfg, rng)?;
    let report = grad_check_params(
        &mut ps,
        |g| {
            let xv = g.constant(x.clone());
            let y = enc.forward(g, xv, &[true, true, false])?;
            weighted_sum(g, y, &w3)
        },
        FD_STEP,
        None,
    )?;
    rows.push(GradCheckRow::new("encoder_layer", report, OP_TOLERANCE));

    let mut ps = ParamSet::new();
    let rev = ReviserLayer::new(&mut ps, "rev", &cfg, rng)?;
    let report = grad_check_params(
        &mut ps,
        |g| {
            let s = g.constant(x.clone());
            let z = g.constant(mem.clone());
            let y = rev.forward(g, s, z, &valid)?;
            weighted_sum(g, y, &w3)
        },
        FD_STEP,
        None,
    )?;
    rows.push(GradCheckRow::new("reviser_layer", report, OP_TOLERANCE));
    Ok(rows)
}

/// Checks the gradient of the joint loss of a freshly initialised micro
/// model on one synthetic sample with shortened text.
pub fn model_gradient_check(variant: Variant, seed: u64) -> Result<GradCheckRow> {
    let synth = Synth::default_synth();
    let corruption = CorruptionSpec::new(0.3, 0.2)?;
    let mut sample = synth.generate_sample(0, &corruption, seed)?;
    sample.history.truncate(1);
    for u in &mut sample.history {
        u.truncate(6);
    }
    sample.question.truncate(10);
    let vocab = Vocab::build(std::slice::from_ref(&sample));
    let cfg = ModelConfig::micro(vocab.len(), synth.candidate_count());
    let mut model = CarModel::new(cfg, variant, synth.schema.clone(), vocab, seed)?;
    let arch = model.clone();
    let report = grad_check_params(
        &mut model.params,
        |g| arch.loss(g, &sample).map(|l| l.total),
        FD_STEP,
        None,
    )?;
    Ok(GradCheckRow::new(format!("joint_loss_{}", variant.name()), report, MODEL_TOLERANCE))
}

/// Operation suite followed by the end-to-end check of both variants.
pub fn full_gradient_suite(seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rows = op_gradient_suite(seed)?;
    rows.push(model_gradient_check(Variant::Car, seed)?);
    rows.push(model_gradient_check(Variant::Ca, seed)?);
    Ok(rows)
}
