//! Attention-gated classification head.
//!
//! ```text
//! gate   = sigmoid(W2^T relu(W1^T x + b1) + b2)     (dim)
//! logits = Wc^T (gate * x) + bc                     (n_classes)
//! ```
//!
//! Parameters are kept in f64 for training and stored as f32 on disk.

mod optim;
mod train;

pub use optim::{adamw_update, cosine_lr, optimizer_step, AdamW, OptimizerState};
pub use train::{
    hard_indices, mine_hard_samples, sample_losses, train, write_metrics_csv, EpochMetrics,
    TrainConfig, TrainOutput,
};

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::format::Reader;

pub const DARCH_MAGIC: &[u8; 5] = b"DARCH";
pub const DARCH_VERSION: u32 = 1;

/// Pre-activations beyond this are treated as saturated so the gate stays
/// strictly inside (0, 1).
const GATE_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    /// `dim x hidden`, row-major.
    pub attn_w1: Vec<f64>,
    pub attn_b1: Vec<f64>,
    /// `hidden x dim`, row-major.
    pub attn_w2: Vec<f64>,
    pub attn_b2: Vec<f64>,
    /// `dim x n_classes`, row-major.
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(dim: usize, hidden: usize, n_classes: usize) -> Self {
        HeadParams {
            dim,
            hidden,
            n_classes,
            attn_w1: vec![0.0; dim * hidden],
            attn_b1: vec![0.0; hidden],
            attn_w2: vec![0.0; hidden * dim],
            attn_b2: vec![0.0; dim],
            cls_w: vec![0.0; dim * n_classes],
            cls_b: vec![0.0; n_classes],
        }
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, n_classes: usize, rng: &mut R) -> Self {
        let mut p = HeadParams::zeros(dim, hidden, n_classes);
        let fill = |w: &mut [f64], fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        };
        fill(&mut p.attn_w1, dim, rng);
        fill(&mut p.attn_w2, hidden, rng);
        fill(&mut p.cls_w, dim, rng);
        p
    }

    /// The six tensors in storage order, each flagged with whether it is a
    /// weight matrix (decayed) or a bias.
    pub fn tensors(&self) -> [(&[f64], bool); 6] {
        [
            (&self.attn_w1, true),
            (&self.attn_b1, false),
            (&self.attn_w2, true),
            (&self.attn_b2, false),
            (&self.cls_w, true),
            (&self.cls_b, false),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&mut [f64], bool); 6] {
        [
            (&mut self.attn_w1, true),
            (&mut self.attn_b1, false),
            (&mut self.attn_w2, true),
            (&mut self.attn_b2, false),
            (&mut self.cls_w, true),
            (&mut self.cls_b, false),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for (t, _) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }

    fn same_shape(&self, other: &HeadParams) -> bool {
        self.dim == other.dim && self.hidden == other.hidden && self.n_classes == other.n_classes
    }

    /// Values as they will be stored (rounded to f32 and back).
    pub fn rounded_to_f32(&self) -> HeadParams {
        let mut p = self.clone();
        for (t, _) in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        p
    }
}

/// Per-row intermediate buffers, reused across rows.
pub(crate) struct Scratch {
    z1: Vec<f64>,
    hidden: Vec<f64>,
    z2: Vec<f64>,
    gate: Vec<f64>,
    gated: Vec<f64>,
    logits: Vec<f64>,
    dlogits: Vec<f64>,
    dz2: Vec<f64>,
    dz1: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(p: &HeadParams) -> Self {
        Scratch {
            z1: vec![0.0; p.hidden],
            hidden: vec![0.0; p.hidden],
            z2: vec![0.0; p.dim],
            gate: vec![0.0; p.dim],
            gated: vec![0.0; p.dim],
            logits: vec![0.0; p.n_classes],
            dlogits: vec![0.0; p.n_classes],
            dz2: vec![0.0; p.dim],
            dz1: vec![0.0; p.hidden],
        }
    }

    pub(crate) fn logits(&self) -> &[f64] {
        &self.logits
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn forward_into(p: &HeadParams, x: &[f32], s: &mut Scratch) {
    let (h, c) = (p.hidden, p.n_classes);

    s.z1.copy_from_slice(&p.attn_b1);
    for (i, &xi) in x.iter().enumerate() {
        axpy(&mut s.z1, xi as f64, &p.attn_w1[i * h..(i + 1) * h]);
    }
    for (r, &z) in s.hidden.iter_mut().zip(&s.z1) {
        *r = z.max(0.0);
    }

    s.z2.copy_from_slice(&p.attn_b2);
    for (j, &r) in s.hidden.iter().enumerate() {
        if r != 0.0 {
            axpy(&mut s.z2, r, &p.attn_w2[j * p.dim..(j + 1) * p.dim]);
        }
    }
    for k in 0..p.dim {
        s.gate[k] = sigmoid(s.z2[k].clamp(-GATE_CLAMP, GATE_CLAMP));
        s.gated[k] = s.gate[k] * x[k] as f64;
    }

    s.logits.copy_from_slice(&p.cls_b);
    for (k, &g) in s.gated.iter().enumerate() {
        axpy(&mut s.logits, g, &p.cls_w[k * c..(k + 1) * c]);
    }
}

/// `-log softmax(logits)[label]`, computed stably.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    lse - logits[label]
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Forward and backward pass for one row; gradients are scaled by `scale`
/// and added into `grads`. Returns the row loss.
pub(crate) fn accumulate_row(
    p: &HeadParams,
    x: &[f32],
    label: usize,
    scale: f64,
    grads: &mut HeadParams,
    s: &mut Scratch,
) -> f64 {
    forward_into(p, x, s);
    let (h, c, dim) = (p.hidden, p.n_classes, p.dim);
    let loss = cross_entropy(&s.logits, label);

    let max = s.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (d, &l) in s.dlogits.iter_mut().zip(&s.logits) {
        *d = (l - max).exp();
        z += *d;
    }
    for d in s.dlogits.iter_mut() {
        *d = *d / z * scale;
    }
    s.dlogits[label] -= scale;

    axpy(&mut grads.cls_b, 1.0, &s.dlogits);
    for k in 0..dim {
        let row = &p.cls_w[k * c..(k + 1) * c];
        axpy(&mut grads.cls_w[k * c..(k + 1) * c], s.gated[k], &s.dlogits);
        let dgated = dot(row, &s.dlogits);
        let z2 = s.z2[k];
        s.dz2[k] = if z2.abs() >= GATE_CLAMP {
            0.0
        } else {
            dgated * x[k] as f64 * s.gate[k] * (1.0 - s.gate[k])
        };
    }

    axpy(&mut grads.attn_b2, 1.0, &s.dz2);
    for j in 0..h {
        if s.z1[j] > 0.0 {
            let w2 = &p.attn_w2[j * dim..(j + 1) * dim];
            axpy(
                &mut grads.attn_w2[j * dim..(j + 1) * dim],
                s.hidden[j],
                &s.dz2,
            );
            s.dz1[j] = dot(w2, &s.dz2);
        } else {
            s.dz1[j] = 0.0;
        }
    }

    axpy(&mut grads.attn_b1, 1.0, &s.dz1);
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(&mut grads.attn_w1[i * h..(i + 1) * h], xi as f64, &s.dz1);
        }
    }
    loss
}

fn check_input(p: &HeadParams, x: &[f32]) -> Result<()> {
    if x.len() != p.dim {
        return Err(Error::validation(format!(
            "input has {} channels, head expects {}",
            x.len(),
            p.dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite input"));
    }
    Ok(())
}

/// Logits and attention gate for one input row.
pub fn forward(p: &HeadParams, x: &[f32]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(p, x)?;
    let mut s = Scratch::new(p);
    forward_into(p, x, &mut s);
    Ok((s.logits, s.gate))
}

/// Mean softmax cross-entropy over a batch (`rows` is `labels.len() x dim`,
/// row-major) and its exact gradient.
pub fn loss_and_grad(p: &HeadParams, rows: &[f32], labels: &[usize]) -> Result<(f64, HeadParams)> {
    if labels.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    if rows.len() != labels.len() * p.dim {
        return Err(Error::validation(format!(
            "batch has {} values for {} labels of dim {}",
            rows.len(),
            labels.len(),
            p.dim
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= p.n_classes) {
        return Err(Error::validation(format!(
            "label {l} out of range for {} classes",
            p.n_classes
        )));
    }
    let mut grads = HeadParams::zeros(p.dim, p.hidden, p.n_classes);
    let mut s = Scratch::new(p);
    let scale = 1.0 / labels.len() as f64;
    let mut total = 0.0;
    for (x, &l) in rows.chunks_exact(p.dim).zip(labels) {
        check_input(p, x)?;
        total += accumulate_row(p, x, l, scale, &mut grads, &mut s);
    }
    Ok((total * scale, grads))
}

pub fn encode_params(p: &HeadParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + 4 * p.n_params());
    out.extend_from_slice(DARCH_MAGIC);
    out.extend_from_slice(&DARCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.dim as u32).to_le_bytes());
    out.extend_from_slice(&(p.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(p.n_classes as u32).to_le_bytes());
    for (t, _) in p.tensors() {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_params(buf: &[u8]) -> Result<HeadParams> {
    let mut r = Reader::new(buf);
    let magic = r
        .take(5, "magic")
        .map_err(|_| Error::Format("file too short for DARCH1 magic".into()))?;
    if magic != DARCH_MAGIC {
        return Err(Error::Format("bad magic, expected \"DARCH\"".into()));
    }
    let version = r.u32("version")?;
    if version != DARCH_VERSION {
        return Err(Error::Format(format!(
            "unsupported DARCH version {version}"
        )));
    }
    let dim = r.u32("dim")? as usize;
    let hidden = r.u32("hidden")? as usize;
    let n_classes = r.u32("class count")? as usize;
    if dim == 0 || hidden == 0 || n_classes == 0 {
        return Err(Error::Format("head dimensions must be positive".into()));
    }
    let mut p = HeadParams::zeros(dim, hidden, n_classes);
    for (t, _) in p.tensors_mut() {
        let vals = r.f32s(t.len() as u64, "parameters")?;
        for (dst, v) in t.iter_mut().zip(vals) {
            *dst = v as f64;
        }
    }
    r.finish()?;
    if !p.is_finite() {
        return Err(Error::validation("non-finite parameter"));
    }
    Ok(p)
}

pub fn save_params(p: &HeadParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(p)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<HeadParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::derive_rng;

    fn random_params(dim: usize, h: usize, c: usize, seed: u64) -> HeadParams {
        let mut rng = derive_rng(seed, 0, 0, 0);
        let mut p = HeadParams::init(dim, h, c, &mut rng);
        for b in p
            .attn_b1
            .iter_mut()
            .chain(&mut p.attn_b2)
            .chain(&mut p.cls_b)
        {
            *b = rng.gen_range(-0.5..0.5);
        }
        p
    }

    #[test]
    fn zero_attention_gives_half_gate() {
        let mut p = random_params(4, 2, 3, 1);
        p.attn_w1.fill(0.0);
        p.attn_b1.fill(0.0);
        p.attn_w2.fill(0.0);
        p.attn_b2.fill(0.0);
        let x = [1.0, -2.0, 0.5, 3.0];
        let (logits, gate) = forward(&p, &x).unwrap();
        assert!(gate.iter().all(|&g| g == 0.5));
        for c in 0..3 {
            let expect: f64 = p.cls_b[c]
                + (0..4)
                    .map(|k| p.cls_w[k * 3 + c] * 0.5 * x[k] as f64)
                    .sum::<f64>();
            assert!((logits[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_bias_logits() {
        let p = random_params(5, 3, 4, 2);
        let (logits, _) = forward(&p, &[0.0; 5]).unwrap();
        assert_eq!(logits, p.cls_b);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = random_params(3, 2, 2, 3);
        assert!(forward(&p, &[0.0, f32::NAN, 0.0]).is_err());
        assert!(forward(&p, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_ln_classes() {
        let p = HeadParams::zeros(3, 2, 5);
        let (loss, _) = loss_and_grad(&p, &[1.0, 2.0, 3.0], &[4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_keeps_loss_and_grads() {
        let p = random_params(4, 2, 3, 4);
        let rows = [0.3, -1.0, 2.0, 0.1, 1.5, 0.2, -0.7, 0.9];
        let labels = [2, 0];
        let (l1, g1) = loss_and_grad(&p, &rows, &labels).unwrap();
        let doubled: Vec<f32> = rows.iter().chain(&rows).copied().collect();
        let (l2, g2) = loss_and_grad(&p, &doubled, &[2, 0, 2, 0]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for ((a, _), (b, _)) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn loss_rejects_bad_labels_and_empty_batch() {
        let p = HeadParams::zeros(2, 1, 2);
        assert!(loss_and_grad(&p, &[0.0, 0.0], &[2]).is_err());
        assert!(loss_and_grad(&p, &[], &[]).is_err());
    }

    #[test]
    fn params_round_trip_at_f32() {
        let p = random_params(6, 3, 4, 5);
        let back = decode_params(&encode_params(&p)).unwrap();
        assert_eq!(back, p.rounded_to_f32());
        assert_eq!(encode_params(&back), encode_params(&p));
    }

    #[test]
    fn params_header_and_errors() {
        let p = random_params(2, 1, 2, 6);
        let bytes = encode_params(&p);
        assert_eq!(&bytes[..5], b"DARCH");
        assert_eq!(bytes.len(), 21 + 4 * p.n_params());
        assert!(matches!(
            decode_params(&bytes[..bytes.len() - 1]),
            Err(Error::Length { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_params(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
