//! A small fully connected network with rectifier hidden layers and raw
//! logit outputs, plus exact reverse-mode gradients and a binary checkpoint
//! format.
//!
//! The forward/backward pair is hand-rolled: the architectures used here are
//! a couple of dense layers, and an explicit implementation keeps every
//! floating-point operation deterministic and auditable, which the bitwise
//! reproducibility guarantees depend on.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::divergence::ProbDist;
use crate::loss::{softmax, LossSpec};
use crate::seeding;
use crate::{Error, Result};

/// Checkpoint file magic bytes (format version 1).
const CHECKPOINT_MAGIC: &[u8; 5] = b"NLLB1";

/// One dense layer: `out_dim × in_dim` weights in row-major order plus a
/// bias per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn check(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidParameter("zero layer dimension".into()));
        }
        if self.w.len() != self.in_dim * self.out_dim || self.b.len() != self.out_dim {
            return Err(Error::DimensionMismatch(format!(
                "layer {}x{} has {} weights and {} biases",
                self.out_dim,
                self.in_dim,
                self.w.len(),
                self.b.len()
            )));
        }
        if self.w.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }

    /// out = W·x + b into a fresh vector.
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
        out
    }
}

/// Parameters of the multilayer perceptron. Hidden layers apply the
/// rectifier; the last layer emits raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    /// Build from explicit layers, validating dimension compatibility.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("need at least one layer".into()));
        }
        for l in &layers {
            l.check()?;
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer output {} feeds layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].in_dim];
        sizes.extend(self.layers.iter().map(|l| l.out_dim));
        sizes
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// FNV-1a digest of all parameter bits; used to assert that read-only
    /// operations leave parameters untouched.
    pub fn checksum(&self) -> u64 {
        let mut h = seeding::FNV_OFFSET;
        for l in &self.layers {
            h = seeding::fnv1a_extend(h, &l.w);
            h = seeding::fnv1a_extend(h, &l.b);
        }
        h
    }

    /// Raw logits for one input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut act = self.layers[0].affine(x);
        for layer in self.layers.iter().skip(1) {
            relu_inplace(&mut act);
            act = layer.affine(&act);
        }
        Ok(act)
    }

    /// Forward pass keeping each hidden layer's post-rectifier activations,
    /// which is all the backward pass needs.
    fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check_input(x)?;
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut act = self.layers[0].affine(x);
        for layer in self.layers.iter().skip(1) {
            relu_inplace(&mut act);
            let next = layer.affine(&act);
            hidden.push(act);
            act = next;
        }
        Ok((act, hidden))
    }

    /// Softmax probabilities and the argmax class (ties go to the lowest
    /// class index).
    pub fn predict(&self, x: &[f64]) -> Result<(ProbDist, usize)> {
        let logits = self.forward(x)?;
        let p = softmax(&logits)?;
        Ok((p.clone(), argmax(p.probs())))
    }

    /// Argmax class only, skipping the softmax (monotone, same winner).
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let logits = self.forward(x)?;
        Ok(argmax(&logits))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Zero-filled gradient buffers with this network's shapes.
    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    /// Write a versioned binary checkpoint: magic bytes, layer count, then
    /// per layer the dimensions and little-endian f64 weight/bias arrays.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.n_params() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.layers.len() as u64).to_le_bytes());
        for l in &self.layers {
            buf.extend_from_slice(&(l.in_dim as u64).to_le_bytes());
            buf.extend_from_slice(&(l.out_dim as u64).to_le_bytes());
            for v in l.w.iter().chain(&l.b) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
            if *cur + n > bytes.len() {
                return Err(Error::Checkpoint("truncated file".into()));
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        if take(&mut cur, 5)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let n_layers = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
            let out_dim = u64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()) as usize;
            let n = in_dim
                .checked_mul(out_dim)
                .ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?;
            let mut w = Vec::with_capacity(n);
            for _ in 0..n {
                w.push(f64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()));
            }
            let mut b = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                b.push(f64::from_le_bytes(take(&mut cur, 8)?.try_into().unwrap()));
            }
            layers.push(Layer { in_dim, out_dim, w, b });
        }
        if cur != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Self::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradient buffers matching an [`MlpParams`] layout: one (weights, biases)
/// pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrads {
    pub fn zero(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v = 0.0);
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (v, o) in w.iter_mut().zip(ow) {
                *v += o;
            }
            for (v, o) in b.iter_mut().zip(ob) {
                *v += o;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|v| *v *= s);
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Initialize parameters for the given layer sizes (input, hidden..., K):
/// weights from the fan-in-scaled uniform U(−1/√fan_in, 1/√fan_in) drawn in
/// a fixed order from a seeded generator; biases zero. Identical seeds give
/// bitwise-identical parameters.
pub fn init_params(layer_sizes: &[usize], seed: u64) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidParameter("zero layer size".into()));
    }
    let mut rng = seeding::rng(seed);
    let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (in_dim, out_dim) = (pair[0], pair[1]);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        layers.push(Layer {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
        });
    }
    MlpParams::from_layers(layers)
}

/// Loss value and exact parameter gradients for one example.
///
/// `views` holds one input vector per prediction view (two for the GJS
/// family); the loss's logit gradients are backpropagated per view and
/// summed into a single per-example gradient. Summing inside the example —
/// before any batch accumulation — is what keeps two identical views exactly
/// equivalent to one view with a doubled gradient.
pub fn backward(
    params: &MlpParams,
    views: &[&[f64]],
    y: &ProbDist,
    loss: &LossSpec,
) -> Result<(f64, MlpGrads)> {
    if views.len() != loss.views() {
        return Err(Error::DimensionMismatch(format!(
            "loss {} takes {} view(s), got {}",
            loss.name(),
            loss.views(),
            views.len()
        )));
    }
    let mut grads = params.zero_grads();
    let value = backward_into(params, views, y, loss, &mut grads)?;
    Ok((value, grads))
}

/// As [`backward`], accumulating into caller-provided buffers (which are not
/// zeroed here). Returns the loss value.
pub(crate) fn backward_into(
    params: &MlpParams,
    views: &[&[f64]],
    y: &ProbDist,
    loss: &LossSpec,
    grads: &mut MlpGrads,
) -> Result<f64> {
    let mut logits_per_view = Vec::with_capacity(views.len());
    let mut hidden_per_view = Vec::with_capacity(views.len());
    for x in views {
        let (logits, hidden) = params.forward_cached(x)?;
        logits_per_view.push(logits);
        hidden_per_view.push(hidden);
    }
    let logit_slices: Vec<&[f64]> = logits_per_view.iter().map(|v| v.as_slice()).collect();
    let out = loss.evaluate(y, &logit_slices)?;

    for (v, x) in views.iter().enumerate() {
        let hidden = &hidden_per_view[v];
        // d starts as dL/dlogits and is pulled back layer by layer.
        let mut d = out.grads[v].clone();
        for li in (0..params.layers.len()).rev() {
            let layer = &params.layers[li];
            let input: &[f64] = if li == 0 { x } else { &hidden[li - 1] };
            let (gw, gb) = &mut grads.layers[li];
            for o in 0..layer.out_dim {
                let dv = d[o];
                gb[o] += dv;
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += dv * xi;
                }
            }
            if li > 0 {
                // d_prev = Wᵀ·d, masked by the rectifier (post-activation > 0).
                let mut prev = vec![0.0; layer.in_dim];
                for (o, &dv) in d.iter().enumerate().take(layer.out_dim) {
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += wi * dv;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                d = prev;
            }
        }
    }
    Ok(out.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net(seed: u64) -> MlpParams {
        init_params(&[2, 8, 3], seed).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_params(&[2, 64, 64, 10], 5).unwrap();
        let b = init_params(&[2, 64, 64, 10], 5).unwrap();
        assert_eq!(a, b);
        let c = init_params(&[2, 64, 64, 10], 6).unwrap();
        assert_ne!(a, c);

        assert_eq!(a.input_dim(), 2);
        assert_eq!(a.output_dim(), 10);
        assert_eq!(a.layer_sizes(), vec![2, 64, 64, 10]);
        assert_eq!(a.n_params(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10);
        for l in a.layers() {
            assert!(l.b.iter().all(|&b| b == 0.0));
            let bound = 1.0 / (l.in_dim as f64).sqrt();
            assert!(l.w.iter().all(|&w| w.abs() < bound));
        }

        assert!(init_params(&[4], 0).is_err());
        assert!(init_params(&[4, 0, 2], 0).is_err());
    }

    #[test]
    fn forward_zero_network_is_uniform() {
        let params = MlpParams::from_layers(vec![
            Layer { in_dim: 3, out_dim: 4, w: vec![0.0; 12], b: vec![0.0; 4] },
            Layer { in_dim: 4, out_dim: 2, w: vec![0.0; 8], b: vec![0.0; 2] },
        ])
        .unwrap();
        let logits = params.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));
        let (p, class) = params.predict(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        assert_eq!(class, 0, "ties break to the lowest class index");
    }

    #[test]
    fn forward_single_layer_matches_matrix_product() {
        let params = MlpParams::from_layers(vec![Layer {
            in_dim: 2,
            out_dim: 3,
            w: vec![1.0, -2.0, 0.5, 4.0, -1.0, 3.0],
            b: vec![0.1, -0.2, 0.3],
        }])
        .unwrap();
        let x = [2.0, 3.0];
        let got = params.forward(&x).unwrap();
        let want = [
            1.0 * 2.0 + (-2.0) * 3.0 + 0.1,
            0.5 * 2.0 + 4.0 * 3.0 - 0.2,
            3.0 * 3.0 - 1.0 * 2.0 + 0.3,
        ];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-15);
        }

        // Deterministic: repeated calls agree bitwise.
        let again = params.forward(&x).unwrap();
        assert_eq!(got, again);

        assert!(params.forward(&[1.0]).is_err());
    }

    #[test]
    fn predict_argmax_shift_invariant() {
        let params = tiny_net(3);
        let x = [0.7, -1.1];
        let (_, class) = params.predict(&x).unwrap();
        // Adding a constant to every output bias shifts all logits equally.
        let mut shifted = params.clone();
        for b in &mut shifted.layers_mut().last_mut().unwrap().b {
            *b += 5.0;
        }
        let (_, class2) = shifted.predict(&x).unwrap();
        assert_eq!(class, class2);
        assert_eq!(class, params.predict_class(&x).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences_over_parameters() {
        let y = ProbDist::onehot(3, 1).unwrap();
        let x1 = [0.8, -0.6];
        let x2 = [1.1, 0.4];

        for spec in [
            LossSpec::CrossEntropy,
            LossSpec::Js { pi: 0.5 },
            LossSpec::Gjs { pi: 0.7 },
        ] {
            let params = tiny_net(11);
            let views: Vec<&[f64]> = match spec.views() {
                1 => vec![&x1],
                _ => vec![&x1, &x2],
            };
            let (_, grads) = backward(&params, &views, &y, &spec).unwrap();

            // Central differences over every weight and bias.
            let h = 1e-5;
            for li in 0..params.layers().len() {
                for (field, n) in [(0usize, params.layers()[li].w.len()), (1, params.layers()[li].b.len())] {
                    for idx in 0..n {
                        let eval = |delta: f64| -> f64 {
                            let mut q = params.clone();
                            {
                                let l = &mut q.layers_mut()[li];
                                if field == 0 {
                                    l.w[idx] += delta;
                                } else {
                                    l.b[idx] += delta;
                                }
                            }
                            let logits: Vec<Vec<f64>> =
                                views.iter().map(|v| q.forward(v).unwrap()).collect();
                            let slices: Vec<&[f64]> =
                                logits.iter().map(|v| v.as_slice()).collect();
                            spec.evaluate(&y, &slices).unwrap().value
                        };
                        let fd = (eval(h) - eval(-h)) / (2.0 * h);
                        let a = if field == 0 {
                            grads.layers[li].0[idx]
                        } else {
                            grads.layers[li].1[idx]
                        };
                        let mag = a.abs().max(fd.abs());
                        if mag < 1e-3 {
                            assert!((a - fd).abs() < 1e-7, "{spec:?} l{li} f{field} i{idx}: {a} vs {fd}");
                        } else {
                            assert!((a - fd).abs() / mag < 1e-4, "{spec:?} l{li} f{field} i{idx}: {a} vs {fd}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn backward_vanishes_at_exact_label() {
        // A bias-only network whose softmax saturates at the label.
        let params = MlpParams::from_layers(vec![Layer {
            in_dim: 2,
            out_dim: 3,
            w: vec![0.0; 6],
            b: vec![900.0, -900.0, -900.0],
        }])
        .unwrap();
        let y = ProbDist::onehot(3, 0).unwrap();
        let x = [0.4, -0.9];
        let (value, grads) = backward(&params, &[&x], &y, &LossSpec::Js { pi: 0.5 }).unwrap();
        assert!(value.abs() < 1e-12);
        for (w, b) in &grads.layers {
            assert!(w.iter().chain(b).all(|&g| g.abs() < 1e-300));
        }
    }

    #[test]
    fn gjs_identical_views_matches_js_backward_bitwise() {
        let params = tiny_net(29);
        let y = ProbDist::onehot(3, 2).unwrap();
        let x = [0.3, 1.2];
        for pi in [0.1, 0.5, 0.9] {
            let (v_js, g_js) = backward(&params, &[&x], &y, &LossSpec::Js { pi }).unwrap();
            let (v_gjs, g_gjs) =
                backward(&params, &[&x, &x], &y, &LossSpec::Gjs { pi }).unwrap();
            assert_eq!(v_js.to_bits(), v_gjs.to_bits());
            for ((w1, b1), (w2, b2)) in g_js.layers.iter().zip(&g_gjs.layers) {
                for (a, b) in w1.iter().zip(w2).chain(b1.iter().zip(b2)) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn grads_arithmetic() {
        let params = tiny_net(1);
        let mut g = params.zero_grads();
        let y = ProbDist::onehot(3, 0).unwrap();
        let x = [1.0, 2.0];
        let (_, g1) = backward(&params, &[&x], &y, &LossSpec::CrossEntropy).unwrap();
        g.add_assign(&g1);
        g.add_assign(&g1);
        g.scale(0.5);
        for ((w, b), (w1, b1)) in g.layers.iter().zip(&g1.layers) {
            for (a, e) in w.iter().zip(w1).chain(b.iter().zip(b1)) {
                assert!((a - e).abs() < 1e-15);
            }
        }
        g.zero();
        assert!(g.layers.iter().all(|(w, b)| w.iter().chain(b).all(|&v| v == 0.0)));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let params = init_params(&[4, 16, 5], 77).unwrap();
        params.save(&path).unwrap();
        let loaded = MlpParams::load(&path).unwrap();
        assert_eq!(params, loaded);
        assert_eq!(params.checksum(), loaded.checksum());

        // Corrupt the magic and expect a checkpoint error.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(MlpParams::load(&path), Err(Error::Checkpoint(_))));

        // Truncation is also detected.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(MlpParams::load(&path).is_err());
    }

    #[test]
    fn checksum_tracks_changes() {
        let params = tiny_net(4);
        let before = params.checksum();
        assert_eq!(before, tiny_net(4).checksum());
        let mut changed = params.clone();
        changed.layers_mut()[0].w[0] += 1e-12;
        assert_ne!(before, changed.checksum());
    }
}
