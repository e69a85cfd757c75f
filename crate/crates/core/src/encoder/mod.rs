//! Feature extractor, contrastive projection head, classifier head over the
//! expanded label space, and the momentum copy used for key embeddings.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use rand::Rng as _;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::{ema_update, Tape, Tensor, Var};
use crate::rng;

/// Default EMA coefficient for the momentum copy.
pub const DEFAULT_EMA: f64 = 0.999;

/// Layer sizes of the fully-connected rectifier encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub projection_dim: usize,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.feature_dim, self.projection_dim];
        if dims.iter().chain(&self.hidden_dims).any(|&d| d == 0) {
            return Err(Error::invalid(format!("encoder dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(in, out)` of every extractor layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden_dims);
        sizes.push(self.feature_dim);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Affine layer with weight stored `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Extractor layers plus the projection head. The online and momentum
/// copies share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub layers: Vec<Linear>,
    /// `[projection_dim × feature_dim]`, no bias.
    pub projection: Tensor,
}

impl Branch {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .chain(std::iter::once(&self.projection))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .chain(std::iter::once(&mut self.projection))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: EncoderSpec,
    pub online: Branch,
    /// `[P·registered × feature_dim]`; rows `P·y + p` belong to real class `y`.
    pub classifier: Tensor,
    pub momentum: Branch,
    pub ema: f64,
    /// Classifier rows per real class (2 with proxy classes, 1 without).
    pub proxy_factor: usize,
}

/// Tape handles for the trainable (online) parameters.
#[derive(Debug, Clone)]
pub struct OnlineVars {
    pub layers: Vec<(Var, Var)>,
    pub projection: Var,
    pub classifier: Var,
}

impl OnlineVars {
    /// Handles in the same order as [`ModelParams::trainable_mut`].
    pub fn ordered(&self) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .chain([self.projection, self.classifier])
            .collect()
    }
}

/// Deterministic initialisation; the momentum copy starts equal to the online copy.
pub fn init_params(spec: &EncoderSpec, seed: u64) -> Result<ModelParams> {
    init_params_with(spec, seed, DEFAULT_EMA, 2)
}

pub fn init_params_with(spec: &EncoderSpec, seed: u64, ema: f64, proxy_factor: usize) -> Result<ModelParams> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&ema) {
        return Err(Error::invalid(format!("ema coefficient must lie in [0,1], got {ema}")));
    }
    if proxy_factor == 0 {
        return Err(Error::invalid("proxy factor must be positive"));
    }
    let mut r = rng::stream(seed, &[rng::tag::INIT]);
    let mut gaussian = |rows: usize, cols: usize, sd: f64| {
        let data = (0..rows * cols)
            .map(|_| sd * r.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::from_parts_unchecked(vec![rows, cols], data)
    };
    let layers: Vec<Linear> = spec
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| Linear {
            weight: gaussian(fan_out, fan_in, (2.0 / fan_in as f64).sqrt()),
            bias: Tensor::zeros(&[fan_out]),
        })
        .collect();
    let projection = gaussian(spec.projection_dim, spec.feature_dim, (1.0 / spec.feature_dim as f64).sqrt());
    let online = Branch { layers, projection };
    Ok(ModelParams {
        spec: spec.clone(),
        momentum: online.clone(),
        online,
        classifier: Tensor::empty_rows(spec.feature_dim),
        ema,
        proxy_factor,
    })
}

impl ModelParams {
    /// Number of real classes owning classifier rows.
    pub fn registered_classes(&self) -> usize {
        self.classifier.rows() / self.proxy_factor
    }

    pub fn classifier_width(&self) -> usize {
        self.classifier.rows()
    }

    /// Appends `proxy_factor` rows for each new class. `rows` must hold
    /// exactly `proxy_factor · new_classes` rows of width `feature_dim`.
    pub fn extend_classifier(&mut self, rows: &Tensor) -> Result<()> {
        let (r, c) = rows.dims2("extend_classifier")?;
        if c != self.spec.feature_dim || r % self.proxy_factor != 0 {
            return Err(Error::ShapeMismatch {
                op: "extend_classifier",
                left: self.classifier.shape().to_vec(),
                right: rows.shape().to_vec(),
            });
        }
        self.classifier = self.classifier.concat_rows(rows)?;
        Ok(())
    }

    /// Appends small random rows for `classes` new real classes.
    pub fn register_classes_random(&mut self, classes: usize, seed: u64) -> Result<()> {
        let mut r = rng::stream(seed, &[rng::tag::INIT, 0xC1A5]);
        let n = classes * self.proxy_factor * self.spec.feature_dim;
        let data = (0..n).map(|_| 0.01 * r.sample::<f64, _>(StandardNormal)).collect();
        let rows = Tensor::new(vec![classes * self.proxy_factor, self.spec.feature_dim], data)?;
        self.extend_classifier(&rows)
    }

    /// Trainable tensors in declaration order: extractor layers (weight, bias),
    /// projection, classifier.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.online.tensors_mut().collect();
        out.push(&mut self.classifier);
        out
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.online.tensors().collect();
        out.push(&self.classifier);
        out
    }

    /// Every tensor in checkpoint order: online branch, classifier, momentum branch.
    pub fn all_tensors(&self) -> Vec<&Tensor> {
        let mut out = self.trainable();
        out.extend(self.momentum.tensors());
        out
    }

    pub(crate) fn all_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.online.tensors_mut().collect();
        out.push(&mut self.classifier);
        out.extend(self.momentum.tensors_mut());
        out
    }

    /// Registers the online parameters as differentiable leaves.
    pub fn register(&self, tape: &mut Tape) -> OnlineVars {
        let layers = self
            .online
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        let projection = tape.leaf(self.online.projection.clone());
        let classifier = tape.leaf(self.classifier.clone());
        OnlineVars {
            layers,
            projection,
            classifier,
        }
    }

    /// Pulls the momentum copy toward the online copy. The classifier has no
    /// momentum copy.
    pub fn momentum_sync(&mut self) -> Result<()> {
        let m = self.ema;
        for (t, s) in self.momentum.tensors_mut().zip(self.online.tensors()) {
            ema_update(t, s, m)?;
        }
        Ok(())
    }

    /// SHA-256 over the extractor and projection weights of the online copy.
    pub fn backbone_checksum(&self) -> [u8; 32] {
        digest(self.online.tensors())
    }

    /// SHA-256 over the first `rows` classifier rows.
    pub fn classifier_prefix_checksum(&self, rows: usize) -> [u8; 32] {
        let d = self.spec.feature_dim;
        let mut h = Sha256::new();
        for v in &self.classifier.data()[..rows * d] {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

fn digest<'a>(tensors: impl Iterator<Item = &'a Tensor>) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in tensors {
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Extractor forward on a tape: rectifier after every hidden layer, linear output.
pub fn features_on_tape(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let lin = tape.matmul_t(h, w)?;
        h = tape.add_row_bias(lin, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Linear projection followed by row normalisation.
pub fn project_on_tape(tape: &mut Tape, projection: Var, embeddings: Var) -> Result<Var> {
    let z = tape.matmul_t(embeddings, projection)?;
    tape.normalize_rows(z)
}

pub fn classify_on_tape(tape: &mut Tape, classifier: Var, features: Var) -> Result<Var> {
    tape.matmul_t(features, classifier)
}

impl ModelParams {
    /// Records the momentum copy as constants (no gradient ever reaches it).
    pub fn momentum_constants(&self, tape: &mut Tape) -> (Vec<(Var, Var)>, Var) {
        branch_constants(tape, &self.momentum)
    }
}

fn branch_constants(tape: &mut Tape, branch: &Branch) -> (Vec<(Var, Var)>, Var) {
    let layers = branch
        .layers
        .iter()
        .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
        .collect();
    let projection = tape.constant(branch.projection.clone());
    (layers, projection)
}

fn check_width(x: &Tensor, width: usize, op: &'static str) -> Result<()> {
    let (_, c) = x.dims2(op)?;
    if c != width {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![width],
            right: x.shape().to_vec(),
        });
    }
    Ok(())
}

fn branch_features(branch: &Branch, input_dim: usize, batch: &Tensor) -> Result<Tensor> {
    check_width(batch, input_dim, "forward_features")?;
    let mut tape = Tape::new();
    let (layers, _) = branch_constants(&mut tape, branch);
    let x = tape.constant(batch.clone());
    let out = features_on_tape(&mut tape, &layers, x)?;
    Ok(tape.value(out).clone())
}

/// `[B × input_dim] → [B × feature_dim]` through the online extractor.
pub fn forward_features(params: &ModelParams, batch: &Tensor) -> Result<Tensor> {
    branch_features(&params.online, params.spec.input_dim, batch)
}

/// Same as [`forward_features`] through the momentum copy.
pub fn forward_features_momentum(params: &ModelParams, batch: &Tensor) -> Result<Tensor> {
    branch_features(&params.momentum, params.spec.input_dim, batch)
}

/// Unit-norm projections of `[B × feature_dim]` embeddings.
pub fn forward_projection(params: &ModelParams, embeddings: &Tensor, use_momentum: bool) -> Result<Tensor> {
    check_width(embeddings, params.spec.feature_dim, "forward_projection")?;
    let branch = if use_momentum { &params.momentum } else { &params.online };
    let mut tape = Tape::new();
    let p = tape.constant(branch.projection.clone());
    let e = tape.constant(embeddings.clone());
    let z = project_on_tape(&mut tape, p, e)?;
    Ok(tape.value(z).clone())
}

/// Logits over the expanded label space.
pub fn forward_classifier(params: &ModelParams, features: &Tensor) -> Result<Tensor> {
    check_width(features, params.spec.feature_dim, "forward_classifier")?;
    features.matmul_t(&params.classifier)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EncoderSpec {
        EncoderSpec {
            input_dim: 6,
            hidden_dims: vec![10],
            feature_dim: 16,
            projection_dim: 8,
        }
    }

    fn batch(rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_momentum_matches() {
        let a = init_params(&spec(), 42).unwrap();
        let b = init_params(&spec(), 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.online, a.momentum);
        assert_ne!(a, init_params(&spec(), 43).unwrap());
    }

    #[test]
    fn degenerate_depth_is_single_linear_map() {
        let s = EncoderSpec {
            hidden_dims: vec![],
            ..spec()
        };
        let p = init_params(&s, 1).unwrap();
        assert_eq!(p.online.layers.len(), 1);
        assert_eq!(p.online.layers[0].weight.shape(), &[16, 6]);
        let x = batch(3, 6);
        let expected = x.matmul_t(&p.online.layers[0].weight).unwrap();
        assert_eq!(forward_features(&p, &x).unwrap(), expected);
    }

    #[test]
    fn feature_shape_and_zero_weights() {
        let mut p = init_params(&spec(), 3).unwrap();
        let x = batch(4, 6);
        assert_eq!(forward_features(&p, &x).unwrap().shape(), &[4, 16]);
        for t in p.trainable_mut() {
            t.data_mut().fill(0.0);
        }
        assert!(forward_features(&p, &x).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(forward_features(&p, &Tensor::zeros(&[4, 5])).is_err());
    }

    #[test]
    fn identical_rows_map_identically() {
        let p = init_params(&spec(), 3).unwrap();
        let row = batch(1, 6);
        let x = row.concat_rows(&row).unwrap();
        let f = forward_features(&p, &x).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn projections_are_unit_norm() {
        let p = init_params(&spec(), 5).unwrap();
        let e = forward_features(&p, &batch(5, 6)).unwrap();
        for n in forward_projection(&p, &e, false).unwrap().row_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_eq!(
            forward_projection(&p, &e, false).unwrap(),
            forward_projection(&p, &e, true).unwrap()
        );
    }

    #[test]
    fn identity_projection_normalizes_embedding() {
        let s = EncoderSpec {
            projection_dim: 16,
            ..spec()
        };
        let mut p = init_params(&s, 5).unwrap();
        p.online.projection = Tensor::identity(16);
        let e = forward_features(&p, &batch(3, 6)).unwrap();
        let z = forward_projection(&p, &e, false).unwrap();
        for i in 0..3 {
            let n = crate::numcore::l2_norm(e.row(i));
            for (a, b) in z.row(i).iter().zip(e.row(i)) {
                assert!((a - b / n).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_embedding_projection_fails() {
        let p = init_params(&spec(), 5).unwrap();
        assert!(matches!(
            forward_projection(&p, &Tensor::zeros(&[2, 16]), false),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn classifier_width_tracks_registration() {
        let mut p = init_params(&spec(), 5).unwrap();
        p.register_classes_random(10, 5).unwrap();
        assert_eq!(p.classifier_width(), 20);
        assert_eq!(p.registered_classes(), 10);
        let logits = forward_classifier(&p, &Tensor::zeros(&[3, 16])).unwrap();
        assert_eq!(logits.shape(), &[3, 20]);
        p.classifier.data_mut().fill(0.0);
        let logits = forward_classifier(&p, &batch(2, 16)).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cifar_base_width() {
        let mut p = init_params(&spec(), 5).unwrap();
        p.register_classes_random(60, 1).unwrap();
        assert_eq!(p.classifier_width(), 120);
    }

    #[test]
    fn momentum_sync_endpoints_and_step() {
        let mut p = init_params(&spec(), 9).unwrap();
        for t in p.online.tensors_mut() {
            for v in t.data_mut() {
                *v += 1.0;
            }
        }
        let before = p.momentum.clone();
        p.ema = 1.0;
        p.momentum_sync().unwrap();
        assert_eq!(p.momentum, before);

        p.ema = 0.999;
        p.momentum_sync().unwrap();
        for (m, (b, o)) in p
            .momentum
            .tensors()
            .zip(before.tensors().zip(p.online.tensors()))
        {
            for ((&mv, &bv), &ov) in m.data().iter().zip(b.data()).zip(o.data()) {
                assert!((mv - (0.999 * bv + 0.001 * ov)).abs() < 1e-15);
            }
        }

        p.ema = 0.0;
        p.momentum_sync().unwrap();
        assert_eq!(p.momentum, p.online);
    }
}
