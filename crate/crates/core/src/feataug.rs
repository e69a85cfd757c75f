//! Input transforms, δ-mix feature augmentation, interleaved combination of
//! original and mixed features, and the proxy-label codec.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::encoder::{features_on_tape, ModelParams, OnlineVars};
use crate::error::{Error, Result};
use crate::numcore::{interleave, Tape, Tensor, Var};
use crate::rng::{self, Rng};

/// Proxy slots per real class.
pub const PROXY_FACTOR: usize = 2;

/// `y_p = y·P + p`.
pub fn proxy_encode(y: usize, p: usize, factor: usize) -> Result<usize> {
    if p >= factor {
        return Err(Error::invalid(format!("proxy slot {p} out of range for factor {factor}")));
    }
    Ok(y * factor + p)
}

/// Inverse of [`proxy_encode`]: `(y_p div P, y_p mod P)`.
pub fn proxy_decode(y_p: usize, factor: usize) -> (usize, usize) {
    (y_p / factor, y_p % factor)
}

/// Bijection between `(real class, slot)` pairs and the expanded label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxyLabelMap {
    pub factor: usize,
    pub classes: usize,
}

impl ProxyLabelMap {
    pub fn new(classes: usize) -> Self {
        Self {
            factor: PROXY_FACTOR,
            classes,
        }
    }

    pub fn expanded(&self) -> usize {
        self.factor * self.classes
    }

    pub fn encode(&self, y: usize, p: usize) -> Result<usize> {
        if y >= self.classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: self.classes,
            });
        }
        proxy_encode(y, p, self.factor)
    }

    pub fn decode(&self, y_p: usize) -> (usize, usize) {
        proxy_decode(y_p, self.factor)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Transform {
    Identity,
    /// `out[i] = sign[i] · in[perm[i]]`.
    SignedPermutation { perm: Vec<usize>, sign: Vec<f64> },
    /// 180° spatial rotation of a `[channels × height × width]` image followed
    /// by the channel order `channel_order`.
    RotateAndPermute {
        channels: usize,
        height: usize,
        width: usize,
        channel_order: Vec<usize>,
    },
}

impl Transform {
    fn apply(&self, row: &[f64]) -> Vec<f64> {
        match self {
            Transform::Identity => row.to_vec(),
            Transform::SignedPermutation { perm, sign } => perm.iter().zip(sign).map(|(&j, &s)| s * row[j]).collect(),
            Transform::RotateAndPermute {
                channels,
                height,
                width,
                channel_order,
            } => {
                let plane = height * width;
                let mut out = vec![0.0; channels * plane];
                for (c_out, &c_in) in channel_order.iter().enumerate() {
                    let src = &row[c_in * plane..(c_in + 1) * plane];
                    let dst = &mut out[c_out * plane..(c_out + 1) * plane];
                    // 180° rotation reverses the flattened plane
                    for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                        *d = *s;
                    }
                }
                out
            }
        }
    }
}

/// Transform 0 is the identity; transforms `1..=M` are the augmentation set.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSet {
    input_dim: usize,
    transforms: Vec<Transform>,
}

impl TransformSet {
    /// `m` fixed signed coordinate permutations drawn from `seed`.
    pub fn vector(input_dim: usize, m: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::tag::TRANSFORM]);
        let mut transforms = vec![Transform::Identity];
        for _ in 0..m {
            let mut perm: Vec<usize> = (0..input_dim).collect();
            perm.shuffle(&mut r);
            let sign = (0..input_dim)
                .map(|_| if r.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            transforms.push(Transform::SignedPermutation { perm, sign });
        }
        Self { input_dim, transforms }
    }

    /// Image transforms: each is a 180° rotation combined with a cyclic
    /// channel permutation (shift `k` for transform `k`).
    pub fn image(channels: usize, height: usize, width: usize, m: usize) -> Self {
        let mut transforms = vec![Transform::Identity];
        for k in 1..=m {
            let channel_order = (0..channels).map(|c| (c + k) % channels).collect();
            transforms.push(Transform::RotateAndPermute {
                channels,
                height,
                width,
                channel_order,
            });
        }
        Self {
            input_dim: channels * height * width,
            transforms,
        }
    }

    /// Number of non-identity transforms (`M`).
    pub fn m(&self) -> usize {
        self.transforms.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn apply(&self, index: usize, row: &[f64]) -> Vec<f64> {
        self.transforms[index].apply(row)
    }

    fn check_width(&self, x: &Tensor) -> Result<()> {
        let (_, c) = x.dims2("transform")?;
        if c != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "transform",
                left: vec![self.input_dim],
                right: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// `B → B' = B·(M+1)`: the original block followed by one block per transform.
pub fn expand_batch(inputs: &Tensor, labels: &[usize], transforms: &TransformSet) -> Result<(Tensor, Vec<usize>)> {
    transforms.check_width(inputs)?;
    let b = inputs.rows();
    if b == 0 || labels.len() != b {
        return Err(Error::invalid(format!("expand_batch needs a nonempty batch with one label per row ({b} rows, {} labels)", labels.len())));
    }
    let blocks = transforms.m() + 1;
    let mut data = Vec::with_capacity(blocks * inputs.len());
    let mut out_labels = Vec::with_capacity(blocks * b);
    for t in 0..blocks {
        for i in 0..b {
            data.extend(transforms.apply(t, inputs.row(i)));
        }
        out_labels.extend_from_slice(labels);
    }
    Ok((Tensor::new(vec![blocks * b, transforms.input_dim], data)?, out_labels))
}

/// For each `i`, a partner `j ≠ i` drawn uniformly from the other `n − 1` rows.
pub fn sample_pairing(n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid(format!("pairing needs at least 2 rows, got {n}")));
    }
    Ok((0..n)
        .map(|i| {
            let j = rng.random_range(0..n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect())
}

/// `F[i] = δ·anchor[i] + (1−δ)·partner[pairing[i]]`.
pub fn mix_rows(anchor: &Tensor, partner: &Tensor, delta: f64, pairing: &[usize]) -> Result<Tensor> {
    anchor.same_shape(partner, "mix_rows")?;
    check_delta(delta)?;
    if pairing.len() != anchor.rows() {
        return Err(Error::invalid("pairing length must equal the row count"));
    }
    let gathered = partner.gather_rows(pairing)?;
    anchor.scale(delta).add(&gathered.scale(1.0 - delta))
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta must lie in [0,1], got {delta}")));
    }
    Ok(())
}

/// δ-mix of augmented features with a freshly drawn pairing.
pub fn mix_features(augmented: &Tensor, delta: f64, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    check_delta(delta)?;
    let mut r = rng::stream(seed, &[rng::tag::PAIRING]);
    let pairing = sample_pairing(augmented.rows(), &mut r)?;
    let mixed = mix_rows(augmented, augmented, delta, &pairing)?;
    Ok((mixed, pairing))
}

/// Row `2q` is `original[q]`, row `2q+1` is `mixed[q]`.
pub fn combine_interleave(original: &Tensor, mixed: &Tensor) -> Result<Tensor> {
    interleave(original, mixed)
}

/// Proxy labels of an interleaved batch: `2y` for original rows, `2y+1` for mixed rows.
pub fn interleaved_proxy_labels(labels: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .flat_map(|&y| [y * PROXY_FACTOR, y * PROXY_FACTOR + 1])
        .collect()
}

/// Which feature stream feeds one side of the mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixSource {
    /// Feature of the untransformed copy of the same sample.
    Ori,
    /// Feature of the row in the expanded (augmented) batch.
    Aug,
    /// Standard-normal draw in place of a feature.
    Noise,
}

/// Anchor and partner streams of the δ-mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixtureMode {
    pub anchor: MixSource,
    pub partner: MixSource,
}

impl MixtureMode {
    pub const AUG_AUG: Self = Self {
        anchor: MixSource::Aug,
        partner: MixSource::Aug,
    };
    pub const ORI_ORI: Self = Self {
        anchor: MixSource::Ori,
        partner: MixSource::Ori,
    };
    pub const ORI_AUG: Self = Self {
        anchor: MixSource::Ori,
        partner: MixSource::Aug,
    };
    pub const ORI_NOISE: Self = Self {
        anchor: MixSource::Ori,
        partner: MixSource::Noise,
    };
    pub const AUG_NOISE: Self = Self {
        anchor: MixSource::Aug,
        partner: MixSource::Noise,
    };

    pub const ALL: [Self; 5] = [Self::AUG_AUG, Self::ORI_ORI, Self::ORI_AUG, Self::ORI_NOISE, Self::AUG_NOISE];

    pub fn uses_noise(&self) -> bool {
        self.partner == MixSource::Noise
    }
}

impl Default for MixtureMode {
    fn default() -> Self {
        Self::AUG_AUG
    }
}

impl fmt::Display for MixtureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |s: MixSource| match s {
            MixSource::Ori => "ori",
            MixSource::Aug => "aug",
            MixSource::Noise => "noise",
        };
        write!(f, "{}+{}", name(self.anchor), name(self.partner))
    }
}

impl FromStr for MixtureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown mixture mode '{s}' (expected one of aug+aug, ori+ori, ori+aug, ori+noise, aug+noise)")))
    }
}

/// How the two contrastive views are built from a batch.
#[derive(Debug, Clone)]
pub struct ViewConfig {
    pub delta: f64,
    pub mixture: MixtureMode,
    /// δ-mix on; when off the slot-1 rows carry the unmixed anchor stream.
    pub mix: bool,
    /// Expanded proxy label space on; when off the views carry real labels
    /// and no slot-1 rows.
    pub proxy: bool,
    pub noise_scale: f64,
    /// Standard deviation of the Gaussian jitter added to each view.
    pub jitter: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            mixture: MixtureMode::AUG_AUG,
            mix: true,
            proxy: true,
            noise_scale: 1.0,
            jitter: 0.05,
        }
    }
}

/// Seeds of the independent random draws behind a view pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewSeeds {
    pub pairing: u64,
    pub noise: u64,
    pub view_a: u64,
    pub view_b: u64,
}

impl ViewSeeds {
    pub fn derive(base: u64) -> Self {
        Self {
            pairing: rng::derive_seed(base, &[rng::tag::PAIRING]),
            noise: rng::derive_seed(base, &[rng::tag::NOISE]),
            view_a: rng::derive_seed(base, &[rng::tag::VIEW_A]),
            view_b: rng::derive_seed(base, &[rng::tag::VIEW_B]),
        }
    }
}

/// Label-preserving view augmentation: Gaussian jitter on every input value.
/// Rows keep the transform they were expanded with, so a view never moves a
/// sample into another proxy slot.
pub fn perturb(inputs: &Tensor, jitter: f64, seed: u64) -> Result<Tensor> {
    if jitter == 0.0 {
        return Ok(inputs.clone());
    }
    let mut r = rng::stream(seed, &[]);
    let data = inputs
        .data()
        .iter()
        .map(|&v| {
            let noise: f64 = r.sample(StandardNormal);
            v + jitter * noise
        })
        .collect();
    Tensor::new(inputs.shape().to_vec(), data)
}

/// Combined batch of one view with its labels and pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedFeatureBatch {
    pub original: Tensor,
    pub mixed: Tensor,
    pub combined: Tensor,
    pub proxy_labels: Vec<usize>,
    pub pairing: Vec<usize>,
    pub delta: f64,
}

/// Tape handles of one view.
#[derive(Debug, Clone)]
pub struct ViewVars {
    /// Unmixed features of the expanded batch.
    pub z: Var,
    /// Features of each row's untransformed sample (row `i mod B` of `z`).
    pub original: Var,
    /// Slot-1 rows (mixed or unmixed), absent without proxy classes.
    pub mixed: Option<Var>,
    /// Rows fed to the classifier and the projection head.
    pub combined: Var,
}

/// Shared randomness and labels of a view pair.
#[derive(Debug, Clone)]
pub struct PairPlan {
    /// Rows of the unexpanded batch (`B`).
    pub originals: usize,
    pub pairing: Vec<usize>,
    pub noise: Option<Tensor>,
    /// Labels of the `combined` rows.
    pub labels: Vec<usize>,
}

impl PairPlan {
    pub fn new(expanded_labels: &[usize], originals: usize, feature_dim: usize, cfg: &ViewConfig, seeds: &ViewSeeds) -> Result<Self> {
        let n = expanded_labels.len();
        let mixing = cfg.proxy && cfg.mix;
        let pairing = if mixing && !cfg.mixture.uses_noise() {
            sample_pairing(n, &mut rng::stream(seeds.pairing, &[]))?
        } else {
            (0..n).collect()
        };
        let noise = if mixing && cfg.mixture.uses_noise() {
            let mut r = rng::stream(seeds.noise, &[]);
            let data = (0..n * feature_dim)
                .map(|_| cfg.noise_scale * r.sample::<f64, _>(StandardNormal))
                .collect();
            Some(Tensor::new(vec![n, feature_dim], data)?)
        } else {
            None
        };
        let labels = if cfg.proxy {
            interleaved_proxy_labels(expanded_labels)
        } else {
            expanded_labels.to_vec()
        };
        Ok(Self {
            originals,
            pairing,
            noise,
            labels,
        })
    }
}

/// Builds one view's combined features on the tape from its features `z`
/// of the expanded batch.
pub fn combine_on_tape(tape: &mut Tape, z: Var, plan: &PairPlan, cfg: &ViewConfig) -> Result<ViewVars> {
    if !cfg.proxy {
        return Ok(ViewVars {
            z,
            original: z,
            mixed: None,
            combined: z,
        });
    }
    let n = tape.value(z).rows();
    let ori_index: Vec<usize> = (0..n).map(|i| i % plan.originals).collect();
    let source = |tape: &mut Tape, s: MixSource| -> Result<Var> {
        match s {
            MixSource::Aug => Ok(z),
            MixSource::Ori => tape.gather_rows(z, &ori_index),
            MixSource::Noise => Err(Error::invalid("noise cannot be the anchor stream")),
        }
    };
    let mixed = if cfg.mix {
        check_delta(cfg.delta)?;
        let anchor = source(tape, cfg.mixture.anchor)?;
        let partner = match cfg.mixture.partner {
            MixSource::Noise => {
                let noise = plan.noise.clone().ok_or_else(|| Error::invalid("noise mixture without noise draw"))?;
                tape.constant(noise)
            }
            MixSource::Aug => tape.gather_rows(z, &plan.pairing)?,
            MixSource::Ori => {
                let idx: Vec<usize> = plan.pairing.iter().map(|&j| j % plan.originals).collect();
                tape.gather_rows(z, &idx)?
            }
        };
        let a = tape.scale(anchor, cfg.delta)?;
        let p = tape.scale(partner, 1.0 - cfg.delta)?;
        tape.add(a, p)?
    } else {
        source(tape, cfg.mixture.anchor)?
    };
    let original = tape.gather_rows(z, &ori_index)?;
    let combined = tape.interleave_rows(original, mixed)?;
    Ok(ViewVars {
        z,
        original,
        mixed: Some(mixed),
        combined,
    })
}

/// Both views on one tape: view a through the online extractor (differentiable),
/// view b through the momentum copy (constants).
#[allow(clippy::too_many_arguments)]
pub fn views_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &OnlineVars,
    expanded: &Tensor,
    plan: &PairPlan,
    cfg: &ViewConfig,
    seeds: &ViewSeeds,
) -> Result<(ViewVars, ViewVars)> {
    let xa = perturb(expanded, cfg.jitter, seeds.view_a)?;
    let xb = perturb(expanded, cfg.jitter, seeds.view_b)?;
    let xa = tape.constant(xa);
    let za = features_on_tape(tape, &vars.layers, xa)?;
    let view_a = combine_on_tape(tape, za, plan, cfg)?;

    let (m_layers, _) = params.momentum_constants(tape);
    let xb = tape.constant(xb);
    let zb = features_on_tape(tape, &m_layers, xb)?;
    let view_b = combine_on_tape(tape, zb, plan, cfg)?;
    Ok((view_a, view_b))
}

/// The two stochastic views of a batch, sharing pairing and labels.
pub fn make_views(
    inputs: &Tensor,
    labels: &[usize],
    params: &ModelParams,
    transforms: &TransformSet,
    cfg: &ViewConfig,
    seeds: &ViewSeeds,
) -> Result<(CombinedFeatureBatch, CombinedFeatureBatch)> {
    let (expanded, expanded_labels) = expand_batch(inputs, labels, transforms)?;
    let plan = PairPlan::new(&expanded_labels, inputs.rows(), params.spec.feature_dim, cfg, seeds)?;
    let proxy_cfg = ViewConfig { proxy: true, ..cfg.clone() };
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let (a, b) = views_on_tape(&mut tape, params, &vars, &expanded, &plan, &proxy_cfg, seeds)?;
    let pack = |v: &ViewVars| CombinedFeatureBatch {
        original: tape.value(v.original).clone(),
        mixed: tape.value(v.mixed.expect("proxy view")).clone(),
        combined: tape.value(v.combined).clone(),
        proxy_labels: plan.labels.clone(),
        pairing: plan.pairing.clone(),
        delta: cfg.delta,
    };
    Ok((pack(&a), pack(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderSpec};

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn proxy_codec_examples() {
        assert_eq!(proxy_encode(3, 1, 2).unwrap(), 7);
        assert_eq!(proxy_encode(0, 0, 2).unwrap(), 0);
        assert!(proxy_encode(1, 2, 2).is_err());
        assert_eq!(proxy_decode(7, 2), (3, 1));
        assert_eq!(proxy_decode(0, 2), (0, 0));
    }

    #[test]
    fn sixty_classes_fill_exactly_120_labels() {
        let map = ProxyLabelMap::new(60);
        let mut seen = [false; 120];
        for y in 0..60 {
            for p in 0..2 {
                let e = map.encode(y, p).unwrap();
                assert!(!seen[e]);
                seen[e] = true;
                assert_eq!(map.decode(e), (y, p));
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(map.encode(60, 0).is_err());
    }

    #[test]
    fn decode_encode_round_trip_below_200() {
        for yp in 0..200 {
            let (y, p) = proxy_decode(yp, 2);
            assert_eq!(proxy_encode(y, p, 2).unwrap(), yp);
        }
    }

    #[test]
    fn expansion_sizes_and_blocks() {
        let ts = TransformSet::vector(3, 1, 9);
        let x = rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let (e, l) = expand_batch(&x, &[0, 1], &ts).unwrap();
        assert_eq!(e.shape(), &[4, 3]);
        assert_eq!(l, vec![0, 1, 0, 1]);
        // oracle: apply the stored permutation and signs by hand
        let Transform::SignedPermutation { perm, sign } = &ts.transforms[1] else {
            panic!("vector transform expected")
        };
        for i in 0..2 {
            let expected: Vec<f64> = (0..3).map(|k| sign[k] * x.row(i)[perm[k]]).collect();
            assert_eq!(e.row(2 + i), expected.as_slice());
        }

        let none = TransformSet::vector(3, 0, 9);
        let (e0, l0) = expand_batch(&x, &[0, 1], &none).unwrap();
        assert_eq!(e0, x);
        assert_eq!(l0, vec![0, 1]);
    }

    #[test]
    fn sixty_four_expand_to_one_twenty_eight() {
        let ts = TransformSet::vector(4, 1, 1);
        let x = Tensor::full(&[64, 4], 0.5);
        let (e, l) = expand_batch(&x, &vec![3; 64], &ts).unwrap();
        assert_eq!(e.rows(), 128);
        assert_eq!(l.len(), 128);
    }

    #[test]
    fn transforms_are_bijections() {
        let ts = TransformSet::vector(6, 2, 4);
        let x: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect();
        for t in 0..=2 {
            let mut y: Vec<f64> = ts.apply(t, &x).iter().map(|v| v.abs()).collect();
            y.sort_by(f64::total_cmp);
            assert_eq!(y, x);
        }
        let img = TransformSet::image(3, 2, 2, 1);
        let px: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let out = img.apply(1, &px);
        // channel 0 of the output is channel 1 of the input, rotated
        assert_eq!(&out[0..4], &[7.0, 6.0, 5.0, 4.0]);
        assert_eq!(&out[8..12], &[3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn pairing_never_self() {
        let mut r = rng::stream(5, &[]);
        for n in 2..20 {
            let p = sample_pairing(n, &mut r).unwrap();
            assert!(p.iter().enumerate().all(|(i, &j)| i != j && j < n));
        }
        assert!(sample_pairing(1, &mut r).is_err());
    }

    #[test]
    fn mix_endpoints_and_mean() {
        let z = rows(&[&[2.0, 0.0], &[0.0, 4.0]]);
        let pairing = vec![1, 0];
        assert_eq!(mix_rows(&z, &z, 1.0, &pairing).unwrap(), z);
        assert_eq!(mix_rows(&z, &z, 0.0, &pairing).unwrap(), z.gather_rows(&pairing).unwrap());
        let half = mix_rows(&z, &z, 0.5, &pairing).unwrap();
        assert_eq!(half, rows(&[&[1.0, 2.0], &[1.0, 2.0]]));
        assert!(mix_features(&rows(&[&[1.0]]), 0.5, 0).is_err());
        assert!(mix_features(&z, 1.5, 0).is_err());
    }

    #[test]
    fn interleave_definition() {
        let a = rows(&[&[1.0], &[2.0]]);
        let c = rows(&[&[3.0], &[4.0]]);
        assert_eq!(combine_interleave(&a, &c).unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);
        let e = Tensor::empty_rows(2);
        assert_eq!(combine_interleave(&e, &e).unwrap().rows(), 0);
        assert!(combine_interleave(&a, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn mixture_names_round_trip() {
        for m in MixtureMode::ALL {
            assert_eq!(m.to_string().parse::<MixtureMode>().unwrap(), m);
        }
        assert!("aug+ori".parse::<MixtureMode>().is_err());
    }

    fn small_params() -> ModelParams {
        let spec = EncoderSpec {
            input_dim: 5,
            hidden_dims: vec![7],
            feature_dim: 4,
            projection_dim: 3,
        };
        init_params(&spec, 2).unwrap()
    }

    fn small_batch() -> (Tensor, Vec<usize>) {
        let data = (0..15).map(|i| ((i * 7 % 5) as f64) - 1.7).collect();
        (Tensor::new(vec![3, 5], data).unwrap(), vec![0, 2, 1])
    }

    #[test]
    fn degenerate_views_coincide() {
        let p = small_params();
        let (x, y) = small_batch();
        let ts = TransformSet::vector(5, 1, 3);
        let cfg = ViewConfig {
            jitter: 0.0,
            ..ViewConfig::default()
        };
        let seeds = ViewSeeds {
            view_b: 77,
            view_a: 77,
            ..ViewSeeds::derive(1)
        };
        let (a, b) = make_views(&x, &y, &p, &ts, &cfg, &seeds).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.combined.rows(), 12);
        assert_eq!(a.proxy_labels, vec![0, 1, 4, 5, 2, 3, 0, 1, 4, 5, 2, 3]);
    }

    #[test]
    fn views_share_labels_and_are_reproducible() {
        let p = small_params();
        let (x, y) = small_batch();
        let ts = TransformSet::vector(5, 1, 3);
        let cfg = ViewConfig::default();
        let seeds = ViewSeeds::derive(9);
        let (a, b) = make_views(&x, &y, &p, &ts, &cfg, &seeds).unwrap();
        assert_eq!(a.proxy_labels, b.proxy_labels);
        assert_eq!(a.pairing, b.pairing);
        assert_ne!(a.combined, b.combined);
        let again = make_views(&x, &y, &p, &ts, &cfg, &seeds).unwrap();
        assert_eq!((a, b), again);
    }

    #[test]
    fn noise_scale_zero_leaves_scaled_anchor() {
        let p = small_params();
        let (x, y) = small_batch();
        let ts = TransformSet::vector(5, 1, 3);
        let seeds = ViewSeeds::derive(4);
        let noisy = ViewConfig {
            mixture: MixtureMode::AUG_NOISE,
            noise_scale: 0.0,
            delta: 1.0,
            ..ViewConfig::default()
        };
        let plain = ViewConfig {
            delta: 1.0,
            ..ViewConfig::default()
        };
        let (a, _) = make_views(&x, &y, &p, &ts, &noisy, &seeds).unwrap();
        let (b, _) = make_views(&x, &y, &p, &ts, &plain, &seeds).unwrap();
        assert_eq!(a.combined, b.combined);
    }
    #[test]
    fn slot_zero_carries_the_original_row() {
        let p = small_params();
        let (x, y) = small_batch();
        let ts = TransformSet::vector(5, 1, 3);
        let cfg = ViewConfig {
            jitter: 0.0,
            ..ViewConfig::default()
        };
        let (a, _) = make_views(&x, &y, &p, &ts, &cfg, &ViewSeeds::derive(5)).unwrap();
        let z = crate::encoder::forward_features(&p, &x).unwrap();
        for i in 0..a.original.rows() {
            assert_eq!(a.original.row(i), z.row(i % 3));
            assert_eq!(a.combined.row(2 * i), z.row(i % 3));
        }
    }

    #[test]
    fn perturb_is_jitter_only() {
        let (x, _) = small_batch();
        assert_eq!(perturb(&x, 0.0, 1).unwrap(), x);
        let a = perturb(&x, 0.05, 1).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, perturb(&x, 0.05, 1).unwrap());
        assert!(a.data().iter().zip(x.data()).all(|(u, v)| (u - v).abs() < 0.5));
    }
}
