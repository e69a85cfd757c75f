use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{DatasetSpec, SampleStore};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOptions {
    /// Distance of every class mean from the origin.
    pub separation: f64,
    pub noise_sd: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            separation: 3.0,
            noise_sd: 1.0,
        }
    }
}

fn unit_direction(rng: &mut rng::Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Isotropic Gaussian clouds, one per class, around seeded random directions
/// scaled by `separation`. Rows are laid out class by class, train rows first.
pub fn gen_synthetic(spec: &DatasetSpec, seed: u64, opts: SyntheticOptions) -> Result<SampleStore> {
    spec.validate()?;
    if !(opts.separation.is_finite() && opts.separation >= 0.0) {
        return Err(Error::invalid(format!("separation must be finite and ≥ 0, got {}", opts.separation)));
    }
    if !(opts.noise_sd.is_finite() && opts.noise_sd >= 0.0) {
        return Err(Error::invalid(format!("noise sd must be finite and ≥ 0, got {}", opts.noise_sd)));
    }
    let classes = spec.total_classes();
    let dim = spec.input_dim;
    let per_class = spec.train_per_class + spec.test_per_class;
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut is_test = Vec::with_capacity(n);

    let mut mean_rng = rng::stream(seed, &[tag::DATA, 0]);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            unit_direction(&mut mean_rng, dim)
                .into_iter()
                .map(|x| x * opts.separation)
                .collect()
        })
        .collect();
    for (y, mean) in means.iter().enumerate() {
        let mut r = rng::stream(seed, &[tag::DATA, 1, y as u64]);
        for k in 0..per_class {
            for &m in mean {
                let z: f64 = r.sample(StandardNormal);
                data.push(m + opts.noise_sd * z);
            }
            labels.push(y);
            is_test.push(k >= spec.train_per_class);
        }
    }
    SampleStore::new(classes, Tensor::new(vec![n, dim], data)?, labels, is_test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(classes: usize) -> DatasetSpec {
        DatasetSpec {
            base_classes: classes - 2,
            inc_classes: 2,
            sessions: 1,
            ways: 2,
            shots: 5,
            input_dim: 16,
            train_per_class: 40,
            test_per_class: 20,
        }
    }

    fn ncm_test_accuracy(store: &SampleStore) -> f64 {
        let d = store.input_dim();
        let mut means = vec![vec![0.0; d]; store.num_classes];
        let mut counts = vec![0usize; store.num_classes];
        for i in 0..store.len() {
            if !store.is_test[i] {
                let y = store.labels[i];
                counts[y] += 1;
                for (m, x) in means[y].iter_mut().zip(store.inputs.row(i)) {
                    *m += x;
                }
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        let (mut correct, mut total) = (0, 0);
        for i in 0..store.len() {
            if store.is_test[i] {
                let x = store.inputs.row(i);
                let best = (0..store.num_classes)
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&means[a]).map(|(p, q)| (p - q) * (p - q)).sum();
                        let db: f64 = x.iter().zip(&means[b]).map(|(p, q)| (p - q) * (p - q)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                correct += usize::from(best == store.labels[i]);
                total += 1;
            }
        }
        correct as f64 / total as f64
    }

    #[test]
    fn same_seed_same_store() {
        let opts = SyntheticOptions::default();
        let a = gen_synthetic(&small(6), 5, opts).unwrap();
        let b = gen_synthetic(&small(6), 5, opts).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&small(6), 6, opts).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn well_separated_classes_are_nearly_perfectly_separable() {
        let store = gen_synthetic(
            &small(10),
            1,
            SyntheticOptions {
                separation: 10.0,
                noise_sd: 1.0,
            },
        )
        .unwrap();
        assert!(ncm_test_accuracy(&store) > 0.99);
    }

    #[test]
    fn zero_separation_is_near_chance() {
        let store = gen_synthetic(
            &small(10),
            1,
            SyntheticOptions {
                separation: 0.0,
                noise_sd: 1.0,
            },
        )
        .unwrap();
        let acc = ncm_test_accuracy(&store);
        assert!(acc < 0.25, "accuracy {acc}");
    }

    #[test]
    fn every_class_has_test_samples() {
        let store = gen_synthetic(&small(6), 0, SyntheticOptions::default()).unwrap();
        store.check_test_coverage().unwrap();
        assert_eq!(store.len(), 6 * 60);
    }
}
