use rand::seq::SliceRandom;

use super::{DatasetSpec, SampleStore};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// One session of a split. `test` accumulates the test samples of every class
/// seen so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub index: usize,
    pub classes: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Session 0 holds all training data of the first `base_classes` ids; later
/// classes are dealt out `ways` at a time in id order, each contributing the
/// first `shots` samples of a seeded per-class shuffle.
pub fn split_sessions(store: &SampleStore, spec: &DatasetSpec, seed: u64) -> Result<Vec<Session>> {
    spec.validate()?;
    if store.num_classes != spec.total_classes() {
        return Err(Error::Dataset(format!(
            "store has {} classes, split expects {}",
            store.num_classes,
            spec.total_classes()
        )));
    }
    if store.input_dim() != spec.input_dim {
        return Err(Error::Dataset(format!(
            "store input width {} differs from spec width {}",
            store.input_dim(),
            spec.input_dim
        )));
    }
    store.check_test_coverage()?;

    let mut train_by_class = vec![Vec::new(); store.num_classes];
    let mut test_by_class = vec![Vec::new(); store.num_classes];
    for i in 0..store.len() {
        let bucket = if store.is_test[i] { &mut test_by_class } else { &mut train_by_class };
        bucket[store.labels[i]].push(i);
    }

    let mut sessions = Vec::with_capacity(spec.sessions + 1);
    let base: Vec<usize> = (0..spec.base_classes).collect();
    let base_train: Vec<usize> = base.iter().flat_map(|&y| train_by_class[y].iter().copied()).collect();
    if base.iter().any(|&y| train_by_class[y].is_empty()) {
        return Err(Error::Dataset("a base class has no training samples".into()));
    }
    let mut test: Vec<usize> = base.iter().flat_map(|&y| test_by_class[y].iter().copied()).collect();
    sessions.push(Session {
        index: 0,
        classes: base,
        train: base_train,
        test: test.clone(),
    });

    for s in 1..=spec.sessions {
        let start = spec.base_classes + (s - 1) * spec.ways;
        let classes: Vec<usize> = (start..start + spec.ways).collect();
        let mut train = Vec::with_capacity(spec.ways * spec.shots);
        for &y in &classes {
            let mut pool = train_by_class[y].clone();
            if pool.len() < spec.shots {
                return Err(Error::Dataset(format!(
                    "class {y} has {} training samples, session {s} needs {} shots",
                    pool.len(),
                    spec.shots
                )));
            }
            pool.shuffle(&mut rng::stream(seed, &[tag::SPLIT, y as u64]));
            train.extend_from_slice(&pool[..spec.shots]);
            test.extend_from_slice(&test_by_class[y]);
        }
        sessions.push(Session {
            index: s,
            classes,
            train,
            test: test.clone(),
        });
    }
    Ok(sessions)
}

/// Seeded shuffle cut into batches of `batch_size`. A final batch with fewer
/// than two samples is merged into the one before it.
pub fn make_batches(indices: &[usize], batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::invalid(format!("batch size must be ≥ 2, got {batch_size}")));
    }
    if indices.len() < 2 {
        return Err(Error::Dataset(format!("cannot batch {} samples, need at least 2", indices.len())));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut rng::stream(epoch_seed, &[tag::SHUFFLE]));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(tail);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticOptions};

    fn tiny(spec: &DatasetSpec) -> SampleStore {
        gen_synthetic(spec, 2, SyntheticOptions::default()).unwrap()
    }

    #[test]
    fn cifar_schema_split() {
        let spec = DatasetSpec {
            train_per_class: 6,
            test_per_class: 2,
            ..DatasetSpec::cifar100(2)
        };
        let sessions = split_sessions(&tiny(&spec), &spec, 0).unwrap();
        assert_eq!(sessions.len(), 9);
        assert_eq!(sessions[0].train.len(), 60 * 6);
        for s in &sessions[1..] {
            assert_eq!(s.train.len(), 25);
        }
        assert_eq!(sessions[3].test.len(), 75 * 2);
    }

    #[test]
    fn cub_schema_split() {
        let spec = DatasetSpec {
            train_per_class: 5,
            test_per_class: 1,
            ..DatasetSpec::cub200(2)
        };
        let sessions = split_sessions(&tiny(&spec), &spec, 0).unwrap();
        assert_eq!(sessions.len(), 11);
        assert!(sessions[1..].iter().all(|s| s.train.len() == 50));
    }

    #[test]
    fn too_few_shots_is_an_error() {
        let spec = DatasetSpec {
            train_per_class: 3,
            test_per_class: 1,
            ..DatasetSpec::cifar100(2)
        };
        assert!(matches!(split_sessions(&tiny(&spec), &spec, 0), Err(Error::Dataset(_))));
    }

    #[test]
    fn batch_sizes() {
        let idx: Vec<usize> = (0..100).collect();
        let b = make_batches(&idx, 64, 9).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![64, 36]);
        assert_eq!(b, make_batches(&idx, 64, 9).unwrap());
        assert_ne!(b, make_batches(&idx, 64, 10).unwrap());
    }

    #[test]
    fn lone_tail_is_merged() {
        let idx: Vec<usize> = (0..65).collect();
        let b = make_batches(&idx, 64, 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 65);
    }

    #[test]
    fn degenerate_batching_rejected() {
        assert!(make_batches(&[1], 4, 0).is_err());
        assert!(make_batches(&[1, 2, 3], 1, 0).is_err());
    }
}
