//! Seeded synthetic collections for tests, demos, and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::rank::{RankedList, RankedListSet};

/// Feature rows with one class label per row.
#[derive(Clone, Debug)]
pub struct LabeledFeatures {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Isotropic Gaussian blobs.
///
/// Class centres are drawn from `N(0, center_spread^2)` per coordinate and
/// points from `N(centre, 1)`. Rows are grouped by class.
pub fn gaussian_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    center_spread: f64,
    seed: u64,
) -> LabeledFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centre = Normal::new(0.0, center_spread).expect("finite spread");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| centre.sample(&mut rng)).collect())
        .collect();
    let mut features = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mu) in centres.iter().enumerate() {
        for _ in 0..per_class {
            features.push(mu.iter().map(|m| m + unit.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    LabeledFeatures { features, labels }
}

/// An independent noisy view of `source`: a random Gaussian projection to
/// `dim` coordinates plus additive noise of standard deviation `noise`.
pub fn noisy_view(source: &[Vec<f64>], dim: usize, noise: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_in = source.first().map_or(0, Vec::len);
    let scale = 1.0 / (d_in.max(1) as f64).sqrt();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let projection: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..d_in).map(|_| gauss.sample(&mut rng) * scale).collect())
        .collect();
    let jitter = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    source
        .iter()
        .map(|x| {
            projection
                .iter()
                .map(|p| p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + jitter.sample(&mut rng))
                .collect()
        })
        .collect()
}

/// Random lists: each owner first, followed by a shuffle of the others,
/// truncated to `depth`. Scores decrease with position.
pub fn random_permutation_lists(n: usize, depth: usize, seed: u64) -> RankedListSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lists = (0..n)
        .map(|q| {
            let mut others: Vec<usize> = (0..n).filter(|&i| i != q).collect();
            others.shuffle(&mut rng);
            let ids = std::iter::once(q).chain(others).take(depth);
            RankedList::from_parts(
                q,
                ids.enumerate().map(|(p, id)| (id, 1.0 / (p + 1) as f64)).collect(),
            )
        })
        .collect();
    RankedListSet::from_parts(n, depth.min(n).max(1), lists)
}

/// Random class labels in `0..classes`.
pub fn random_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0..classes)).collect()
}
