//! Multinomial redraws of frequency tables.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::population::{SampleSizeDistribution, SyntheticPopulation};
use super::rng::{substream, TAG_REPLICATE};
use crate::io::FrequencyCountTable;

/// Category counts of a multinomial draw of `size` items, by conditional
/// binomials along the categories.
pub fn multinomial_counts<R: Rng + ?Sized>(pop: &SyntheticPopulation, size: u64, rng: &mut R) -> Vec<u64> {
    let probs = pop.probabilities();
    let tail = pop.tail_mass();
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = size;
    for i in 0..probs.len() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = remaining;
            break;
        }
        let p = (probs[i] / tail[i]).clamp(0.0, 1.0);
        let k = if p >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, p).expect("p in [0, 1]").sample(rng)
        };
        counts[i] = k;
        remaining -= k;
    }
    counts
}

/// Frequency table of one multinomial sample of `size` reads.
pub fn resample_table<R: Rng + ?Sized>(pop: &SyntheticPopulation, size: u64, rng: &mut R) -> FrequencyCountTable {
    FrequencyCountTable::from_taxon_counts(multinomial_counts(pop, size, rng))
        .expect("a sample of positive size has an observed taxon")
}

/// Draw a sample size from `sizes`, then a multinomial table of that size.
pub fn resample_with_sizes<R: Rng + ?Sized>(
    pop: &SyntheticPopulation,
    sizes: &SampleSizeDistribution,
    rng: &mut R,
) -> FrequencyCountTable {
    let size = sizes.draw(rng);
    resample_table(pop, size, rng)
}

/// `replicates` independent tables for dataset `dataset_index`; replicate `r`
/// uses the substream `(seed, replicate, dataset_index, r, 0)`.
pub fn resample_dataset(
    pop: &SyntheticPopulation,
    sizes: &SampleSizeDistribution,
    replicates: usize,
    seed: u64,
    dataset_index: u64,
) -> Vec<FrequencyCountTable> {
    (0..replicates as u64)
        .map(|r| {
            let mut rng = substream(seed, &[TAG_REPLICATE, dataset_index, r, 0]);
            resample_with_sizes(pop, sizes, &mut rng)
        })
        .collect()
}
