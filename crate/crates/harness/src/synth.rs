//! Deterministic synthetic point sets.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use raynn_core::geom::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    /// Uniform in the unit cube.
    Uniform,
    /// Gaussian blobs with power-law sizes over a thin uniform background.
    Clustered,
}

const BLOBS: usize = 24;
/// Blob `i` receives weight `(i + 1)^-BLOB_EXPONENT`.
const BLOB_EXPONENT: f64 = 1.5;
const BACKGROUND_FRACTION: f64 = 0.05;

#[derive(Debug, Clone)]
struct Blob {
    center: Point3,
    spread: Normal<f64>,
}

/// A seeded generator. Points and queries come from independent streams of
/// the same layout, so queries follow the point distribution.
#[derive(Debug, Clone)]
pub struct Synth {
    dist: Distribution,
    seed: u64,
    blobs: Vec<Blob>,
    weights: Option<WeightedIndex<f64>>,
}

const POINT_STREAM: u64 = 1;
const QUERY_STREAM: u64 = 2;

impl Synth {
    pub fn new(dist: Distribution, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (blobs, weights) = match dist {
            Distribution::Uniform => (Vec::new(), None),
            Distribution::Clustered => {
                let blobs: Vec<Blob> = (0..BLOBS)
                    .map(|_| {
                        let center = Point3::new(
                            rng.random_range(0.15..0.85),
                            rng.random_range(0.15..0.85),
                            rng.random_range(0.15..0.85),
                        );
                        let sigma = 10f64.powf(rng.random_range(-2.0..-1.2));
                        Blob { center, spread: Normal::new(0.0, sigma).expect("positive sigma") }
                    })
                    .collect();
                let weights = (0..BLOBS).map(|i| ((i + 1) as f64).powf(-BLOB_EXPONENT));
                (blobs, Some(WeightedIndex::new(weights).expect("positive weights")))
            }
        };
        Self { dist, seed, blobs, weights }
    }

    pub fn points(&self, n: usize) -> Vec<Point3> {
        self.sample(n, POINT_STREAM)
    }

    pub fn queries(&self, n: usize) -> Vec<Point3> {
        self.sample(n, QUERY_STREAM)
    }

    fn sample(&self, n: usize, stream: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Point3 {
        let unit = |rng: &mut ChaCha8Rng| Point3::new(rng.random(), rng.random(), rng.random());
        let Some(weights) = &self.weights else {
            return unit(rng);
        };
        if rng.random_bool(BACKGROUND_FRACTION) {
            return unit(rng);
        }
        let blob = &self.blobs[weights.sample(rng)];
        // resample rather than clamp so no density piles up on the faces
        loop {
            let p = Point3::new(
                blob.center.x + blob.spread.sample(rng),
                blob.center.y + blob.spread.sample(rng),
                blob.center.z + blob.spread.sample(rng),
            );
            if [p.x, p.y, p.z].iter().all(|c| (0.0..=1.0).contains(c)) {
                return p;
            }
        }
    }

    pub fn distribution(&self) -> Distribution {
        self.dist
    }
}

pub fn synth_points(dist: Distribution, n: usize, seed: u64) -> Vec<Point3> {
    Synth::new(dist, seed).points(n)
}
