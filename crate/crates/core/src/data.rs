//! Synthetic 2-D binary datasets with ±1 labels.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Outer arc (label +1) and the shifted inner arc (label −1).
    TwoMoons { noise: f64 },
    /// Unit circle (label −1) around a circle of radius `ratio` (label +1).
    Circles { noise: f64, ratio: f64 },
    /// Unit-variance Gaussians centred at (±separation/2, 0).
    GaussianBlobs { separation: f64 },
}

impl Default for Generator {
    fn default() -> Self {
        Generator::TwoMoons { noise: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub generator: Generator,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.test)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * (i as f64 / (n - 1) as f64)
        }
    })
}

/// Generates `n` points and splits them 80/20 after a seeded shuffle.
pub fn make_dataset(generator: Generator, n: usize, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::Config(format!("dataset needs at least 4 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = n.div_ceil(2);
    let n_neg = n / 2;
    let mut points: Vec<Sample> = Vec::with_capacity(n);
    match generator {
        Generator::TwoMoons { noise } => {
            let jitter = noise_dist(noise)?;
            for t in linspace(0.0, PI, n_pos) {
                points.push(Sample {
                    x: vec![t.cos(), t.sin()],
                    y: 1.0,
                });
            }
            for t in linspace(0.0, PI, n_neg) {
                points.push(Sample {
                    x: vec![1.0 - t.cos(), 0.5 - t.sin()],
                    y: -1.0,
                });
            }
            add_noise(&mut points, jitter, &mut rng);
        }
        Generator::Circles { noise, ratio } => {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::Config(format!("circle ratio must be in (0, 1), got {ratio}")));
            }
            let jitter = noise_dist(noise)?;
            for i in 0..n_neg {
                let t = 2.0 * PI * i as f64 / n_neg as f64;
                points.push(Sample {
                    x: vec![t.cos(), t.sin()],
                    y: -1.0,
                });
            }
            for i in 0..n_pos {
                let t = 2.0 * PI * i as f64 / n_pos as f64;
                points.push(Sample {
                    x: vec![ratio * t.cos(), ratio * t.sin()],
                    y: 1.0,
                });
            }
            add_noise(&mut points, jitter, &mut rng);
        }
        Generator::GaussianBlobs { separation } => {
            if !separation.is_finite() {
                return Err(Error::Config(format!("separation must be finite, got {separation}")));
            }
            let unit = Normal::new(0.0, 1.0).expect("unit normal");
            let c = separation / 2.0;
            for _ in 0..n_pos {
                let x = vec![c + unit.sample(&mut rng), unit.sample(&mut rng)];
                points.push(Sample { x, y: 1.0 });
            }
            for _ in 0..n_neg {
                let x = vec![-c + unit.sample(&mut rng), unit.sample(&mut rng)];
                points.push(Sample { x, y: -1.0 });
            }
        }
    }
    points.shuffle(&mut rng);
    let n_train = n * 4 / 5;
    let test = points.split_off(n_train);
    Ok(Dataset {
        generator,
        seed,
        train: points,
        test,
    })
}

fn noise_dist(noise: f64) -> Result<Option<Normal<f64>>> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Config(format!("noise must be >= 0, got {noise}")));
    }
    Ok((noise > 0.0).then(|| Normal::new(0.0, noise).expect("valid std")))
}

fn add_noise(points: &mut [Sample], jitter: Option<Normal<f64>>, rng: &mut ChaCha8Rng) {
    if let Some(d) = jitter {
        for p in points {
            for v in &mut p.x {
                *v += d.sample(rng);
            }
        }
    }
}
