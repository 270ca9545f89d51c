use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Uniform,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Glorot,
    He,
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn glorot_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn he_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

pub fn he_std(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

fn draw<R: Rng + ?Sized>(n: usize, mode: InitMode, bound: f64, std: f64, rng: &mut R) -> Vec<f64> {
    match mode {
        InitMode::Uniform => {
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            (0..n).map(|_| u.sample(rng)).collect()
        }
        InitMode::Normal => {
            let d = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| d.sample(rng)).collect()
        }
    }
}

/// `fan_in * fan_out` weights scaled by both fans.
pub fn glorot_init<R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    mode: InitMode,
    rng: &mut R,
) -> Vec<f64> {
    draw(
        fan_in * fan_out,
        mode,
        glorot_bound(fan_in, fan_out),
        glorot_std(fan_in, fan_out),
        rng,
    )
}

/// `fan_in * fan_out` weights scaled by the fan-in only.
pub fn he_init<R: Rng + ?Sized>(
    fan_in: usize,
    fan_out: usize,
    mode: InitMode,
    rng: &mut R,
) -> Vec<f64> {
    draw(
        fan_in * fan_out,
        mode,
        he_bound(fan_in),
        he_std(fan_in),
        rng,
    )
}

pub fn init_weights<R: Rng + ?Sized>(
    scheme: InitScheme,
    fan_in: usize,
    fan_out: usize,
    mode: InitMode,
    rng: &mut R,
) -> Vec<f64> {
    match scheme {
        InitScheme::Glorot => glorot_init(fan_in, fan_out, mode, rng),
        InitScheme::He => he_init(fan_in, fan_out, mode, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn bounds() {
        assert!((glorot_bound(64, 64) - 0.216_506_350_946_109_67).abs() < 1e-15);
        assert_eq!(he_bound(3), 1.0);
    }

    #[test]
    fn samples_stay_inside_bounds() {
        let mut rng = rng_from(0);
        let u = glorot_bound(64, 64);
        assert!(glorot_init(64, 64, InitMode::Uniform, &mut rng)
            .iter()
            .all(|w| w.abs() <= u));
        let w = he_init(3, 100_000 / 3, InitMode::Uniform, &mut rng);
        assert!(w.iter().all(|w| w.abs() <= 1.0));
    }

    #[test]
    fn normal_scale() {
        let mut rng = rng_from(1);
        let w = glorot_init(50, 150, InitMode::Normal, &mut rng);
        let var = w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64;
        assert!((var - 0.01).abs() < 0.001, "{var}");
    }
}
