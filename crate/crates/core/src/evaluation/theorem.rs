use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, domain, Rng};

/// Monte-Carlo estimate of the probability that a uniform point of a small
/// ball around a vertex lies in the cone cut out by `d` random half-spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremEstimate {
    pub d: usize,
    pub n_planes: usize,
    pub points: usize,
    pub estimate: f64,
    pub std_err: f64,
}

impl TheoremEstimate {
    pub fn expected(&self) -> f64 {
        0.5f64.powi(self.d as i32)
    }

    /// Distance to `2^{-d}` in standard errors.
    pub fn z_score(&self) -> f64 {
        let se = self.std_err.max(f64::MIN_POSITIVE);
        (self.estimate - self.expected()).abs() / se
    }
}

fn unit_vector(r: &mut Rng, d: usize, out: &mut [f64]) {
    loop {
        let mut nrm = 0.0;
        for v in out.iter_mut().take(d) {
            *v = rng::normal(r);
            nrm += *v * *v;
        }
        if nrm > 1e-300 {
            let inv = 1.0 / nrm.sqrt();
            out.iter_mut().take(d).for_each(|v| *v *= inv);
            return;
        }
    }
}

/// For every sample a fresh configuration is drawn: `d` unit normals through
/// the vertex and `n_planes − d` inactive planes with offsets above `eps`.
/// The sample point is uniform in the `eps`-ball.
pub fn theorem1_mc(d: usize, n_planes: usize, points: usize, eps: f64, seed: u64) -> Result<TheoremEstimate> {
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if n_planes < d {
        return Err(Error::Domain(format!("{n_planes} planes cannot make {d} active at a vertex")));
    }
    if points == 0 || !(eps > 0.0) {
        return Err(Error::Domain("need at least one point and a positive radius".into()));
    }
    let mut r = rng::stream(seed, &[domain::THEOREM, d as u64, n_planes as u64]);
    let mut x = vec![0.0; d];
    let mut a = vec![0.0; d];
    let mut inside = 0usize;
    for _ in 0..points {
        unit_vector(&mut r, d, &mut x);
        let radius = eps * r.random::<f64>().powf(1.0 / d as f64);
        x.iter_mut().for_each(|v| *v *= radius);
        let mut ok = true;
        for plane in 0..n_planes {
            unit_vector(&mut r, d, &mut a);
            let offset = if plane < d { 0.0 } else { eps * (1.0 + r.random::<f64>()) };
            let dot: f64 = a.iter().zip(&x).map(|(p, q)| p * q).sum();
            if dot > offset {
                ok = false;
            }
        }
        inside += ok as usize;
    }
    let p = inside as f64 / points as f64;
    let std_err = (p * (1.0 - p) / points as f64).sqrt();
    Ok(TheoremEstimate { d, n_planes, points, estimate: p, std_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_half_space() {
        let e = theorem1_mc(1, 1, 200_000, 0.1, 3).unwrap();
        assert!(e.z_score() <= 3.0, "{e:?}");
    }

    #[test]
    fn inactive_planes_never_cut() {
        let a = theorem1_mc(3, 3, 50_000, 0.05, 1).unwrap();
        let b = theorem1_mc(3, 12, 50_000, 0.05, 1).unwrap();
        assert!(a.z_score() <= 4.0 && b.z_score() <= 4.0);
    }

    #[test]
    fn domain_errors() {
        assert!(theorem1_mc(0, 1, 10, 0.1, 0).is_err());
        assert!(theorem1_mc(3, 2, 10, 0.1, 0).is_err());
    }

    #[test]
    fn reproducible() {
        assert_eq!(theorem1_mc(4, 6, 10_000, 0.1, 9).unwrap(), theorem1_mc(4, 6, 10_000, 0.1, 9).unwrap());
    }
}
