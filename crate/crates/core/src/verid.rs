//! Identification and verification heads and the joint pair loss.

use crate::diffcore::{Graph, Real, Var, LOG_EPS};
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if let Some(index) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{what}: component {index} is not a probability"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("{what}: components sum to {total}")));
    }
    Ok(())
}

/// Predicted identity probabilities over the `k` training identities.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityDistribution(Vec<f64>);

impl IdentityDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty identity distribution".into()));
        }
        check_distribution(&probs, "identity distribution")?;
        Ok(IdentityDistribution(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }
}

/// `(q1, q2)` where `q1` is the probability that the pair shares an identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationDistribution([f64; 2]);

impl VerificationDistribution {
    pub fn new(same: f64, different: f64) -> Result<Self> {
        check_distribution(&[same, different], "verification distribution")?;
        Ok(VerificationDistribution([same, different]))
    }

    pub fn same(&self) -> f64 {
        self.0[0]
    }

    pub fn different(&self) -> f64 {
        self.0[1]
    }
}

fn neg_log(p: f64) -> f64 {
    -p.max(LOG_EPS).ln()
}

/// Cross-entropy against a one-hot identity label: `-ln p_t`.
pub fn identification_loss(dist: &IdentityDistribution, target: usize) -> Result<f64> {
    let p = dist.0.get(target).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "identity {target} out of range for {} classes",
            dist.k()
        ))
    })?;
    Ok(neg_log(*p))
}

/// Binary cross-entropy with target `(1, 0)` for same-identity pairs and
/// `(0, 1)` otherwise.
pub fn verification_loss(dist: &VerificationDistribution, same: bool) -> f64 {
    neg_log(if same { dist.same() } else { dist.different() })
}

/// Loss terms of one image/video pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub verification: f64,
    pub image_identification: f64,
    pub video_identification: f64,
    pub total: f64,
}

/// `L = L_v + L_ii / 2 + L_iv / 2`
pub fn combined_loss(verification: f64, image_identification: f64, video_identification: f64) -> Result<LossBreakdown> {
    for (name, v) in [
        ("verification", verification),
        ("image identification", image_identification),
        ("video identification", video_identification),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument(format!("{name} loss {v} must be finite and >= 0")));
        }
    }
    Ok(LossBreakdown {
        verification,
        image_identification,
        video_identification,
        total: verification + 0.5 * image_identification + 0.5 * video_identification,
    })
}

impl LossBreakdown {
    /// Component-wise mean, with the total recomputed from the means.
    pub fn mean(items: &[LossBreakdown]) -> Result<LossBreakdown> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("mean of zero loss records".into()));
        }
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        combined_loss(
            avg(|b| b.verification),
            avg(|b| b.image_identification),
            avg(|b| b.video_identification),
        )
    }

    /// True when `total` matches the weighted sum up to rounding.
    pub fn is_consistent(&self) -> bool {
        let recomputed = self.verification + 0.5 * self.image_identification + 0.5 * self.video_identification;
        (self.total - recomputed).abs() <= 1e-12 * recomputed.abs().max(1.0)
    }
}

/// Elementwise `(f_i - f_v)^2` on the tape.
pub fn square_layer<R: Real>(g: &mut Graph<R>, image_feature: Var, video_feature: Var) -> Result<Var> {
    let diff = g.sub(image_feature, video_feature)?;
    Ok(g.square(diff))
}

/// Elementwise `(a - b)^2` on plain values.
pub fn square_layer_values(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "square layer: feature lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identification_cases() {
        let perfect = IdentityDistribution::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(identification_loss(&perfect, 1).unwrap(), 0.0);
        let uniform = IdentityDistribution::new(vec![0.25; 4]).unwrap();
        for t in 0..4 {
            assert!((identification_loss(&uniform, t).unwrap() - 4f64.ln()).abs() < 1e-12);
        }
        let half = IdentityDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert!((identification_loss(&half, 0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(identification_loss(&half, 3).is_err());
    }

    #[test]
    fn zero_probability_target_is_bounded() {
        let d = IdentityDistribution::new(vec![1.0, 0.0]).unwrap();
        let l = identification_loss(&d, 1).unwrap();
        assert!((l - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn distributions_validate() {
        assert!(IdentityDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(IdentityDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(IdentityDistribution::new(vec![]).is_err());
        assert!(VerificationDistribution::new(0.3, 0.3).is_err());
    }

    #[test]
    fn verification_cases() {
        let sure = VerificationDistribution::new(1.0, 0.0).unwrap();
        assert_eq!(verification_loss(&sure, true), 0.0);
        let coin = VerificationDistribution::new(0.5, 0.5).unwrap();
        assert!((verification_loss(&coin, false) - 2f64.ln()).abs() < 1e-12);
        let q = VerificationDistribution::new(0.9, 0.1).unwrap();
        assert!((verification_loss(&q, true) - 0.10536051565782628).abs() < 1e-12);
    }

    #[test]
    fn combined_arithmetic() {
        assert!((combined_loss(0.6, 0.4, 0.8).unwrap().total - 1.2).abs() < 1e-12);
        assert_eq!(combined_loss(0.0, 0.0, 0.0).unwrap().total, 0.0);
        assert_eq!(combined_loss(1.0, 1.0, 1.0).unwrap().total, 2.0);
        assert!(combined_loss(-0.1, 0.0, 0.0).is_err());
        assert!(combined_loss(f64::NAN, 0.0, 0.0).is_err());
        assert!(combined_loss(0.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn square_layer_cases() {
        assert_eq!(square_layer_values(&[1.0, 2.0], &[3.0, 1.0]).unwrap(), vec![4.0, 1.0]);
        assert_eq!(square_layer_values(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(square_layer_values(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn square_layer_gradient() {
        use crate::diffcore::Tensor;
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let b = g.param(Tensor::from_f64(&[2], &[3.0, 1.0]).unwrap());
        let s = square_layer(&mut g, a, b).unwrap();
        assert_eq!(g.value(s).data(), &[4.0, 1.0]);
        let total = g.sum(s);
        g.backward(total).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[-4.0, 2.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[4.0, -2.0]);
    }
}
