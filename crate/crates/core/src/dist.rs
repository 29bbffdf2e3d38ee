//! Categorical progress distributions.
//!
//! A [`CategoricalValueDist`] spreads probability over 50 bins of task
//! progress, bin `i` covering `[0.02 i, 0.02 (i + 1))`. The difference of two
//! independent predictions lives on the signed integer bin support
//! `-49..=49` as a [`SignedBinDist`]; it stays in bin units until
//! [`SignedBinDist::upper_bound`] converts to a progress fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of progress bins.
pub const BINS: usize = 50;
/// Width of one bin as a progress fraction.
pub const BIN_WIDTH: f64 = 1.0 / BINS as f64;
/// Number of entries on the signed difference support.
pub const DELTA_BINS: usize = 2 * BINS - 1;
/// Offset of bin difference zero inside [`SignedBinDist::q`].
pub const DELTA_ZERO: usize = BINS - 1;

fn check_mass<F: Scalar>(p: &[F], expected_len: usize, what: &str) -> Result<()> {
    if p.len() != expected_len {
        return Err(Error::Dimension {
            expected: expected_len,
            found: p.len(),
        });
    }
    let mut sum = F::zero();
    for &v in p {
        if !v.is_finite() || v < F::zero() {
            return Err(Error::Validation(format!("{what}: invalid mass {v:?}")));
        }
        sum = sum + v;
    }
    if (sum - F::one()).abs() > F::MASS_TOLERANCE {
        return Err(Error::Validation(format!("{what}: total mass {sum:?} != 1")));
    }
    Ok(())
}

/// Probability over the 50 progress bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct CategoricalValueDist<F> {
    p: Vec<F>,
}

impl<F: Scalar> CategoricalValueDist<F> {
    pub fn new(p: Vec<F>) -> Result<Self> {
        check_mass(&p, BINS, "categorical value")?;
        Ok(Self { p })
    }

    pub fn point_mass(bin: usize) -> Self {
        assert!(bin < BINS, "bin {bin} out of range");
        let mut p = vec![F::zero(); BINS];
        p[bin] = F::one();
        Self { p }
    }

    /// Build from `(bin, mass)` pairs; unlisted bins get zero.
    pub fn from_pairs(pairs: &[(usize, F)]) -> Result<Self> {
        let mut p = vec![F::zero(); BINS];
        for &(bin, mass) in pairs {
            let slot = p
                .get_mut(bin)
                .ok_or_else(|| Error::Validation(format!("bin {bin} out of range")))?;
            *slot = *slot + mass;
        }
        Self::new(p)
    }

    /// Normalise nonnegative weights (e.g. softmax numerators) into a distribution.
    pub fn from_weights(w: Vec<F>) -> Result<Self> {
        let total = w.iter().fold(F::zero(), |a, &b| a + b);
        if !(total > F::zero()) || !total.is_finite() {
            return Err(Error::Validation("weights do not normalise".into()));
        }
        Self::new(w.into_iter().map(|v| v / total).collect())
    }

    pub fn probs(&self) -> &[F] {
        &self.p
    }

    /// Progress fraction represented by the centre of `bin`.
    pub fn bin_center(bin: usize) -> F {
        F::of((bin as f64 + 0.5) * BIN_WIDTH)
    }

    /// Expected progress fraction under bin-centre semantics.
    pub fn mean(&self) -> F {
        self.p
            .iter()
            .enumerate()
            .fold(F::zero(), |acc, (i, &m)| acc + m * Self::bin_center(i))
    }

    /// Expected bin index.
    pub fn mean_bin(&self) -> F {
        self.p
            .iter()
            .enumerate()
            .fold(F::zero(), |acc, (i, &m)| acc + m * F::of(i as f64))
    }

    /// Distribution of `self - past` for independent draws, in bin units.
    pub fn delta(&self, past: &CategoricalValueDist<F>) -> SignedBinDist<F> {
        let mut q = vec![F::zero(); DELTA_BINS];
        for (d, slot) in q.iter_mut().enumerate() {
            let diff = d as isize - DELTA_ZERO as isize;
            let lo = diff.max(0) as usize;
            let hi = (BINS as isize + diff.min(0)) as usize;
            let mut acc = F::zero();
            for a in lo..hi {
                let b = (a as isize - diff) as usize;
                acc = acc + self.p[a] * past.p[b];
            }
            *slot = acc;
        }
        SignedBinDist { q }
    }
}

/// Probability over bin differences `-49..=49`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct SignedBinDist<F> {
    q: Vec<F>,
}

impl<F: Scalar> SignedBinDist<F> {
    pub fn new(q: Vec<F>) -> Result<Self> {
        check_mass(&q, DELTA_BINS, "bin delta")?;
        Ok(Self { q })
    }

    /// Build from `(difference, mass)` pairs.
    pub fn from_pairs(pairs: &[(isize, F)]) -> Result<Self> {
        let mut q = vec![F::zero(); DELTA_BINS];
        for &(diff, mass) in pairs {
            let idx = diff + DELTA_ZERO as isize;
            if !(0..DELTA_BINS as isize).contains(&idx) {
                return Err(Error::Validation(format!("difference {diff} out of range")));
            }
            q[idx as usize] = q[idx as usize] + mass;
        }
        Self::new(q)
    }

    pub fn probs(&self) -> &[F] {
        &self.q
    }

    /// Mass at bin difference `diff`.
    pub fn mass(&self, diff: isize) -> F {
        let idx = diff + DELTA_ZERO as isize;
        if (0..DELTA_BINS as isize).contains(&idx) {
            self.q[idx as usize]
        } else {
            F::zero()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_mass(&self.q, DELTA_BINS, "bin delta")
    }

    fn support(&self) -> impl Iterator<Item = (F, F)> + '_ {
        self.q
            .iter()
            .enumerate()
            .map(|(i, &m)| (F::of(i as f64 - DELTA_ZERO as f64), m))
    }

    /// Mean difference in bin units.
    pub fn mean(&self) -> F {
        self.support().fold(F::zero(), |acc, (v, m)| acc + v * m)
    }

    /// Population standard deviation in bin units.
    pub fn std(&self) -> F {
        let mu = self.mean();
        let var = self
            .support()
            .fold(F::zero(), |acc, (v, m)| acc + m * (v - mu) * (v - mu));
        var.max(F::zero()).sqrt()
    }

    /// `mean + z * std`, converted from bin units to a signed progress fraction.
    pub fn upper_bound(&self, z: F) -> F {
        (self.mean() + z * self.std()) / F::of(BINS as f64)
    }
}

/// Bin-centre expectation of a categorical value, as a progress fraction.
pub fn dist_mean<F: Scalar>(d: &CategoricalValueDist<F>) -> Result<F> {
    check_mass(&d.p, BINS, "categorical value")?;
    Ok(d.mean())
}

pub fn dist_std<F: Scalar>(d: &SignedBinDist<F>) -> Result<F> {
    d.validate()?;
    Ok(d.std())
}

pub fn dist_delta<F: Scalar>(
    now: &CategoricalValueDist<F>,
    past: &CategoricalValueDist<F>,
) -> Result<SignedBinDist<F>> {
    check_mass(&now.p, BINS, "categorical value")?;
    check_mass(&past.p, BINS, "categorical value")?;
    Ok(now.delta(past))
}

pub fn upper_bound<F: Scalar>(d: &SignedBinDist<F>, z: F) -> Result<F> {
    d.validate()?;
    if !(z >= F::zero()) {
        return Err(Error::Validation(format!("confidence multiplier {z:?} < 0")));
    }
    Ok(d.upper_bound(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type D = CategoricalValueDist<f64>;
    type S = SignedBinDist<f64>;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn mean_examples() {
        assert!(close(dist_mean(&D::point_mass(0)).unwrap(), 0.01));
        let uniform = D::new(vec![1.0 / 50.0; 50]).unwrap();
        assert!(close(dist_mean(&uniform).unwrap(), 0.5));
        let two = D::from_pairs(&[(10, 0.5), (20, 0.5)]).unwrap();
        assert!(close(dist_mean(&two).unwrap(), 0.31));
    }

    #[test]
    fn malformed_rejected() {
        assert!(D::new(vec![0.5; 50]).is_err());
        assert!(D::new(vec![0.02; 49]).is_err());
        let mut p = vec![0.0; 50];
        p[0] = 1.5;
        p[1] = -0.5;
        assert!(D::new(p).is_err());
        assert!(S::new(vec![0.0; 99]).is_err());
    }

    #[test]
    fn std_examples() {
        assert!(close(dist_std(&S::from_pairs(&[(3, 1.0)]).unwrap()).unwrap(), 0.0));
        let sym = S::from_pairs(&[(1, 0.5), (-1, 0.5)]).unwrap();
        assert!(close(dist_std(&sym).unwrap(), 1.0));
        let two = S::from_pairs(&[(1, 0.5), (2, 0.5)]).unwrap();
        assert!(close(dist_std(&two).unwrap(), 0.5));
    }

    #[test]
    fn delta_examples() {
        let d = dist_delta(&D::point_mass(7), &D::point_mass(7)).unwrap();
        assert_eq!(d.mass(0), 1.0);
        let d = dist_delta(&D::point_mass(3), &D::point_mass(1)).unwrap();
        assert_eq!(d.mass(2), 1.0);
        let now = D::from_pairs(&[(2, 0.5), (3, 0.5)]).unwrap();
        let d = dist_delta(&now, &D::point_mass(1)).unwrap();
        assert_eq!(d.mass(1), 0.5);
        assert_eq!(d.mass(2), 0.5);
        assert_eq!(d.probs().iter().filter(|&&m| m > 0.0).count(), 2);
    }

    #[test]
    fn upper_bound_examples() {
        let p = S::from_pairs(&[(5, 1.0)]).unwrap();
        assert!(close(upper_bound(&p, 2.0).unwrap(), 0.10));
        let two = S::from_pairs(&[(1, 0.5), (2, 0.5)]).unwrap();
        assert!(close(upper_bound(&two, 2.0).unwrap(), 0.05));
        let neg = S::from_pairs(&[(-3, 1.0)]).unwrap();
        assert!(close(upper_bound(&neg, 0.0).unwrap(), -0.06));
        assert!(upper_bound(&neg, -1.0).is_err());
    }

    #[test]
    fn extreme_differences_land_on_the_edges() {
        let d = D::point_mass(49).delta(&D::point_mass(0));
        assert_eq!(d.mass(49), 1.0);
        let d = D::point_mass(0).delta(&D::point_mass(49));
        assert_eq!(d.mass(-49), 1.0);
    }

    #[test]
    fn single_precision_works() {
        let now = CategoricalValueDist::<f32>::from_pairs(&[(2, 0.5), (3, 0.5)]).unwrap();
        let d = now.delta(&CategoricalValueDist::point_mass(1));
        assert!((d.upper_bound(2.0) - 0.05).abs() < 1e-6);
    }

    fn arb_dist() -> impl Strategy<Value = D> {
        prop::collection::vec(0.0f64..1.0, BINS).prop_filter_map("zero mass", |w| D::from_weights(w).ok())
    }

    proptest! {
        #[test]
        fn delta_mean_is_difference_of_means(a in arb_dist(), b in arb_dist()) {
            let d = a.delta(&b);
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let lhs = d.mean();
            let rhs = (a.mean() - b.mean()) / BIN_WIDTH;
            prop_assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }

        #[test]
        fn upper_bound_monotone_in_z(a in arb_dist(), b in arb_dist(), z1 in 0.0f64..4.0, dz in 0.0f64..4.0) {
            let d = a.delta(&b);
            prop_assert!(d.upper_bound(z1) <= d.upper_bound(z1 + dz));
        }

        #[test]
        fn delta_is_pure(a in arb_dist(), b in arb_dist()) {
            let x = a.delta(&b);
            let y = a.delta(&b);
            prop_assert!(x.probs().iter().zip(y.probs()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
