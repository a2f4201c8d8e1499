//! Concave valuation families `Vᵢᵖ(F)` and their marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum UtilityFamily {
    /// `w·√F`
    Sqrt,
    /// `w·ln(1+F)`
    Log1p,
    /// `w·F^γ/γ`, `γ ∈ (0,1)`
    Power { exponent: f64 },
}

impl UtilityFamily {
    /// Whether the marginal diverges at `F = 0`.
    pub fn singular_at_zero(self) -> bool {
        !matches!(self, UtilityFamily::Log1p)
    }
}

/// Valuation family plus a contributor × project weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilitySpec {
    family: UtilityFamily,
    n_contributors: usize,
    n_projects: usize,
    weights: Vec<f64>,
}

impl UtilitySpec {
    pub fn new<R: AsRef<[f64]>>(family: UtilityFamily, weights: &[R]) -> Result<Self> {
        if let UtilityFamily::Power { exponent } = family {
            if !(exponent > 0.0 && exponent < 1.0) {
                return Err(Error::InvalidExponent(exponent));
            }
        }
        let n_contributors = weights.len();
        let n_projects = weights.first().map_or(0, |r| r.as_ref().len());
        if n_contributors == 0 || n_projects == 0 {
            return Err(Error::Shape("utility weights must be a nonempty matrix".into()));
        }
        let mut flat = Vec::with_capacity(n_contributors * n_projects);
        for (i, row) in weights.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_projects {
                return Err(Error::Shape(format!(
                    "weight row {i} has {} entries, expected {n_projects}",
                    row.len()
                )));
            }
            for (p, &w) in row.iter().enumerate() {
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::InvalidWeight {
                        contributor: i,
                        project: p,
                        value: w,
                    });
                }
            }
            flat.extend_from_slice(row);
        }
        Ok(Self {
            family,
            n_contributors,
            n_projects,
            weights: flat,
        })
    }

    /// Every contributor values every project with the same weight.
    pub fn uniform(
        family: UtilityFamily,
        n_contributors: usize,
        n_projects: usize,
        weight: f64,
    ) -> Result<Self> {
        Self::new(family, &vec![vec![weight; n_projects]; n_contributors])
    }

    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    pub fn n_contributors(&self) -> usize {
        self.n_contributors
    }

    pub fn n_projects(&self) -> usize {
        self.n_projects
    }

    pub fn weight(&self, contributor: usize, project: usize) -> f64 {
        self.weights[contributor * self.n_projects + project]
    }

    pub fn weight_row(&self, contributor: usize) -> &[f64] {
        let start = contributor * self.n_projects;
        &self.weights[start..start + self.n_projects]
    }

    fn check_index(&self, contributor: usize, project: usize) -> Result<()> {
        if contributor >= self.n_contributors {
            return Err(Error::ContributorIndex(contributor));
        }
        if project >= self.n_projects {
            return Err(Error::ProjectIndex(project));
        }
        Ok(())
    }

    pub fn utility_value(&self, contributor: usize, project: usize, funding: f64) -> Result<f64> {
        self.check_index(contributor, project)?;
        if !(funding.is_finite() && funding >= 0.0) {
            return Err(Error::NegativeFunding(funding));
        }
        let w = self.weight(contributor, project);
        if w == 0.0 {
            return Ok(0.0);
        }
        Ok(match self.family {
            UtilityFamily::Sqrt => w * funding.sqrt(),
            UtilityFamily::Log1p => w * funding.ln_1p(),
            UtilityFamily::Power { exponent } => w * funding.powf(exponent) / exponent,
        })
    }

    /// `V′ᵢᵖ(F)`. A zero weight gives a zero marginal even at `F = 0`.
    pub fn utility_marginal(&self, contributor: usize, project: usize, funding: f64) -> Result<f64> {
        self.check_index(contributor, project)?;
        if !(funding.is_finite() && funding >= 0.0) {
            return Err(Error::NegativeFunding(funding));
        }
        let w = self.weight(contributor, project);
        if w == 0.0 {
            return Ok(0.0);
        }
        if funding == 0.0 && self.family.singular_at_zero() {
            return Err(Error::UnboundedMarginal {
                contributor,
                project,
            });
        }
        Ok(match self.family {
            UtilityFamily::Sqrt => w / (2.0 * funding.sqrt()),
            UtilityFamily::Log1p => w / (1.0 + funding),
            UtilityFamily::Power { exponent } => w * funding.powf(exponent - 1.0),
        })
    }

    /// Σᵢ V′ᵢᵖ(Fᵖ) for every project.
    pub fn social_marginal_benefit(&self, funded: &[f64]) -> Result<Vec<f64>> {
        self.smb_over(0..self.n_contributors, funded)
    }

    /// Social marginal benefit restricted to a subset of contributors.
    pub fn smb_over(
        &self,
        contributors: impl IntoIterator<Item = usize> + Clone,
        funded: &[f64],
    ) -> Result<Vec<f64>> {
        if funded.len() != self.n_projects {
            return Err(Error::Shape(format!(
                "funded vector has {} entries, expected {}",
                funded.len(),
                self.n_projects
            )));
        }
        funded
            .iter()
            .enumerate()
            .map(|(p, &f)| {
                contributors
                    .clone()
                    .into_iter()
                    .map(|i| self.utility_marginal(i, p, f))
                    .sum()
            })
            .collect()
    }

    /// True if some contributor has a positive weight on `project`.
    pub fn anyone_cares(&self, project: usize) -> bool {
        (0..self.n_contributors).any(|i| self.weight(i, project) > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(family: UtilityFamily, w: f64) -> UtilitySpec {
        UtilitySpec::new(family, &[[w]]).unwrap()
    }

    const HALF_POWER: UtilityFamily = UtilityFamily::Power { exponent: 0.5 };

    #[test]
    fn value_examples() {
        assert_eq!(one(UtilityFamily::Sqrt, 1.0).utility_value(0, 0, 4.0).unwrap(), 2.0);
        assert_eq!(one(UtilityFamily::Log1p, 2.0).utility_value(0, 0, 0.0).unwrap(), 0.0);
        assert_eq!(one(HALF_POWER, 1.0).utility_value(0, 0, 9.0).unwrap(), 6.0);
        assert!(matches!(
            one(UtilityFamily::Sqrt, 1.0).utility_value(0, 0, -1.0),
            Err(Error::NegativeFunding(_))
        ));
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(one(UtilityFamily::Sqrt, 1.0).utility_marginal(0, 0, 4.0).unwrap(), 0.25);
        assert_eq!(one(UtilityFamily::Log1p, 3.0).utility_marginal(0, 0, 2.0).unwrap(), 1.0);
        let power = one(HALF_POWER, 2.0);
        assert_eq!(power.utility_marginal(0, 0, 4.0).unwrap(), 1.0);
        let h = 1e-5 * 4.0;
        let fd = (power.utility_value(0, 0, 4.0 + h).unwrap()
            - power.utility_value(0, 0, 4.0 - h).unwrap())
            / (2.0 * h);
        assert!((fd - 1.0).abs() < 1e-8);
    }

    #[test]
    fn singular_marginal_at_zero() {
        for family in [UtilityFamily::Sqrt, HALF_POWER] {
            assert!(matches!(
                one(family, 1.0).utility_marginal(0, 0, 0.0),
                Err(Error::UnboundedMarginal { .. })
            ));
            assert_eq!(one(family, 0.0).utility_marginal(0, 0, 0.0).unwrap(), 0.0);
        }
        assert_eq!(one(UtilityFamily::Log1p, 2.0).utility_marginal(0, 0, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn smb_examples() {
        let s = UtilitySpec::uniform(UtilityFamily::Sqrt, 2, 1, 1.0).unwrap();
        assert_eq!(s.social_marginal_benefit(&[4.0]).unwrap(), vec![0.5]);

        let s = UtilitySpec::new(UtilityFamily::Sqrt, &[[1.0, 0.0], [2.0, 0.0]]).unwrap();
        let smb = s.social_marginal_benefit(&[1.0, 3.0]).unwrap();
        assert_eq!(smb[1], 0.0);

        let s = UtilitySpec::new(UtilityFamily::Log1p, &[[1.0], [2.0], [3.0]]).unwrap();
        assert_eq!(s.social_marginal_benefit(&[5.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(UtilitySpec::new(UtilityFamily::Sqrt, &[[-1.0]]).is_err());
        assert!(UtilitySpec::new(UtilityFamily::Sqrt, &[[f64::NAN]]).is_err());
        assert!(UtilitySpec::new(UtilityFamily::Power { exponent: 1.0 }, &[[1.0]]).is_err());
        assert!(UtilitySpec::new(UtilityFamily::Power { exponent: 0.0 }, &[[1.0]]).is_err());
        assert!(UtilitySpec::new(UtilityFamily::Sqrt, &[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn family() -> impl Strategy<Value = UtilityFamily> {
        prop_oneof![
            Just(UtilityFamily::Sqrt),
            Just(UtilityFamily::Log1p),
            (0.05f64..0.95).prop_map(|exponent| UtilityFamily::Power { exponent }),
        ]
    }

    proptest! {
        #[test]
        fn marginal_matches_central_difference(family in family(), w in 0.01f64..10.0, f in 0.01f64..100.0) {
            let s = one(family, w);
            let h = 1e-5 * f.max(1.0);
            let fd = (s.utility_value(0, 0, f + h).unwrap() - s.utility_value(0, 0, f - h).unwrap()) / (2.0 * h);
            let exact = s.utility_marginal(0, 0, f).unwrap();
            prop_assert!(((fd - exact) / exact).abs() <= 1e-6, "fd {fd} exact {exact}");
        }

        #[test]
        fn marginal_strictly_decreasing(family in family(), w in 0.01f64..10.0, a in 0.01f64..50.0, gap in 0.01f64..50.0) {
            let s = one(family, w);
            prop_assert!(s.utility_marginal(0, 0, a).unwrap() > s.utility_marginal(0, 0, a + gap).unwrap());
        }

        #[test]
        fn smb_is_additive_over_groups(
            family in family(),
            weights in proptest::collection::vec(proptest::collection::vec(0.0f64..5.0, 3), 2..8),
            funded in proptest::collection::vec(0.1f64..20.0, 3),
            split in 1usize..7,
        ) {
            let s = UtilitySpec::new(family, &weights).unwrap();
            let n = s.n_contributors();
            let split = split.min(n - 1).max(1).min(n);
            let full = s.social_marginal_benefit(&funded).unwrap();
            let a = s.smb_over(0..split, &funded).unwrap();
            let b = s.smb_over(split..n, &funded).unwrap();
            for p in 0..3 {
                prop_assert!((a[p] + b[p] - full[p]).abs() <= 1e-12 * full[p].abs().max(1.0));
            }
        }
    }
}
