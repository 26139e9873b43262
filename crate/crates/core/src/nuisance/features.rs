use std::fmt;

/// Which covariates get an `a x covariate` interaction term.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Interactions {
    None,
    #[default]
    All,
    /// Positions within the covariate slice handed to the map.
    Indices(Vec<usize>),
}

/// Basis expansion of `(a, covariates)` into a design row:
///
/// `[1, c_1..c_k, a?, a^2?, a*c_j for j in interactions]`
///
/// Leaving out `a^2` is how a misspecified outcome model is expressed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    pub treatment: bool,
    pub quadratic_a: bool,
    pub interactions: Interactions,
}

impl Default for FeatureMap {
    fn default() -> Self {
        FeatureMap::outcome()
    }
}

impl FeatureMap {
    /// Main effects, `a`, `a^2`, and `a` times every covariate.
    pub fn outcome() -> Self {
        FeatureMap {
            treatment: true,
            quadratic_a: true,
            interactions: Interactions::All,
        }
    }

    /// Main effects of `a` and the covariates only.
    pub fn main_effects() -> Self {
        FeatureMap {
            treatment: true,
            quadratic_a: false,
            interactions: Interactions::None,
        }
    }

    /// Covariates only, no treatment terms (for `E[A | V]`).
    pub fn covariates_only() -> Self {
        FeatureMap {
            treatment: false,
            quadratic_a: false,
            interactions: Interactions::None,
        }
    }

    pub fn without_quadratic(mut self) -> Self {
        self.quadratic_a = false;
        self
    }

    fn interaction_count(&self, k: usize) -> usize {
        if !self.treatment {
            return 0;
        }
        match &self.interactions {
            Interactions::None => 0,
            Interactions::All => k,
            Interactions::Indices(ix) => ix.len(),
        }
    }

    /// Design length for a covariate slice of length `k`.
    pub fn dim(&self, k: usize) -> usize {
        1 + k + usize::from(self.treatment) + usize::from(self.treatment && self.quadratic_a)
            + self.interaction_count(k)
    }

    /// Checks interaction indices against the covariate count.
    pub fn check(&self, k: usize) -> Result<(), String> {
        if let Interactions::Indices(ix) = &self.interactions {
            if let Some(&bad) = ix.iter().find(|&&j| j >= k) {
                return Err(format!(
                    "interaction index {bad} out of range for {k} covariates"
                ));
            }
        }
        Ok(())
    }

    pub fn expand_into(&self, a: f64, cov: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        out.extend_from_slice(cov);
        if self.treatment {
            out.push(a);
            if self.quadratic_a {
                out.push(a * a);
            }
            match &self.interactions {
                Interactions::None => {}
                Interactions::All => out.extend(cov.iter().map(|c| a * c)),
                Interactions::Indices(ix) => out.extend(ix.iter().map(|&j| a * cov[j])),
            }
        }
    }

    pub fn expand(&self, a: f64, cov: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(cov.len()));
        self.expand_into(a, cov, &mut out);
        out
    }

    /// `coef . expand(a, cov)` without materializing the row.
    #[inline]
    pub fn dot(&self, coef: &[f64], a: f64, cov: &[f64]) -> f64 {
        let k = cov.len();
        let mut acc = coef[0];
        for (b, c) in coef[1..=k].iter().zip(cov) {
            acc += b * c;
        }
        if !self.treatment {
            return acc;
        }
        let mut pos = k + 1;
        acc += coef[pos] * a;
        pos += 1;
        if self.quadratic_a {
            acc += coef[pos] * a * a;
            pos += 1;
        }
        match &self.interactions {
            Interactions::None => {}
            Interactions::All => {
                for (b, c) in coef[pos..pos + k].iter().zip(cov) {
                    acc += b * a * c;
                }
            }
            Interactions::Indices(ix) => {
                for (b, &j) in coef[pos..pos + ix.len()].iter().zip(ix) {
                    acc += b * a * cov[j];
                }
            }
        }
        acc
    }
}

impl fmt::Display for Interactions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interactions::None => write!(f, "none"),
            Interactions::All => write!(f, "all"),
            Interactions::Indices(ix) => {
                let s: Vec<String> = ix.iter().map(usize::to_string).collect();
                write!(f, "[{}]", s.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let m = FeatureMap::outcome();
        assert_eq!(m.expand(2.0, &[3.0, 5.0]), vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0, 10.0]);
        let m = FeatureMap {
            interactions: Interactions::Indices(vec![1]),
            ..FeatureMap::outcome().without_quadratic()
        };
        assert_eq!(m.expand(2.0, &[3.0, 5.0]), vec![1.0, 3.0, 5.0, 2.0, 10.0]);
        assert_eq!(FeatureMap::covariates_only().expand(9.0, &[]), vec![1.0]);
    }

    #[test]
    fn bad_interaction_index() {
        let m = FeatureMap {
            interactions: Interactions::Indices(vec![4]),
            ..FeatureMap::outcome()
        };
        assert!(m.check(4).is_err());
        assert!(m.check(5).is_ok());
    }

    proptest! {
        #[test]
        fn dot_matches_expand(
            a in -5.0f64..5.0,
            cov in prop::collection::vec(-3.0f64..3.0, 0..6),
            quad in any::<bool>(),
            treat in any::<bool>(),
            inter in 0u8..3,
        ) {
            let interactions = match inter {
                0 => Interactions::None,
                1 => Interactions::All,
                _ => Interactions::Indices((0..cov.len()).step_by(2).collect()),
            };
            let m = FeatureMap { treatment: treat, quadratic_a: quad, interactions };
            let row = m.expand(a, &cov);
            prop_assert_eq!(row.len(), m.dim(cov.len()));
            let coef: Vec<f64> = (0..row.len()).map(|j| 0.5 + j as f64 * 0.25).collect();
            let direct: f64 = row.iter().zip(&coef).map(|(x, b)| x * b).sum();
            prop_assert!((m.dot(&coef, a, &cov) - direct).abs() < 1e-9);
        }
    }
}
