//! Coverage scores, coverage regressors and the start-token conditioning
//! vector.

use entcap_tensor::{Element, Graph, ParamId, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::encoders::EncoderOutputs;
use crate::model::layers::{Init, Slots};
use crate::text::labels::{ObjectLabel, WebEntity};
use crate::text::words::word_set;

/// Boost factors at or above this value tend to repeat input labels.
pub const BOOST_WARN: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoveragePair {
    /// Fraction of caption words found among object-label words.
    pub cov_obj: f64,
    /// Fraction of web-entity words found in the caption.
    pub cov_we: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostFactors {
    pub w_we: f64,
    pub w_obj: f64,
}

impl Default for BoostFactors {
    fn default() -> Self {
        Self { w_we: 1.0, w_obj: 1.0 }
    }
}

impl BoostFactors {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("w_we", self.w_we), ("w_obj", self.w_obj)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("boost {n} = {v} must be a non-negative number")));
            }
        }
        Ok(())
    }

    /// Names of boosts large enough to cause label repetition.
    pub fn warnings(&self) -> Vec<String> {
        [("w_we", self.w_we), ("w_obj", self.w_obj)]
            .into_iter()
            .filter(|(_, v)| *v >= BOOST_WARN)
            .map(|(n, v)| format!("boost {n} = {v} >= {BOOST_WARN} may repeat input labels in captions"))
            .collect()
    }
}

/// Coverage of `caption` against the input labels, on unique lowercased
/// words. Empty denominators give 0.
pub fn compute_coverage(caption: &str, objects: &[ObjectLabel], entities: &[WebEntity]) -> CoveragePair {
    let cap = word_set(caption);
    let obj: std::collections::BTreeSet<String> = objects.iter().flat_map(|o| word_set(&o.name)).collect();
    let we: std::collections::BTreeSet<String> = entities.iter().flat_map(|e| word_set(&e.name)).collect();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    CoveragePair {
        cov_obj: ratio(cap.intersection(&obj).count(), cap.len()),
        cov_we: ratio(we.intersection(&cap).count(), we.len()),
    }
}

/// Tiles `(w_we · cov_we, w_obj · cov_obj)` into a length-`d` vector: the
/// first half carries the web-entity score, the second half the object score.
pub fn coverage_vector(pair: CoveragePair, boosts: BoostFactors, d: usize) -> Result<Vec<f64>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "coverage vector width {d} must be even and positive"
        )));
    }
    let (we, obj) = (boosts.w_we * pair.cov_we, boosts.w_obj * pair.cov_obj);
    Ok((0..d).map(|i| if i < d / 2 { we } else { obj }).collect())
}

/// Squared errors `(cov_obj loss, cov_we loss)`.
pub fn regressor_loss(predicted: CoveragePair, actual: CoveragePair) -> (f64, f64) {
    (
        (predicted.cov_obj - actual.cov_obj).powi(2),
        (predicted.cov_we - actual.cov_we).powi(2),
    )
}

/// Linear-sigmoid regressors over mean-pooled encoder outputs.
#[derive(Clone, Copy, Debug)]
pub struct RegressorIds {
    pub obj_w: ParamId,
    pub obj_b: ParamId,
    pub we_w: ParamId,
    pub we_b: ParamId,
}

/// Every regressor parameter name starts with this prefix.
pub const REGRESSOR_PREFIX: &str = "reg.";

impl RegressorIds {
    pub fn build(s: &mut impl Slots, d: usize) -> Result<Self> {
        Ok(Self {
            obj_w: s.slot("reg.obj.w", &[3 * d, 1], Init::Zeros)?,
            obj_b: s.slot("reg.obj.b", &[1], Init::Zeros)?,
            we_w: s.slot("reg.we.w", &[3 * d, 1], Init::Zeros)?,
            we_b: s.slot("reg.we.b", &[1], Init::Zeros)?,
        })
    }

    /// `[1, 3d]` concatenation of the per-source mean over valid positions.
    pub fn pooled<T: Element>(g: &mut Graph<'_, T>, enc: &EncoderOutputs) -> Result<Var> {
        let mut parts = Vec::with_capacity(3);
        for (h, valid) in [
            (enc.img, &enc.img_valid),
            (enc.obj, &enc.obj_valid),
            (enc.we, &enc.we_valid),
        ] {
            let m = g.shape(h)[0];
            let p = match valid {
                None => g.mean_rows(h)?,
                Some(v) => {
                    let n = v.iter().filter(|&&b| b).count().max(1) as f64;
                    let w = Tensor::from_fn(&[1, m], |i| if v[i] { T::of(1.0 / n) } else { T::zero() });
                    let w = g.constant(w)?;
                    g.matmul(w, h)?
                }
            };
            parts.push(p);
        }
        Ok(g.concat_cols(&parts)?)
    }

    /// Predicted `(cov_obj, cov_we)` as `[1, 1]` nodes.
    pub fn predict<T: Element>(&self, g: &mut Graph<'_, T>, pooled: Var) -> Result<(Var, Var)> {
        let mut head = |w: ParamId, b: ParamId| -> Result<Var> {
            let (w, b) = (g.param(w), g.param(b));
            let z = g.matmul(pooled, w)?;
            let z = g.add_row(z, b)?;
            Ok(g.sigmoid(z)?)
        };
        Ok((head(self.obj_w, self.obj_b)?, head(self.we_w, self.we_b)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig6() -> (Vec<ObjectLabel>, Vec<WebEntity>) {
        let obj = ["guitarist", "music artist", "performance", "stage", "concert"]
            .map(|n| ObjectLabel::new(n, 0.5))
            .to_vec();
        let we = vec![
            WebEntity::new("eric clapton", "ARTIST", 0.9),
            WebEntity::new("musician", "PROFESSION", 0.8),
            WebEntity::new("crossroads guitar festival 2013", "EVENT", 0.7),
        ];
        (obj, we)
    }

    #[test]
    fn published_example_coverage() {
        let (obj, we) = fig6();
        let c = compute_coverage(
            "eric clapton performs on stage during the crossroads guitar festival",
            &obj,
            &we,
        );
        assert!((c.cov_we - 5.0 / 7.0).abs() < 1e-12);
        assert!((c.cov_obj - 1.0 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_and_subset_cases() {
        let (obj, we) = fig6();
        assert_eq!(compute_coverage("a red bicycle", &obj, &we), CoveragePair::default());
        assert_eq!(compute_coverage("stage concert", &obj, &we).cov_obj, 1.0);
        assert_eq!(compute_coverage("", &obj, &we), CoveragePair::default());
    }

    #[test]
    fn tiling_layout() {
        let v = coverage_vector(
            CoveragePair {
                cov_obj: 0.25,
                cov_we: 0.5,
            },
            BoostFactors::default(),
            4,
        )
        .unwrap();
        assert_eq!(v, vec![0.5, 0.5, 0.25, 0.25]);
        assert!(coverage_vector(CoveragePair::default(), BoostFactors::default(), 5).is_err());
        let boosted = coverage_vector(
            CoveragePair {
                cov_obj: 0.25,
                cov_we: 0.5,
            },
            BoostFactors { w_we: 1.5, w_obj: 1.5 },
            4,
        )
        .unwrap();
        assert_eq!(boosted, vec![0.75, 0.75, 0.375, 0.375]);
    }

    #[test]
    fn loss_values() {
        let p = CoveragePair {
            cov_obj: 0.5,
            cov_we: 0.3,
        };
        assert_eq!(regressor_loss(p, p), (0.0, 0.0));
        let a = CoveragePair {
            cov_obj: 1.0,
            cov_we: 0.3,
        };
        assert_eq!(regressor_loss(p, a).0, 0.25);
    }

    #[test]
    fn boost_warnings() {
        assert!(BoostFactors::default().warnings().is_empty());
        assert_eq!(BoostFactors { w_we: 2.0, w_obj: 1.0 }.warnings().len(), 1);
        assert!(BoostFactors { w_we: -1.0, w_obj: 1.0 }.validate().is_err());
    }
}
