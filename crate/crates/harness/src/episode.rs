use ssp_core::{FeatureMap, Mask, MaskKind, Shot};

use crate::error::{HarnessError, Result};

/// K labelled supports and one labelled query of the same class.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub supports: Vec<Shot>,
    pub query: FeatureMap,
    pub query_gt: Mask,
    pub class_id: u32,
    pub episode_id: u64,
}

impl Episode {
    /// Checks channel agreement, mask shapes, binary masks and nonempty
    /// support foregrounds.
    pub fn new(
        supports: Vec<Shot>,
        query: FeatureMap,
        query_gt: Mask,
        class_id: u32,
        episode_id: u64,
    ) -> Result<Self> {
        let bad = |message: String| HarnessError::InvalidEpisode {
            episode_id,
            message,
        };
        if supports.is_empty() {
            return Err(bad("no supports".into()));
        }
        query.check_mask(&query_gt, "episode")?;
        if query_gt.kind() != MaskKind::Binary {
            return Err(bad("query ground truth must be binary".into()));
        }
        for (i, shot) in supports.iter().enumerate() {
            if shot.features.channels() != query.channels() {
                return Err(bad(format!(
                    "support {i} has {} channels, query has {}",
                    shot.features.channels(),
                    query.channels()
                )));
            }
            if shot.mask.kind() != MaskKind::Binary {
                return Err(bad(format!("support {i} mask must be binary")));
            }
            if shot.mask.count_active() == 0 {
                return Err(bad(format!("support {i} mask is empty")));
            }
        }
        Ok(Self {
            supports,
            query,
            query_gt,
            class_id,
            episode_id,
        })
    }

    pub fn shots(&self) -> usize {
        self.supports.len()
    }

    pub fn channels(&self) -> usize {
        self.query.channels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shot(bits: &[bool]) -> Shot {
        let f = FeatureMap::new(2, 1, bits.len(), vec![1.0; 2 * bits.len()]).unwrap();
        Shot::new(f, Mask::from_bools(1, bits.len(), bits).unwrap()).unwrap()
    }

    #[test]
    fn rejects_empty_support_mask() {
        let q = FeatureMap::new(2, 1, 3, vec![0.5; 6]).unwrap();
        let gt = Mask::from_pixels(1, 3, &[0]).unwrap();
        let err = Episode::new(vec![shot(&[false; 3])], q.clone(), gt.clone(), 0, 7).unwrap_err();
        assert!(err.to_string().contains("episode 7"));
        assert!(Episode::new(vec![], q.clone(), gt.clone(), 0, 0).is_err());
        assert!(Episode::new(vec![shot(&[true, false, false])], q, gt, 0, 0).is_ok());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let q = FeatureMap::new(3, 1, 3, vec![0.5; 9]).unwrap();
        let gt = Mask::from_pixels(1, 3, &[0]).unwrap();
        assert!(Episode::new(vec![shot(&[true, false, true])], q, gt, 0, 0).is_err());
    }

    #[test]
    fn rejects_soft_ground_truth() {
        let q = FeatureMap::new(2, 1, 3, vec![0.5; 6]).unwrap();
        let gt = Mask::filled(1, 3, MaskKind::Probability, 0.5).unwrap();
        assert!(Episode::new(vec![shot(&[true, true, true])], q, gt, 0, 0).is_err());
    }
}
