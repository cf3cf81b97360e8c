use rand::Rng;

use super::ssm::{sample_ssm, StatisticalShapeModel};
use super::tps::tps_warp;
use super::{Record, Split};
use crate::error::{Error, Result};
use crate::matching::ExpertSet;
use crate::rng::{Seeds, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSettings {
    /// Records in the augmented training set, originals included.
    pub count: usize,
    pub lambda: f64,
    /// Control-point subsampling stride along the contour.
    pub stride: usize,
    pub seed: u64,
}

/// Grows a training set to `settings.count` records by warping base scenes
/// onto shapes sampled from `ssm`. Originals come first, unmodified.
pub fn augment(train: &[Record], ssm: &StatisticalShapeModel, settings: &AugmentSettings) -> Result<Vec<Record>> {
    const MAX_ATTEMPTS: u64 = 32;
    if train.is_empty() {
        return Err(Error::Dataset("cannot augment an empty training set".into()));
    }
    if train.iter().any(|r| r.split != Split::Train) {
        return Err(Error::invalid("augmentation only applies to training records"));
    }
    if settings.count < train.len() {
        return Err(Error::invalid(format!("augment count {} is below the original size {}", settings.count, train.len())));
    }
    let seeds = Seeds::new(settings.seed);
    let mut out = train.to_vec();
    for i in 0..(settings.count - train.len()) as u64 {
        let mut last_err = None;
        let mut made = None;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = seeds.rng(Stream::Augment, &[i, attempt]);
            let base = &train[rng.random_range(0..train.len())];
            let virtual_shape = sample_ssm(ssm, &mut rng);
            let consensus = base.experts.consensus();
            let mut shapes = base.experts.experts().to_vec();
            shapes.push(consensus.clone());
            match tps_warp(&base.image, consensus, &virtual_shape, &shapes, settings.lambda, settings.stride) {
                Ok(mut warp) => {
                    let consensus = warp.shapes.pop().expect("consensus was appended");
                    made = Some(Record {
                        id: format!("aug{i:05}-{}", base.id),
                        image: warp.image,
                        experts: ExpertSet::new(warp.shapes, consensus)?,
                        ambiguity: base.ambiguity,
                        split: Split::Train,
                    });
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        match made {
            Some(r) => out.push(r),
            None => return Err(last_err.expect("at least one attempt")),
        }
    }
    Ok(out)
}
