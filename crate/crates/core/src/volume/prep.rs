use serde::{Deserialize, Serialize};

use super::{crop_or_pad, resample, skull_strip, Volume, PIPELINE_DIMS, PIPELINE_SPACING_MM};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub target_spacing_mm: [f64; 3],
    pub target_dims: [usize; 3],
    pub skull_strip: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            target_spacing_mm: PIPELINE_SPACING_MM,
            target_dims: PIPELINE_DIMS,
            skull_strip: true,
        }
    }
}

/// Resample, strip the skull, then crop or pad to the target grid.
pub fn preprocess(volume: &Volume, config: &PrepConfig) -> Result<Volume> {
    let resampled = resample(volume, config.target_spacing_mm)?;
    let stripped = if config.skull_strip {
        skull_strip(&resampled)?.0
    } else {
        resampled
    };
    Ok(crop_or_pad(&stripped, config.target_dims))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::etiology::Etiology;
    use crate::phantom::{generate_case, PhantomGeometry, PhantomSpec};

    #[test]
    fn desk_phantom_reaches_pipeline_grid() {
        let spec = PhantomSpec {
            etiology: Etiology::Avm,
            seed: 3,
            geometry: PhantomGeometry::default(),
        };
        let (v, _, _) = generate_case(&spec).unwrap();
        let out = preprocess(&v, &PrepConfig::default()).unwrap();
        assert_eq!(out.dims(), [280, 280, 30]);
        assert_eq!(out.spacing_mm(), [0.6, 0.6, 4.2]);
        assert!(out.voxels().iter().all(|&h| h < 300));
    }
}
