use base64::Engine;
use serde::{Deserialize, Serialize};

use super::TaskMode;
use crate::data::{CaseRecord, Sex};
use crate::error::{Error, Result};
use crate::etiology::Etiology;
use crate::inference::ProbabilityVector;
use crate::volume::Volume;

/// Standard brain window.
pub const WINDOW_LEVEL_HU: f64 = 40.0;
pub const WINDOW_WIDTH_HU: f64 = 80.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceImage {
    pub z: usize,
    pub width: usize,
    pub height: usize,
    /// 8-bit grayscale PNG, base64.
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalInfo {
    pub age: u32,
    pub sex: Sex,
    pub known_hypertension: bool,
    pub impaired_coagulation: bool,
    pub complaint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiRow {
    pub etiology: Etiology,
    pub name: String,
    pub probability: f64,
    /// e.g. "93.5%"
    pub percent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiPanel {
    pub rows: Vec<AiRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePayload {
    pub session_id: String,
    pub task_mode: TaskMode,
    pub index: usize,
    pub total: usize,
    pub case_id: String,
    pub window_level: f64,
    pub window_width: f64,
    pub slices: Vec<SliceImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clinical: Option<ClinicalInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<AiPanel>,
}

pub fn window_to_gray(hu: i16) -> u8 {
    let lo = WINDOW_LEVEL_HU - WINDOW_WIDTH_HU / 2.0;
    let t = (f64::from(hu) - lo) / WINDOW_WIDTH_HU;
    (t.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn render_slice_png(volume: &Volume, z: usize) -> Result<Vec<u8>> {
    let [nx, ny, nz] = volume.dims();
    if z >= nz {
        return Err(Error::invalid(format!("slice {z} outside 0..{nz}")));
    }
    let gray: Vec<u8> = volume.axial_slice(z).iter().map(|&h| window_to_gray(h)).collect();
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, nx as u32, ny as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::invalid(format!("png encoding failed: {e}"));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&gray).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}

pub(crate) fn slices(volume: &Volume) -> Result<Vec<SliceImage>> {
    let [nx, ny, nz] = volume.dims();
    let b64 = base64::engine::general_purpose::STANDARD;
    (0..nz)
        .map(|z| {
            Ok(SliceImage {
                z,
                width: nx,
                height: ny,
                png_base64: b64.encode(render_slice_png(volume, z)?),
            })
        })
        .collect()
}

pub(crate) fn clinical(case: &CaseRecord) -> ClinicalInfo {
    ClinicalInfo {
        age: case.age,
        sex: case.sex,
        known_hypertension: case.known_hypertension,
        impaired_coagulation: case.impaired_coagulation,
        complaint: case.complaint.clone(),
    }
}

pub(crate) fn ai_panel(probs: &ProbabilityVector) -> AiPanel {
    AiPanel {
        rows: Etiology::ALL
            .iter()
            .map(|&e| AiRow {
                etiology: e,
                name: e.display_name().to_string(),
                probability: probs[e.index()],
                percent: format!("{:.1}%", probs[e.index()] * 100.0),
            })
            .collect(),
    }
}
