//! End-to-end reenactment: landmark transfer followed by dictionary-guided
//! rendering.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fdgan::{self, FdGanParams, FeatureDictionary};
use crate::frame::PortraitFrame;
use crate::landmarks::{rasterize, LandmarkSet};
use crate::ldnet::{self, IdentityCode, LdNetParams};

#[derive(Clone, Debug)]
pub struct ReenactResult {
    pub image: PortraitFrame,
    pub dictionaries: Vec<FeatureDictionary>,
}

/// Renders `x_T`'s subject with the pose/expression of `l_drive`.
pub fn reenact_frame(
    x_t: &PortraitFrame,
    l_t: &LandmarkSet,
    l_drive: &LandmarkSet,
    fdgan_params: &FdGanParams,
    ldnet_params: &LdNetParams,
) -> Result<ReenactResult> {
    let mut r = Reenactor::new(x_t, l_t, fdgan_params, ldnet_params)?;
    let image = r.frame(l_drive)?;
    Ok(ReenactResult {
        image,
        dictionaries: r.dictionaries().to_vec(),
    })
}

/// Per-target state reused across a driving sequence: the dictionaries and
/// the target identity code are computed once.
pub struct Reenactor<'a> {
    fdgan: &'a FdGanParams,
    ldnet: &'a LdNetParams,
    dictionaries: Vec<FeatureDictionary>,
    target: LandmarkSet,
    identity: IdentityCode,
    extract_calls: usize,
    pub extract_time: Duration,
    pub transfer_time: Duration,
    pub render_time: Duration,
}

impl<'a> Reenactor<'a> {
    pub fn new(x_t: &PortraitFrame, l_t: &LandmarkSet, fdgan: &'a FdGanParams, ldnet: &'a LdNetParams) -> Result<Self> {
        if !l_t.is_normalized() {
            return Err(Error::NotNormalized);
        }
        let t0 = Instant::now();
        let raster = rasterize(l_t, fdgan.config.image_size)?;
        let dictionaries = fdgan::extract(x_t, &raster, fdgan)?;
        let extract_time = t0.elapsed();
        let identity = ldnet::encode_identity(l_t, ldnet)?;
        Ok(Reenactor {
            fdgan,
            ldnet,
            dictionaries,
            target: l_t.clone(),
            identity,
            extract_calls: 1,
            extract_time,
            transfer_time: Duration::ZERO,
            render_time: Duration::ZERO,
        })
    }

    /// Reuses dictionaries computed earlier for the same target.
    pub fn with_dictionaries(
        dictionaries: Vec<FeatureDictionary>,
        l_t: &LandmarkSet,
        fdgan: &'a FdGanParams,
        ldnet: &'a LdNetParams,
    ) -> Result<Self> {
        if !l_t.is_normalized() {
            return Err(Error::NotNormalized);
        }
        Ok(Reenactor {
            fdgan,
            ldnet,
            dictionaries,
            target: l_t.clone(),
            identity: ldnet::encode_identity(l_t, ldnet)?,
            extract_calls: 0,
            extract_time: Duration::ZERO,
            transfer_time: Duration::ZERO,
            render_time: Duration::ZERO,
        })
    }

    pub fn dictionaries(&self) -> &[FeatureDictionary] {
        &self.dictionaries
    }

    /// Number of extractor passes run by this instance.
    pub fn extract_calls(&self) -> usize {
        self.extract_calls
    }

    /// The transferred landmarks for one driving frame.
    pub fn transfer(&mut self, l_drive: &LandmarkSet) -> Result<LandmarkSet> {
        if !l_drive.is_normalized() {
            return Err(Error::NotNormalized);
        }
        let t0 = Instant::now();
        let pose = ldnet::encode_pose_expr(l_drive, self.ldnet)?;
        let raw = ldnet::generate_landmarks(&pose, &self.identity, self.ldnet)?
            .with_ids(self.target.subject_id, l_drive.frame_id);
        let out = crate::landmarks::normalize_landmarks(&raw)?.0;
        self.transfer_time += t0.elapsed();
        Ok(out)
    }

    pub fn frame(&mut self, l_drive: &LandmarkSet) -> Result<PortraitFrame> {
        let transferred = self.transfer(l_drive)?;
        let t0 = Instant::now();
        let raster = rasterize(&transferred, self.fdgan.config.image_size)?;
        let mut image = fdgan::translate(&self.dictionaries, &raster, self.fdgan)?;
        self.render_time += t0.elapsed();
        image.subject_id = self.target.subject_id;
        image.frame_id = l_drive.frame_id;
        Ok(image)
    }
}
