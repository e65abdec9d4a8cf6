//! Classical ring suppression in the polar domain.
//!
//! Every method follows the same route: resample to polar coordinates so the
//! rings become vertical stripes, correct the stripes, resample back, and
//! fill the frame corners from the input.

mod bilateral;
mod profile;
mod spectral;
mod stripe;
pub mod wavelet;

use serde::{Deserialize, Serialize};

pub use bilateral::bilateral;
pub use profile::{
    butterworth_gain, radial_profile, remove_rings_by_profile, ring_estimate, smooth_profile_butterworth,
    smooth_profile_fft, ProfileSmoother,
};
pub use spectral::filter_real;
pub use stripe::{max_levels, stripe_damping, stripe_filter, stripe_filter_grid};

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::polar::{cart_to_polar, default_sampling, polar_to_cart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMethod {
    Fft,
    Butterworth,
    Bilateral,
    Stripe,
}

impl FilterMethod {
    pub const ALL: [FilterMethod; 4] = [
        FilterMethod::Fft,
        FilterMethod::Butterworth,
        FilterMethod::Bilateral,
        FilterMethod::Stripe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterMethod::Fft => "fft",
            FilterMethod::Butterworth => "butterworth",
            FilterMethod::Bilateral => "bilateral",
            FilterMethod::Stripe => "stripe",
        }
    }
}

impl std::str::FromStr for FilterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid!("unknown filter method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FftParams {
    pub cutoff_frac: f64,
}

impl Default for FftParams {
    fn default() -> Self {
        FftParams { cutoff_frac: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ButterworthParams {
    /// Cutoff bin; `None` means `0.1 * n_r`.
    pub d0: Option<f64>,
    pub order: u32,
}

impl Default for ButterworthParams {
    fn default() -> Self {
        ButterworthParams { d0: None, order: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BilateralParams {
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub radius: usize,
}

impl Default for BilateralParams {
    fn default() -> Self {
        BilateralParams {
            sigma_s: 3.0,
            sigma_r: 0.1,
            radius: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StripeParams {
    pub levels: usize,
    pub sigma: f64,
}

impl Default for StripeParams {
    fn default() -> Self {
        StripeParams { levels: 3, sigma: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub method: FilterMethod,
    pub fft: FftParams,
    pub butterworth: ButterworthParams,
    pub bilateral: BilateralParams,
    pub stripe: StripeParams,
    /// Polar sampling; `None` means `4 * min(h, w)` angles.
    pub n_theta: Option<usize>,
    /// `None` means `min(h, w)` radii.
    pub n_r: Option<usize>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            method: FilterMethod::Stripe,
            fft: FftParams::default(),
            butterworth: ButterworthParams::default(),
            bilateral: BilateralParams::default(),
            stripe: StripeParams::default(),
            n_theta: None,
            n_r: None,
        }
    }
}

impl FilterConfig {
    pub fn with_method(method: FilterMethod) -> Self {
        FilterConfig {
            method,
            ..FilterConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bilateral;
        if !(self.fft.cutoff_frac > 0.0 && self.fft.cutoff_frac <= 0.5) {
            return Err(invalid!("fft.cutoff_frac must lie in (0, 0.5]"));
        }
        if self.butterworth.order == 0 || self.butterworth.d0.is_some_and(|d| !(d > 0.0)) {
            return Err(invalid!("butterworth needs order >= 1 and d0 > 0"));
        }
        if !(b.sigma_s > 0.0 && b.sigma_r > 0.0) {
            return Err(invalid!("bilateral sigmas must be positive"));
        }
        if !(self.stripe.sigma > 0.0) || self.stripe.levels == 0 {
            return Err(invalid!("stripe needs levels >= 1 and sigma > 0"));
        }
        Ok(())
    }
}

/// Cartesian -> polar -> correction -> cartesian, with the input image
/// supplying pixels outside the polar disk.
pub fn apply_filter_pipeline(img: &Image, cfg: &FilterConfig) -> Result<Image> {
    img.require_gray()?;
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let (dt, dr) = default_sampling(h, w);
    let n_theta = cfg.n_theta.unwrap_or(dt);
    let n_r = cfg.n_r.unwrap_or(dr);
    let polar = cart_to_polar(img, n_theta, n_r)?;
    let corrected = match cfg.method {
        FilterMethod::Fft => remove_rings_by_profile(
            &polar,
            &ProfileSmoother::Fft {
                cutoff_frac: cfg.fft.cutoff_frac,
            },
        )?,
        FilterMethod::Butterworth => remove_rings_by_profile(
            &polar,
            &ProfileSmoother::Butterworth {
                d0: cfg.butterworth.d0.unwrap_or(0.1 * n_r as f64),
                order: cfg.butterworth.order,
            },
        )?,
        FilterMethod::Bilateral => {
            let b = &cfg.bilateral;
            let out = bilateral(&polar.to_image(), b.sigma_s, b.sigma_r, b.radius)?;
            polar.with_data(out.into_data())?
        }
        FilterMethod::Stripe => stripe_filter(&polar, cfg.stripe.levels, cfg.stripe.sigma)?,
    };
    polar_to_cart(&corrected, h, w, Some(img))
}
