//! Finite-difference gradient verification.
//!
//! Used by the test suite to certify every analytic backward pass: sample a
//! handful of parameter coordinates, nudge each by `±h`, and compare the
//! central difference of the loss against the analytic gradient. Runs in
//! `f64` (the substrate is generic) so the difference quotient itself does
//! not drown in rounding noise.

use rand::Rng;

use super::ParamSet;

/// One verified coordinate.
#[derive(Debug, Clone)]
pub struct GradCheckSample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a gradient check over several coordinates.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub samples: Vec<GradCheckSample>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Relative error with an absolute floor so that coordinates where both
/// gradients are essentially zero do not blow up the ratio.
///
/// The floor is calibrated to the noise of the difference quotient itself: a
/// full f64 network forward carries ~1e-14 relative rounding error, so at
/// `h = 1e-4` the central difference of an O(1) loss is only trustworthy
/// down to ~1e-10. The 1e-6 floor keeps that noise four orders of magnitude
/// below a 1e-3 tolerance while still flagging any real defect (a wrong
/// backward term distorts gradients at their actual scale, not at 1e-7).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Pick `k` distinct parameter coordinates, tensors weighted by size.
pub fn sample_coordinates<P: ParamSet<f64>>(
    params: &P,
    k: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    assert!(total > 0, "no parameters to sample");
    let mut picks = std::collections::BTreeSet::new();
    let budget = k.min(total);
    while picks.len() < budget {
        let mut flat = rng.random_range(0..total);
        for (ti, &sz) in sizes.iter().enumerate() {
            if flat < sz {
                picks.insert((ti, flat));
                break;
            }
            flat -= sz;
        }
    }
    picks.into_iter().collect()
}

/// Central finite difference of `loss` along one parameter coordinate.
pub fn central_difference<P: ParamSet<f64>>(
    params: &mut P,
    loss: &mut dyn FnMut(&P) -> f64,
    tensor: usize,
    index: usize,
    h: f64,
) -> f64 {
    let nudge = |params: &mut P, delta: f64| {
        let mut ts = params.tensors_mut();
        let (_, t) = &mut ts[tensor];
        let slot = t
            .as_slice_mut()
            .expect("parameter tensors are standard layout");
        slot[index] += delta;
    };
    nudge(params, h);
    let plus = loss(params);
    nudge(params, -2.0 * h);
    let minus = loss(params);
    nudge(params, h); // restore
    (plus - minus) / (2.0 * h)
}

/// Compare analytic gradients against central differences at the given
/// coordinates.
pub fn check<P: ParamSet<f64>>(
    params: &mut P,
    analytic: &P,
    loss: &mut dyn FnMut(&P) -> f64,
    coordinates: &[(usize, usize)],
    h: f64,
) -> GradCheckReport {
    let names: Vec<String> = params.tensors().iter().map(|(n, _)| n.clone()).collect();
    let mut samples = Vec::with_capacity(coordinates.len());
    for &(ti, idx) in coordinates {
        let numeric = central_difference(params, loss, ti, idx, h);
        let a_tensors = analytic.tensors();
        let a = a_tensors[ti].1.as_slice().expect("standard layout")[idx];
        let rel = relative_error(a, numeric);
        samples.push(GradCheckSample {
            tensor: names[ti].clone(),
            index: idx,
            analytic: a,
            numeric,
            rel_err: rel,
        });
    }
    let max_rel_err = samples.iter().map(|s| s.rel_err).fold(0.0, f64::max);
    GradCheckReport {
        samples,
        max_rel_err,
    }
}
