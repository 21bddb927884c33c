//! Two-dimensional discrete Fourier analysis.
//!
//! The forward transform is unnormalized and the inverse carries the `1/(HW)`
//! factor:
//!
//! ```text
//! f(u, v) = Σ_h Σ_w F(h, w) · exp(-2πi (uh/H + vw/W))
//! F(h, w) = 1/(HW) · Σ_u Σ_v f(u, v) · exp(+2πi (uh/H + vw/W))
//! ```
//!
//! Every channel is transformed independently. Band filters are ideal circular
//! masks measured from the DC bin of a centered spectrum.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Imaginary residue allowed by [`idft2`], relative to the largest bin magnitude.
pub const REAL_RESIDUE_TOLERANCE: f64 = 1e-4;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// In-place unnormalized 2D transform of one plane.
///
/// `Forward` uses `exp(-2πi…)`, `Inverse` uses `exp(+2πi…)`; neither scales.
pub fn fft2_plane(mut plane: ArrayViewMut2<'_, Complex64>, direction: FftDirection) {
    let (h, w) = plane.dim();
    if h == 0 || w == 0 {
        return;
    }
    let row_fft = plan(w, direction);
    let col_fft = plan(h, direction);
    let mut buf = vec![Complex64::new(0.0, 0.0); w.max(h)];
    let mut scratch =
        vec![Complex64::new(0.0, 0.0); row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];
    for mut row in plane.rows_mut() {
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = *v;
        }
        row_fft.process_with_scratch(&mut buf[..w], &mut scratch);
        for (v, b) in row.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
    for mut col in plane.columns_mut() {
        for (b, v) in buf.iter_mut().zip(col.iter()) {
            *b = *v;
        }
        col_fft.process_with_scratch(&mut buf[..h], &mut scratch);
        for (v, b) in col.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// Complex coefficients `f(c, u, v)` of a multi-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    data: Array3<Complex64>,
    centered: bool,
}

impl Spectrum {
    /// Wraps raw coefficients laid out as `(channel, u, v)`.
    pub fn new(data: Array3<Complex64>, centered: bool) -> Self {
        Spectrum { data, centered }
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array3<Complex64> {
        self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Per-channel sum of squared magnitudes.
    pub fn energy(&self) -> Vec<f64> {
        self.data
            .axis_iter(Axis(0))
            .map(|ch| ch.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    fn max_magnitude(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }
}

/// Unnormalized forward transform, channel by channel.
pub fn dft2(image: &ImageTensor) -> Result<Spectrum> {
    if !image.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let mut data = image.data().mapv(|v| Complex64::new(v, 0.0));
    for plane in data.axis_iter_mut(Axis(0)) {
        fft2_plane(plane, FftDirection::Forward);
    }
    Ok(Spectrum::new(data, false))
}

/// Normalized inverse transform returning complex values.
pub fn idft2_complex(spectrum: &Spectrum) -> Result<Array3<Complex64>> {
    if spectrum.centered {
        return Err(Error::FlagMismatch { expected: false });
    }
    let (_, h, w) = spectrum.dim();
    let mut data = spectrum.data.clone();
    for plane in data.axis_iter_mut(Axis(0)) {
        fft2_plane(plane, FftDirection::Inverse);
    }
    let scale = 1.0 / (h * w) as f64;
    data.mapv_inplace(|z| z * scale);
    Ok(data)
}

/// Normalized inverse transform to a real image.
///
/// Fails with [`Error::NonRealResult`] when the discarded imaginary part exceeds
/// [`REAL_RESIDUE_TOLERANCE`] times the largest bin magnitude.
pub fn idft2(spectrum: &Spectrum) -> Result<ImageTensor> {
    let complex = idft2_complex(spectrum)?;
    let residue = complex.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let tolerance = REAL_RESIDUE_TOLERANCE * spectrum.max_magnitude();
    if residue > tolerance {
        return Err(Error::NonRealResult { residue, tolerance });
    }
    Ok(ImageTensor::new(complex.mapv(|z| z.re)))
}

fn shift_plane<T: Copy>(src: &Array2<T>, dh: usize, dw: usize) -> Array2<T> {
    let (h, w) = src.dim();
    Array2::from_shape_fn((h, w), |(u, v)| src[((u + h - dh) % h, (v + w - dw) % w)])
}

/// Moves the DC bin to `(⌊H/2⌋, ⌊W/2⌋)`.
pub fn center(spectrum: &Spectrum) -> Result<Spectrum> {
    if spectrum.centered {
        return Err(Error::FlagMismatch { expected: false });
    }
    let (c, h, w) = spectrum.dim();
    let mut out = Array3::zeros((c, h, w));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(spectrum.data.axis_iter(Axis(0))) {
        dst.assign(&shift_plane(&src.to_owned(), h / 2, w / 2));
    }
    Ok(Spectrum::new(out, true))
}

/// Inverse of [`center`].
pub fn uncenter(spectrum: &Spectrum) -> Result<Spectrum> {
    if !spectrum.centered {
        return Err(Error::FlagMismatch { expected: true });
    }
    let (c, h, w) = spectrum.dim();
    let mut out = Array3::zeros((c, h, w));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(spectrum.data.axis_iter(Axis(0))) {
        dst.assign(&shift_plane(&src.to_owned(), h - h / 2, w - w / 2));
    }
    Ok(Spectrum::new(out, false))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    LowPass,
    HighPass,
    AllPass,
}

/// Ideal circular band filter: `passband` is a radius in bins around DC.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSpec {
    pub passband: f64,
    pub kind: FilterKind,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, passband: f64) -> Self {
        FilterSpec { passband, kind }
    }
}

/// Boolean keep-mask on the centered grid.
pub fn band_mask(height: usize, width: usize, spec: FilterSpec) -> Result<Array2<bool>> {
    if spec.passband.is_nan() || spec.passband < 0.0 {
        return Err(Error::InvalidPassband(spec.passband));
    }
    let (ch, cw) = ((height / 2) as f64, (width / 2) as f64);
    let r2 = spec.passband * spec.passband;
    Ok(Array2::from_shape_fn((height, width), |(u, v)| {
        let d2 = (u as f64 - ch).powi(2) + (v as f64 - cw).powi(2);
        match spec.kind {
            FilterKind::LowPass => d2 <= r2,
            FilterKind::HighPass => d2 > r2,
            FilterKind::AllPass => true,
        }
    }))
}

/// Zeroes every bin outside the band; the spectrum must be centered.
pub fn band_filter(spectrum: &Spectrum, spec: FilterSpec) -> Result<Spectrum> {
    if !spectrum.centered {
        return Err(Error::FlagMismatch { expected: true });
    }
    let (_, h, w) = spectrum.dim();
    let mask = band_mask(h, w, spec)?;
    let mut out = spectrum.clone();
    for mut plane in out.data.axis_iter_mut(Axis(0)) {
        ndarray::Zip::from(&mut plane).and(&mask).for_each(|z, &keep| {
            if !keep {
                *z = Complex64::new(0.0, 0.0);
            }
        });
    }
    Ok(out)
}

/// Binary PGM (P5) of `log(1 + |f|)` for one channel, scaled to 0..=255.
pub fn log_magnitude_pgm(spectrum: &Spectrum, channel: usize) -> Result<Vec<u8>> {
    if channel >= spectrum.channels() {
        return Err(Error::shape(format!(
            "channel {channel} of {}",
            spectrum.channels()
        )));
    }
    let plane = spectrum.data.index_axis(Axis(0), channel);
    let logmag = plane.mapv(|z| z.norm().ln_1p());
    let max = logmag.iter().cloned().fold(0.0f64, f64::max);
    let (h, w) = logmag.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(logmag.iter().map(|&v| {
        if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn constant_image_concentrates_at_dc() {
        let img = ImageTensor::new(Array3::ones((1, 2, 2)));
        let s = dft2(&img).unwrap();
        assert_eq!(s.data()[[0, 0, 0]], c(4.0, 0.0));
        for (u, v) in [(0, 1), (1, 0), (1, 1)] {
            assert!(s.data()[[0, u, v]].norm() < 1e-15);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut img = ImageTensor::zeros(1, 2, 2);
        img.data_mut()[[0, 0, 0]] = 1.0;
        let s = dft2(&img).unwrap();
        for z in s.data().iter() {
            assert!((z - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let mut data = Array3::zeros((2, 3, 4));
        data[[0, 0, 0]] = c(12.0 * 0.5, 0.0);
        data[[1, 0, 0]] = c(12.0 * -2.0, 0.0);
        let img = idft2(&Spectrum::new(data, false)).unwrap();
        assert!(img.channel(0).iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(img.channel(1).iter().all(|v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut img = ImageTensor::zeros(1, 2, 2);
        img.data_mut()[[0, 1, 1]] = f64::NAN;
        assert!(matches!(dft2(&img), Err(Error::NonFiniteInput)));
    }

    #[test]
    fn imaginary_residue_is_an_error() {
        let mut data = Array3::zeros((1, 4, 4));
        data[[0, 0, 1]] = c(1.0, 0.0);
        let err = idft2(&Spectrum::new(data, false)).unwrap_err();
        assert!(matches!(err, Error::NonRealResult { .. }));
    }

    #[test]
    fn centering_2x2_swaps_diagonals() {
        let data = array![[[c(1.0, 0.0), c(2.0, 0.0)], [c(3.0, 0.0), c(4.0, 0.0)]]];
        let centered = center(&Spectrum::new(data, false)).unwrap();
        let expect = array![[[c(4.0, 0.0), c(3.0, 0.0)], [c(2.0, 0.0), c(1.0, 0.0)]]];
        assert_eq!(centered.data(), &expect);
        assert!(centered.is_centered());
    }

    #[test]
    fn centering_moves_dc_to_middle_for_odd_sizes() {
        let mut data = Array3::zeros((1, 5, 7));
        data[[0, 0, 0]] = c(1.0, 0.0);
        let centered = center(&Spectrum::new(data, false)).unwrap();
        assert_eq!(centered.data()[[0, 2, 3]], c(1.0, 0.0));
        let back = uncenter(&centered).unwrap();
        assert_eq!(back.data()[[0, 0, 0]], c(1.0, 0.0));
    }

    #[test]
    fn flag_mismatches() {
        let s = Spectrum::new(Array3::zeros((1, 2, 2)), false);
        assert!(matches!(uncenter(&s), Err(Error::FlagMismatch { .. })));
        assert!(matches!(
            band_filter(&s, FilterSpec::new(FilterKind::LowPass, 1.0)),
            Err(Error::FlagMismatch { .. })
        ));
        let centered = center(&s).unwrap();
        assert!(matches!(center(&centered), Err(Error::FlagMismatch { .. })));
        assert!(matches!(idft2(&centered), Err(Error::FlagMismatch { .. })));
    }

    #[test]
    fn negative_passband_rejected() {
        let s = Spectrum::new(Array3::zeros((1, 4, 4)), true);
        let err = band_filter(&s, FilterSpec::new(FilterKind::HighPass, -1.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidPassband(_)));
    }

    #[test]
    fn large_passband_keeps_everything() {
        let data = Array3::from_shape_fn((1, 6, 6), |(_, u, v)| c(u as f64, v as f64 + 1.0));
        let s = Spectrum::new(data, true);
        let low = band_filter(&s, FilterSpec::new(FilterKind::LowPass, 100.0)).unwrap();
        let high = band_filter(&s, FilterSpec::new(FilterKind::HighPass, 100.0)).unwrap();
        assert_eq!(low, s);
        assert!(high.data().iter().all(|z| *z == c(0.0, 0.0)));
        let all = band_filter(&s, FilterSpec::new(FilterKind::AllPass, 0.0)).unwrap();
        assert_eq!(all, s);
    }

    #[test]
    fn pgm_header_and_size() {
        let s = Spectrum::new(Array3::from_elem((2, 3, 5), c(1.0, 0.0)), true);
        let pgm = log_magnitude_pgm(&s, 1).unwrap();
        assert!(pgm.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(pgm.len(), b"P5\n5 3\n255\n".len() + 15);
        assert!(log_magnitude_pgm(&s, 2).is_err());
    }
}
