use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::TimeSeriesDataset;

/// Magnitude spectra `[n][f][d]` with `f = t/2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyView {
    pub n: usize,
    pub f: usize,
    pub d: usize,
    pub spectra: Vec<f64>,
}

impl FrequencyView {
    pub fn get(&self, i: usize, bin: usize, channel: usize) -> f64 {
        self.spectra[(i * self.f + bin) * self.d + channel]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.f * self.d;
        &self.spectra[i * len..(i + 1) * len]
    }

    pub fn batch(&self, indices: &[usize]) -> ndarray::Array3<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.f * self.d);
        for &i in indices {
            out.extend_from_slice(self.sample(i));
        }
        ndarray::Array3::from_shape_vec((indices.len(), self.f, self.d), out)
            .expect("batch shape is consistent")
    }
}

/// Unnormalized real-input DFT magnitude of every channel of every sample.
pub fn compute_frequency_view(ds: &TimeSeriesDataset) -> FrequencyView {
    compute_frequency_view_with(ds, false)
}

/// As [`compute_frequency_view`], optionally mapping magnitudes through
/// `ln(1 + |X|)`.
pub fn compute_frequency_view_with(ds: &TimeSeriesDataset, log_magnitude: bool) -> FrequencyView {
    let (n, t, d) = (ds.n, ds.t, ds.d);
    let f = t / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(t);
    let mut buf = vec![Complex::new(0.0, 0.0); t];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut spectra = vec![0.0; n * f * d];
    for i in 0..n {
        let x = ds.sample(i);
        for c in 0..d {
            for (step, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(x[step * d + c] as f64, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for bin in 0..f {
                let mag = buf[bin].norm();
                spectra[(i * f + bin) * d + c] = if log_magnitude { mag.ln_1p() } else { mag };
            }
        }
    }
    FrequencyView { n, f, d, spectra }
}
