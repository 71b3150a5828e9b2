//! Third-order Butterworth high-pass with zero-phase (forward-backward)
//! application, for baseline-wander removal.
//!
//! The analog prototype poles factor into `(s+1)(s²+s+1)`; the low-pass to
//! high-pass transform `s → ωa/s` and a prewarped bilinear transform give
//! one first-order and one biquad section. Each pass starts from the
//! steady-state initial condition for the first sample, and the signal is
//! odd-extended at both ends, so constant inputs map to (numerically) zero.

/// One direct-form-II-transposed section, orders 1 and 2.
#[derive(Clone, Copy, Debug)]
struct Section {
    b: [f64; 3],
    a: [f64; 3], // a[0] = 1
    order: usize,
}

impl Section {
    /// State for a steady-state start on a step of height `x0`. The DC gain
    /// of a high-pass section is zero, so the steady output is zero and the
    /// states depend only on the numerator.
    fn initial_state(&self, x0: f64) -> [f64; 2] {
        match self.order {
            1 => [self.b[1] * x0, 0.0],
            _ => [(self.b[1] + self.b[2]) * x0, self.b[2] * x0],
        }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.initial_state(x.first().copied().unwrap_or(0.0));
        let mut out = Vec::with_capacity(x.len());
        for &xv in x {
            let y = self.b[0] * xv + z[0];
            z[0] = self.b[1] * xv - self.a[1] * y + z[1];
            z[1] = self.b[2] * xv - self.a[2] * y;
            out.push(y);
        }
        out
    }
}

/// Third-order Butterworth high-pass as cascaded sections.
#[derive(Clone, Debug)]
pub struct Butterworth3HighPass {
    first: Section,
    biquad: Section,
}

impl Butterworth3HighPass {
    pub fn new(cutoff_hz: f64, fs: f64) -> Butterworth3HighPass {
        assert!(cutoff_hz > 0.0 && fs > 0.0 && cutoff_hz < fs / 2.0, "cutoff must sit below Nyquist");
        // prewarped analog cutoff and bilinear constant
        let k = 2.0 * fs;
        let wa = k * (std::f64::consts::PI * cutoff_hz / fs).tan();

        // H1(s) = s / (s + ωa)
        let d = k + wa;
        let first = Section {
            b: [k / d, -k / d, 0.0],
            a: [1.0, (wa - k) / d, 0.0],
            order: 1,
        };

        // H2(s) = s² / (s² + ωa·s + ωa²)
        let d0 = k * k + wa * k + wa * wa;
        let biquad = Section {
            b: [k * k / d0, -2.0 * k * k / d0, k * k / d0],
            a: [1.0, (-2.0 * k * k + 2.0 * wa * wa) / d0, (k * k - wa * k + wa * wa) / d0],
            order: 2,
        };
        Butterworth3HighPass { first, biquad }
    }

    fn run_cascade(&self, x: &[f64]) -> Vec<f64> {
        self.biquad.run(&self.first.run(x))
    }

    /// Zero-phase application: odd-extend, filter, reverse, filter, reverse.
    /// The effective magnitude response is |H(f)|².
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let pad = 12.min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let x0 = x[0];
        let xn = x[n - 1];
        for i in (1..=pad).rev() {
            ext.push(2.0 * x0 - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * xn - x[n - 1 - i]);
        }

        let mut y = self.run_cascade(&ext);
        y.reverse();
        let mut y = self.run_cascade(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }

    /// Analog-prototype magnitude for one pass: `1 / √(1 + (fc/f)⁶)`.
    pub fn analog_magnitude(cutoff_hz: f64, f: f64) -> f64 {
        1.0 / (1.0 + (cutoff_hz / f).powi(6)).sqrt()
    }
}
