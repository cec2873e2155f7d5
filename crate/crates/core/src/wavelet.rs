//! Multilevel discrete wavelet transform with Daubechies filter banks and
//! band-zeroing denoising.
//!
//! Each level runs an orthonormal two-channel filter bank on the periodised
//! signal and keeps every second output, so a band of length `n` yields
//! `ceil(n / 2)` approximation and detail coefficients. Odd-length inputs are
//! first extended by one half-sample symmetric sample (the last value repeated).
//! The filter bank is orthonormal, hence coefficient energy equals the energy of
//! the extended signal and reconstruction is exact up to rounding.

use crate::error::{Error, Result};

/// Scaling (lowpass) filters for db1..db8, reconstruction ordering.
const DB_LOWPASS: [&[f64]; 8] = [
    &[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    &[
        0.48296291314453416,
        0.8365163037378079,
        0.2241438680420134,
        -0.12940952255126037,
    ],
    &[
        0.33267055295008263,
        0.8068915093110925,
        0.45987750211849154,
        -0.13501102001025458,
        -0.08544127388202666,
        0.03522629188570953,
    ],
    &[
        0.2303778133088965,
        0.7148465705529157,
        0.6308807679298589,
        -0.027983769416859854,
        -0.18703481171909309,
        0.030841381835560764,
        0.0328830116668852,
        -0.010597401785069032,
    ],
    &[
        0.16010239797419293,
        0.6038292697971896,
        0.7243085284377729,
        0.13842814590132074,
        -0.24229488706638203,
        -0.032244869584638375,
        0.07757149384004572,
        -0.006241490212798274,
        -0.012580751999081999,
        0.0033357252854737712,
    ],
    &[
        0.11154074335010947,
        0.49462389039845306,
        0.7511339080210954,
        0.31525035170919763,
        -0.22626469396543983,
        -0.12976686756726194,
        0.09750160558732304,
        0.027522865530305727,
        -0.03158203931748603,
        0.0005538422011614961,
        0.004777257510945511,
        -0.0010773010853084796,
    ],
    &[
        0.07785205408500918,
        0.3965393194819173,
        0.7291320908462351,
        0.4697822874051931,
        -0.14390600392856498,
        -0.22403618499387498,
        0.07130921926683026,
        0.08061260915108308,
        -0.03802993693501441,
        -0.01657454163066688,
        0.01255099855609984,
        0.0004295779729213665,
        -0.0018016407040474908,
        0.00035371379997452024,
    ],
    &[
        0.05441584224310401,
        0.31287159091429995,
        0.6756307362972898,
        0.5853546836542067,
        -0.015829105256349306,
        -0.2840155429615469,
        0.0004724845739132828,
        0.12874742662047847,
        -0.017369301001807547,
        -0.044088253930794755,
        0.013981027917398282,
        0.008746094047405777,
        -0.004870352993451574,
        -0.00039174037337694705,
        0.0006754494064505693,
        -0.00011747678412476953,
    ],
];

pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveletFamily {
    Daubechies,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    /// Vanishing moments; the filters have `2 * order` taps.
    pub order: usize,
    pub levels: usize,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        WaveletSpec {
            family: WaveletFamily::Daubechies,
            order: 4,
            levels: 4,
        }
    }
}

impl WaveletSpec {
    pub fn daubechies(order: usize, levels: usize) -> Self {
        WaveletSpec {
            family: WaveletFamily::Daubechies,
            order,
            levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order > MAX_ORDER {
            return Err(Error::UnsupportedOrder(self.order));
        }
        if self.levels == 0 {
            return Err(Error::config("wavelet.levels", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    /// Approximation band at the deepest level.
    pub approx: Vec<f64>,
    /// Detail bands, deepest first: `details[0]` is CD_levels, the last is CD1.
    pub details: Vec<Vec<f64>>,
    pub spec: WaveletSpec,
    pub original_length: usize,
}

impl WaveletCoeffs {
    /// Detail band CD`level` (1 = finest).
    pub fn detail(&self, level: usize) -> &[f64] {
        &self.details[self.details.len() - level]
    }

    pub fn detail_mut(&mut self, level: usize) -> &mut Vec<f64> {
        let n = self.details.len();
        &mut self.details[n - level]
    }

    pub fn energy(&self) -> f64 {
        self.approx.iter().chain(self.details.iter().flatten()).map(|v| v * v).sum()
    }
}

/// Signal length at the input of every level: `[n, ceil(n/2), ...]`, one entry per level.
pub fn cascade_lengths(original_length: usize, levels: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(levels);
    let mut n = original_length;
    for _ in 0..levels {
        out.push(n);
        n = n.div_ceil(2);
    }
    out
}

/// Orthonormal analysis pair `(lowpass, highpass)` for Daubechies `order`.
///
/// The highpass is the quadrature mirror `hi[m] = (-1)^m lo[L-1-m]`.
pub fn daubechies_filters(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::UnsupportedOrder(order));
    }
    let lo = DB_LOWPASS[order - 1].to_vec();
    Ok((lo.clone(), quadrature_mirror(&lo)))
}

pub(crate) fn quadrature_mirror(lo: &[f64]) -> Vec<f64> {
    let l = lo.len();
    (0..l)
        .map(|m| if m % 2 == 0 { lo[l - 1 - m] } else { -lo[l - 1 - m] })
        .collect()
}

fn analysis_step(x: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let half = x.len().div_ceil(2);
    let n = 2 * half;
    let taps = lo.len();
    // periodised copy of the (evenly extended) band, long enough for every window
    let mut buf = Vec::with_capacity(n + taps);
    for i in 0..n + taps {
        let j = i % n;
        buf.push(if j < x.len() { x[j] } else { x[x.len() - 1] });
    }
    let mut approx = Vec::with_capacity(half);
    let mut detail = Vec::with_capacity(half);
    for k in 0..half {
        let window = &buf[2 * k..2 * k + taps];
        approx.push(window.iter().zip(lo).map(|(a, b)| a * b).sum());
        detail.push(window.iter().zip(hi).map(|(a, b)| a * b).sum());
    }
    (approx, detail)
}

fn synthesis_step(approx: &[f64], detail: &[f64], lo: &[f64], hi: &[f64], out_len: usize) -> Vec<f64> {
    let n = 2 * approx.len();
    let mut out = vec![0.0; n];
    for (k, (&a, &d)) in approx.iter().zip(detail).enumerate() {
        for (m, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            out[(2 * k + m) % n] += a * l + d * h;
        }
    }
    out.truncate(out_len);
    out
}

pub fn dwt_decompose(signal: &[f64], spec: &WaveletSpec) -> Result<WaveletCoeffs> {
    spec.validate()?;
    let lengths = cascade_lengths(signal.len(), spec.levels);
    if lengths.iter().any(|&n| n < 2) {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            levels: spec.levels,
        });
    }
    let (lo, hi) = daubechies_filters(spec.order)?;
    let mut approx = signal.to_vec();
    let mut details = Vec::with_capacity(spec.levels);
    for _ in 0..spec.levels {
        let (a, d) = analysis_step(&approx, &lo, &hi);
        details.push(d);
        approx = a;
    }
    details.reverse();
    Ok(WaveletCoeffs {
        approx,
        details,
        spec: *spec,
        original_length: signal.len(),
    })
}

pub fn dwt_reconstruct(coeffs: &WaveletCoeffs) -> Result<Vec<f64>> {
    let spec = &coeffs.spec;
    spec.validate()?;
    if coeffs.details.len() != spec.levels {
        return Err(Error::InconsistentCoeffs(format!(
            "{} detail bands for {} levels",
            coeffs.details.len(),
            spec.levels
        )));
    }
    let lengths = cascade_lengths(coeffs.original_length, spec.levels);
    let expected_approx = lengths.last().map_or(0, |n| n.div_ceil(2));
    if coeffs.approx.len() != expected_approx {
        return Err(Error::InconsistentCoeffs(format!(
            "approximation band has {} coefficients, expected {expected_approx}",
            coeffs.approx.len()
        )));
    }
    let (lo, hi) = daubechies_filters(spec.order)?;
    let mut current = coeffs.approx.clone();
    // details are deepest-first, lengths are shallowest-first
    for (detail, &len) in coeffs.details.iter().zip(lengths.iter().rev()) {
        if detail.len() != len.div_ceil(2) {
            return Err(Error::InconsistentCoeffs(format!(
                "detail band has {} coefficients, expected {}",
                detail.len(),
                len.div_ceil(2)
            )));
        }
        current = synthesis_step(&current, detail, &lo, &hi, len);
    }
    Ok(current)
}

/// Reconstructs `signal` with the detail bands listed in `zero_levels`
/// (1 = finest, CD1) replaced by zeros.
pub fn denoise(signal: &[f64], spec: &WaveletSpec, zero_levels: &[usize]) -> Result<Vec<f64>> {
    if let Some(&level) = zero_levels.iter().find(|&&l| l == 0 || l > spec.levels) {
        return Err(Error::ZeroLevelOutOfRange {
            level,
            levels: spec.levels,
        });
    }
    let mut coeffs = dwt_decompose(signal, spec)?;
    for &level in zero_levels {
        coeffs.detail_mut(level).fill(0.0);
    }
    dwt_reconstruct(&coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// One analysis level written straight from the definition with modular indexing.
    fn naive_level(x: &[f64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut ext = x.to_vec();
        if ext.len() % 2 == 1 {
            ext.push(*x.last().unwrap());
        }
        let n = ext.len();
        let mut a = vec![0.0; n / 2];
        let mut d = vec![0.0; n / 2];
        for k in 0..n / 2 {
            for m in 0..lo.len() {
                let v = ext[(2 * k + m) % n];
                a[k] += lo[m] * v;
                d[k] += hi[m] * v;
            }
        }
        (a, d)
    }

    #[test]
    fn haar_closed_form() {
        let (lo, hi) = daubechies_filters(1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!(max_abs_diff(&lo, &[r, r]) < 1e-15);
        assert!(max_abs_diff(&hi, &[r, -r]) < 1e-15);
    }

    #[test]
    fn filters_are_orthonormal() {
        for order in 1..=MAX_ORDER {
            let (lo, hi) = daubechies_filters(order).unwrap();
            assert_eq!(lo.len(), 2 * order);
            let sum: f64 = lo.iter().sum();
            assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12, "db{order} sum {sum}");
            assert!(hi.iter().sum::<f64>().abs() < 1e-12);
            // even shifts of lo are orthonormal; lo and hi are orthogonal at every even shift
            for shift in (0..lo.len()).step_by(2) {
                let auto: f64 = (0..lo.len() - shift).map(|m| lo[m] * lo[m + shift]).sum();
                let want = if shift == 0 { 1.0 } else { 0.0 };
                assert!((auto - want).abs() < 1e-12, "db{order} shift {shift}: {auto}");
            }
            let cross: f64 = lo.iter().zip(&hi).map(|(a, b)| a * b).sum();
            assert!(cross.abs() < 1e-12);
        }
    }

    #[test]
    fn db4_has_eight_unit_energy_taps() {
        let (lo, _) = daubechies_filters(4).unwrap();
        assert_eq!(lo.len(), 8);
        assert!((lo.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        // first taps of the published table
        assert!((lo[0] - 0.2303778133088965).abs() < 1e-15);
        assert!((lo[7] + 0.010597401785069032).abs() < 1e-15);
    }

    #[test]
    fn unsupported_order() {
        assert!(matches!(daubechies_filters(0), Err(Error::UnsupportedOrder(0))));
        assert!(matches!(daubechies_filters(9), Err(Error::UnsupportedOrder(9))));
    }

    #[test]
    fn constant_signal_has_no_detail() {
        for levels in 1..=4 {
            let x = vec![3.25; 100];
            let c = dwt_decompose(&x, &WaveletSpec::daubechies(4, levels)).unwrap();
            for band in &c.details {
                assert!(band.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn matches_naive_oracle_1024_db4() {
        let x = random_signal(1024, 11);
        let spec = WaveletSpec::daubechies(4, 4);
        let c = dwt_decompose(&x, &spec).unwrap();
        let (lo, hi) = daubechies_filters(4).unwrap();
        let mut approx = x.clone();
        let mut details = Vec::new();
        for _ in 0..4 {
            let (a, d) = naive_level(&approx, &lo, &hi);
            details.push(d);
            approx = a;
        }
        details.reverse();
        assert_eq!(
            c.details.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![64, 128, 256, 512]
        );
        assert_eq!(c.approx.len(), 64);
        assert!(max_abs_diff(&c.approx, &approx) < 1e-10);
        for (got, want) in c.details.iter().zip(&details) {
            assert!(max_abs_diff(got, want) < 1e-10);
        }
    }

    #[test]
    fn perfect_reconstruction_1024() {
        let x = random_signal(1024, 3);
        let c = dwt_decompose(&x, &WaveletSpec::default()).unwrap();
        assert!(max_abs_diff(&dwt_reconstruct(&c).unwrap(), &x) < 1e-9);
    }

    #[test]
    fn zero_coefficients_reconstruct_zero() {
        let spec = WaveletSpec::default();
        let mut c = dwt_decompose(&random_signal(300, 1), &spec).unwrap();
        c.approx.fill(0.0);
        c.details.iter_mut().for_each(|d| d.fill(0.0));
        assert!(dwt_reconstruct(&c).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_survives_zeroing_all_details() {
        let x = vec![-0.7; 257];
        let spec = WaveletSpec::default();
        let mut c = dwt_decompose(&x, &spec).unwrap();
        c.details.iter_mut().for_each(|d| d.fill(0.0));
        assert!(max_abs_diff(&dwt_reconstruct(&c).unwrap(), &x) < 1e-9);
    }

    #[test]
    fn too_short_and_inconsistent() {
        let spec = WaveletSpec::daubechies(2, 4);
        assert!(matches!(
            dwt_decompose(&[1.0; 8], &spec),
            Err(Error::SignalTooShort { len: 8, levels: 4 })
        ));
        assert!(dwt_decompose(&[1.0; 9], &spec).is_ok());
        let mut c = dwt_decompose(&random_signal(64, 2), &spec).unwrap();
        c.details[1].pop();
        assert!(matches!(dwt_reconstruct(&c), Err(Error::InconsistentCoeffs(_))));
        c.details.pop();
        assert!(matches!(dwt_reconstruct(&c), Err(Error::InconsistentCoeffs(_))));
    }

    #[test]
    fn denoise_contract() {
        let x = random_signal(600, 5);
        let spec = WaveletSpec::default();
        assert!(max_abs_diff(&denoise(&x, &spec, &[]).unwrap(), &x) < 1e-9);
        let c = vec![1.5; 600];
        assert!(max_abs_diff(&denoise(&c, &spec, &[1, 2]).unwrap(), &c) < 1e-9);
        assert!(matches!(
            denoise(&x, &spec, &[5]),
            Err(Error::ZeroLevelOutOfRange { level: 5, levels: 4 })
        ));
        assert_eq!(denoise(&x, &spec, &[1, 2]).unwrap().len(), 600);
    }

    #[test]
    fn denoise_zeroes_exactly_the_named_bands() {
        let x = random_signal(512, 8);
        let spec = WaveletSpec::default();
        let y = denoise(&x, &spec, &[1, 2]).unwrap();
        let c = dwt_decompose(&y, &spec).unwrap();
        assert!(c.detail(1).iter().all(|v| v.abs() < 1e-9));
        assert!(c.detail(2).iter().all(|v| v.abs() < 1e-9));
        let orig = dwt_decompose(&x, &spec).unwrap();
        assert!(max_abs_diff(c.detail(3), orig.detail(3)) < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reconstruction_all_orders(len in 16usize..700, order in 1usize..=8, levels in 1usize..=4, seed in any::<u64>()) {
            let x = random_signal(len, seed);
            let spec = WaveletSpec::daubechies(order, levels);
            let c = dwt_decompose(&x, &spec).unwrap();
            let lengths = cascade_lengths(len, levels);
            for (band, n) in c.details.iter().zip(lengths.iter().rev()) {
                prop_assert_eq!(band.len(), n.div_ceil(2));
            }
            prop_assert!(max_abs_diff(&dwt_reconstruct(&c).unwrap(), &x) < 1e-9);
        }

        #[test]
        fn decompose_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let x = random_signal(300, seed);
            let y = random_signal(300, seed ^ 0x5555);
            let spec = WaveletSpec::default();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let cm = dwt_decompose(&mix, &spec).unwrap();
            let cx = dwt_decompose(&x, &spec).unwrap();
            let cy = dwt_decompose(&y, &spec).unwrap();
            let combine = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| a * u + b * v).collect() };
            prop_assert!(max_abs_diff(&cm.approx, &combine(&cx.approx, &cy.approx)) < 1e-10);
            for ((m, p), q) in cm.details.iter().zip(&cx.details).zip(&cy.details) {
                prop_assert!(max_abs_diff(m, &combine(p, q)) < 1e-10);
            }
        }

        #[test]
        fn energy_preserved_on_even_cascades(pow in 4u32..11, order in 1usize..=8, seed in any::<u64>()) {
            let x = random_signal(1 << pow, seed);
            let levels = 4.min(pow as usize - 1);
            let c = dwt_decompose(&x, &WaveletSpec::daubechies(order, levels)).unwrap();
            let e: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!(((c.energy() - e) / e).abs() < 1e-8);
        }

        #[test]
        fn energy_includes_odd_extension(len in 5usize..200, seed in any::<u64>()) {
            let len = len | 1;
            let x = random_signal(len, seed);
            let c = dwt_decompose(&x, &WaveletSpec::daubechies(3, 1)).unwrap();
            let last = x[len - 1];
            let e: f64 = x.iter().map(|v| v * v).sum::<f64>() + last * last;
            prop_assert!(((c.energy() - e) / e).abs() < 1e-8);
        }

        #[test]
        fn denoise_is_idempotent(seed in any::<u64>(), quarter in 8usize..175) {
            // zeroed bands must see even lengths, otherwise the odd padding is re-derived
            let x = random_signal(4 * quarter, seed);
            let spec = WaveletSpec::default();
            let once = denoise(&x, &spec, &[1, 2]).unwrap();
            let twice = denoise(&once, &spec, &[1, 2]).unwrap();
            prop_assert!(max_abs_diff(&once, &twice) < 1e-8);
        }
    }
}
