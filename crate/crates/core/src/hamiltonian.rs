//! Storage and controller Hamiltonians.
//!
//! Storage energy is separable, `H(x) = Σ Hᵢ(xᵢ)`, with every `Hᵢ` strictly
//! convex and minimized at `γᵢ`. The plant output is `y = ∇H(x)`, so
//! `xᵢ ≥ γᵢ` is the same as `yᵢ ≥ 0`.

use crate::controller::SystemState;
use crate::error::{check_len, Error, Result};
use crate::graph::BoxBounds;

/// Largest even exponent accepted for power-law storage (`2p` with `p ≤ 4`).
pub const MAX_EXPONENT: u32 = 8;

/// One vertex's storage function.
#[derive(Debug, Clone, PartialEq)]
pub enum StorageForm {
    /// `(w/2)(x − γ)²`
    Quadratic { weight: f64, minimizer: f64 },
    /// `(w/k)(x − γ)^k` for even `k`
    EvenPower {
        weight: f64,
        minimizer: f64,
        exponent: u32,
    },
    /// Bregman distance of `base` about `reference`:
    /// `base(x) − base′(x̄)(x − x̄) − base(x̄)`.
    Bregman {
        base: Box<StorageForm>,
        reference: f64,
    },
}

impl StorageForm {
    pub fn quadratic(weight: f64, minimizer: f64) -> Result<Self> {
        let f = Self::Quadratic { weight, minimizer };
        f.validate()?;
        Ok(f)
    }

    pub fn even_power(weight: f64, minimizer: f64, exponent: u32) -> Result<Self> {
        let f = Self::EvenPower {
            weight,
            minimizer,
            exponent,
        };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Quadratic { weight, minimizer } => {
                if !(weight > 0.0 && weight.is_finite()) || !minimizer.is_finite() {
                    return Err(Error::Config(format!(
                        "quadratic storage needs weight > 0 and finite minimizer (got {weight}, {minimizer})"
                    )));
                }
            }
            Self::EvenPower {
                weight,
                minimizer,
                exponent,
            } => {
                if !(weight > 0.0 && weight.is_finite()) || !minimizer.is_finite() {
                    return Err(Error::Config(format!(
                        "power storage needs weight > 0 and finite minimizer (got {weight}, {minimizer})"
                    )));
                }
                if exponent < 2 || exponent % 2 != 0 || exponent > MAX_EXPONENT {
                    return Err(Error::Config(format!(
                        "storage exponent must be even and in 2..={MAX_EXPONENT}, got {exponent}"
                    )));
                }
            }
            Self::Bregman {
                ref base,
                reference,
            } => {
                base.validate()?;
                if !reference.is_finite() {
                    return Err(Error::Config("Bregman reference must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Self::Quadratic { weight, minimizer } => 0.5 * weight * (x - minimizer).powi(2),
            Self::EvenPower {
                weight,
                minimizer,
                exponent,
            } => weight / f64::from(exponent) * (x - minimizer).powi(exponent as i32),
            Self::Bregman {
                ref base,
                reference,
            } => {
                base.value(x) - base.gradient(reference) * (x - reference) - base.value(reference)
            }
        }
    }

    pub fn gradient(&self, x: f64) -> f64 {
        match *self {
            Self::Quadratic { weight, minimizer } => weight * (x - minimizer),
            Self::EvenPower {
                weight,
                minimizer,
                exponent,
            } => weight * (x - minimizer).powi(exponent as i32 - 1),
            Self::Bregman {
                ref base,
                reference,
            } => base.gradient(x) - base.gradient(reference),
        }
    }

    pub fn minimizer(&self) -> f64 {
        match *self {
            Self::Quadratic { minimizer, .. } | Self::EvenPower { minimizer, .. } => minimizer,
            Self::Bregman { reference, .. } => reference,
        }
    }

    /// Quadratic weight if this form is quadratic (a shifted quadratic is still quadratic).
    pub fn quadratic_weight(&self) -> Option<f64> {
        match self {
            Self::Quadratic { weight, .. } => Some(*weight),
            Self::EvenPower {
                weight, exponent, ..
            } if *exponent == 2 => Some(*weight),
            _ => None,
        }
    }

    /// Re-centres the form on `reference`.
    pub fn bregman_shift(&self, reference: f64) -> Self {
        match *self {
            Self::Quadratic { weight, .. } => Self::Quadratic {
                weight,
                minimizer: reference,
            },
            Self::EvenPower {
                weight,
                minimizer,
                exponent,
            } if reference == minimizer => Self::EvenPower {
                weight,
                minimizer,
                exponent,
            },
            Self::Bregman { ref base, .. } => base.bregman_shift(reference),
            _ => Self::Bregman {
                base: Box::new(self.clone()),
                reference,
            },
        }
    }
}

/// Parameters of cylindrical reservoirs: storage is volume `x = S h`.
#[derive(Debug, Clone, PartialEq)]
pub struct HydraulicParams {
    /// bottom area per vertex (m²)
    pub area: Vec<f64>,
    /// fluid density (kg/m³)
    pub rho: f64,
    /// gravity (m/s²)
    pub g: f64,
    /// reference height per vertex (m)
    pub h_ref: Vec<f64>,
}

impl HydraulicParams {
    pub const DEFAULT_GRAVITY: f64 = 9.81;

    pub fn uniform(n: usize, area: f64, rho: f64) -> Self {
        Self {
            area: vec![area; n],
            rho,
            g: Self::DEFAULT_GRAVITY,
            h_ref: vec![0.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_len("reference heights", self.area.len(), self.h_ref.len())?;
        if !(self.rho > 0.0) || !(self.g > 0.0) || self.area.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(
                "hydraulic parameters need S > 0, rho > 0 and g > 0".into(),
            ));
        }
        if self.h_ref.iter().any(|h| !h.is_finite()) {
            return Err(Error::Config("reference heights must be finite".into()));
        }
        Ok(())
    }
}

/// Separable storage energy `H(x) = Σ Hᵢ(xᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexHamiltonian {
    forms: Vec<StorageForm>,
}

impl VertexHamiltonian {
    pub fn new(forms: Vec<StorageForm>) -> Result<Self> {
        if forms.is_empty() {
            return Err(Error::Config("storage needs at least one vertex".into()));
        }
        for f in &forms {
            f.validate()?;
        }
        Ok(Self { forms })
    }

    pub fn quadratic(weights: &[f64], minimizers: &[f64]) -> Result<Self> {
        check_len("storage minimizers", weights.len(), minimizers.len())?;
        Self::new(
            weights
                .iter()
                .zip(minimizers)
                .map(|(&weight, &minimizer)| StorageForm::Quadratic { weight, minimizer })
                .collect(),
        )
    }

    pub fn uniform_quadratic(n: usize, weight: f64, minimizer: f64) -> Result<Self> {
        Self::quadratic(&vec![weight; n], &vec![minimizer; n])
    }

    /// `Hᵢ = (ρg / 2Sᵢ)(xᵢ − Sᵢh̄ᵢ)²`, so the output is the pressure relative to `h̄`.
    pub fn hydraulic(params: &HydraulicParams) -> Result<Self> {
        params.validate()?;
        Self::new(
            params
                .area
                .iter()
                .zip(&params.h_ref)
                .map(|(&s, &h)| StorageForm::Quadratic {
                    weight: params.rho * params.g / s,
                    minimizer: s * h,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn forms(&self) -> &[StorageForm] {
        &self.forms
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.forms.iter().zip(x).map(|(f, &xi)| f.value(xi)).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.forms
            .iter()
            .zip(x)
            .map(|(f, &xi)| f.gradient(xi))
            .collect()
    }

    /// The lower bounds `γ`.
    pub fn minimizers(&self) -> Vec<f64> {
        self.forms.iter().map(StorageForm::minimizer).collect()
    }

    /// Common quadratic weight, if every vertex is quadratic with the same weight.
    pub fn uniform_weight(&self) -> Option<f64> {
        let w = self.forms[0].quadratic_weight()?;
        self.forms
            .iter()
            .all(|f| f.quadratic_weight() == Some(w))
            .then_some(w)
    }

    pub fn bregman_shift(&self, reference: &[f64]) -> Result<Self> {
        check_len("Bregman reference", self.forms.len(), reference.len())?;
        if reference.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("Bregman reference must be finite".into()));
        }
        Ok(Self {
            forms: self
                .forms
                .iter()
                .zip(reference)
                .map(|(f, &r)| f.bregman_shift(r))
                .collect(),
        })
    }
}

/// Controller energy `H_c(η) = ½ Σ wⱼ ηⱼ²`; unit weights are the standard case.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerHamiltonian {
    weights: Vec<f64>,
}

impl ControllerHamiltonian {
    pub fn standard(m: usize) -> Self {
        Self {
            weights: vec![1.0; m],
        }
    }

    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config(
                "controller Hamiltonian weights must be positive".into(),
            ));
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_standard(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }

    pub fn value(&self, eta: &[f64]) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(eta)
            .map(|(w, e)| w * e * e)
            .sum::<f64>()
    }

    pub fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(eta).map(|(w, e)| w * e).collect()
    }

    /// The state whose gradient is `v`.
    pub fn gradient_inverse(&self, v: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(v).map(|(w, vi)| vi / w).collect()
    }
}

/// `V(x, η) = H(x) + H_c(η)`.
pub fn total_energy(h: &VertexHamiltonian, hc: &ControllerHamiltonian, s: &SystemState) -> f64 {
    h.value(&s.x) + hc.value(&s.eta)
}

/// `V_d̄(x, η) = H(x) + H_c(η) − ∇H_c(η̄)ᵀ(η − η̄) − H_c(η̄)`, the storage
/// function that certifies convergence under a matched disturbance.
#[derive(Debug, Clone)]
pub struct ShiftedStorage<'a> {
    h: &'a VertexHamiltonian,
    hc: &'a ControllerHamiltonian,
    eta_bar: Vec<f64>,
    grad_bar: Vec<f64>,
    hc_bar: f64,
}

impl<'a> ShiftedStorage<'a> {
    pub fn evaluate(&self, s: &SystemState) -> f64 {
        let linear: f64 = self
            .grad_bar
            .iter()
            .zip(s.eta.iter().zip(&self.eta_bar))
            .map(|(g, (e, eb))| g * (e - eb))
            .sum();
        self.h.value(&s.x) + self.hc.value(&s.eta) - linear - self.hc_bar
    }

    pub fn eta_bar(&self) -> &[f64] {
        &self.eta_bar
    }
}

pub fn shifted_storage<'a>(
    h: &'a VertexHamiltonian,
    hc: &'a ControllerHamiltonian,
    eta_bar: &[f64],
) -> Result<ShiftedStorage<'a>> {
    check_len("reference controller state", hc.len(), eta_bar.len())?;
    if eta_bar.iter().any(|e| !e.is_finite()) {
        return Err(Error::Config("reference controller state must be finite".into()));
    }
    Ok(ShiftedStorage {
        h,
        hc,
        eta_bar: eta_bar.to_vec(),
        grad_bar: hc.gradient(eta_bar),
        hc_bar: hc.value(eta_bar),
    })
}

/// Controller energy seen through constant flow bounds:
/// `Φ(η) = Σ ∫₀^ηⱼ clamp(wⱼ s, −μ⁺ⱼ, −μ⁻ⱼ) ds`, so `∇Φ(η) = −sat(−∇H_c(η))`.
///
/// `H + Φ` is nonincreasing along the box-constrained closed loop, which
/// `H + H_c` is not once the bounds are asymmetric. With a reference state
/// `η̄` the energy is shifted like [`ShiftedStorage`].
#[derive(Debug, Clone)]
pub struct SaturatedStorage<'a> {
    h: &'a VertexHamiltonian,
    weights: Vec<f64>,
    /// `(−μ⁺, −μ⁻)` per edge
    clamp: Vec<(f64, f64)>,
    eta_bar: Option<Vec<f64>>,
}

/// `∫₀ᵗ clamp(u, a, b) du`.
fn clamped_integral(t: f64, a: f64, b: f64) -> f64 {
    let p = |u: f64| {
        if u > b {
            b * u - 0.5 * b * b
        } else if u < a {
            a * u - 0.5 * a * a
        } else {
            0.5 * u * u
        }
    };
    p(t) - p(0.0)
}

impl<'a> SaturatedStorage<'a> {
    pub fn new(
        h: &'a VertexHamiltonian,
        hc: &ControllerHamiltonian,
        bounds: &BoxBounds,
        eta_bar: Option<&[f64]>,
    ) -> Result<Self> {
        check_len("flow bounds", hc.len(), bounds.len())?;
        if let Some(e) = eta_bar {
            check_len("reference controller state", hc.len(), e.len())?;
        }
        Ok(Self {
            h,
            weights: hc.weights().to_vec(),
            clamp: bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(&lo, &hi)| (-hi, -lo))
                .collect(),
            eta_bar: eta_bar.map(<[f64]>::to_vec),
        })
    }

    fn phi(&self, eta: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.clamp)
            .zip(eta)
            .map(|((&w, &(a, b)), &e)| clamped_integral(w * e, a, b) / w)
            .sum()
    }

    pub fn evaluate(&self, s: &SystemState) -> f64 {
        let hx = self.h.value(&s.x);
        let Some(bar) = &self.eta_bar else {
            return hx + self.phi(&s.eta);
        };
        let linear: f64 = self
            .weights
            .iter()
            .zip(&self.clamp)
            .zip(s.eta.iter().zip(bar))
            .map(|((&w, &(a, b)), (&e, &eb))| (w * eb).clamp(a, b) * (e - eb))
            .sum();
        hx + self.phi(&s.eta) - linear - self.phi(bar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(x: &[f64], eta: &[f64]) -> SystemState {
        SystemState {
            x: x.to_vec(),
            eta: eta.to_vec(),
        }
    }

    #[test]
    fn hydraulic_gradient_is_pressure() {
        let h = VertexHamiltonian::hydraulic(&HydraulicParams::uniform(1, 1.0, 1.0)).unwrap();
        assert!((h.gradient(&[0.7])[0] - 6.867).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_minimizer() {
        let forms = [
            StorageForm::quadratic(2.0, 0.3).unwrap(),
            StorageForm::even_power(1.5, -1.0, 6).unwrap(),
            StorageForm::even_power(1.0, 0.0, 4).unwrap().bregman_shift(1.0),
        ];
        for f in &forms {
            assert_eq!(f.gradient(f.minimizer()), 0.0);
        }
    }

    #[test]
    fn quartic_gradient() {
        let f = StorageForm::even_power(1.0, 0.0, 4).unwrap();
        assert_eq!(f.gradient(2.0), 8.0);
    }

    #[test]
    fn rejects_bad_forms() {
        assert!(StorageForm::quadratic(0.0, 0.0).is_err());
        assert!(StorageForm::even_power(1.0, 0.0, 3).is_err());
        assert!(StorageForm::even_power(1.0, 0.0, 10).is_err());
        let mut p = HydraulicParams::uniform(2, 1.0, 1.0);
        p.area[1] = 0.0;
        assert!(VertexHamiltonian::hydraulic(&p).is_err());
    }

    #[test]
    fn hydraulic_bregman_shift() {
        let mut p = HydraulicParams::uniform(2, 1.0, 1.0);
        let base = VertexHamiltonian::hydraulic(&p).unwrap();
        let h_bar = [0.25, 1.5];
        let shifted = base.bregman_shift(&h_bar).unwrap();
        p.h_ref = h_bar.to_vec();
        let direct = VertexHamiltonian::hydraulic(&p).unwrap();
        assert_eq!(shifted, direct);
        let x = [0.9, 0.4];
        let y = shifted.gradient(&x);
        assert!((y[0] - 9.81 * (0.9 - 0.25)).abs() < 1e-12);
        assert!((y[1] - 9.81 * (0.4 - 1.5)).abs() < 1e-12);
    }

    #[test]
    fn shift_by_minimizer_is_identity() {
        let h = VertexHamiltonian::new(vec![
            StorageForm::quadratic(2.0, 0.5).unwrap(),
            StorageForm::even_power(1.0, -0.5, 4).unwrap(),
        ])
        .unwrap();
        assert_eq!(h.bregman_shift(&h.minimizers()).unwrap(), h);
    }

    #[test]
    fn quartic_shift_gradient() {
        let f = StorageForm::even_power(1.0, 0.0, 4).unwrap().bregman_shift(1.0);
        for x in [-2.0, 0.0, 0.5, 1.0, 3.0] {
            assert!((f.gradient(x) - (x * x * x - 1.0)).abs() < 1e-12);
        }
        assert_eq!(f.gradient(1.0), 0.0);
        assert_eq!(f.value(1.0), 0.0);
    }

    #[test]
    fn total_energy_examples() {
        let h = VertexHamiltonian::uniform_quadratic(2, 1.0, 0.0).unwrap();
        let hc = ControllerHamiltonian::standard(1);
        assert_eq!(total_energy(&h, &hc, &state(&[0.0, 0.0], &[0.0])), 0.0);
        assert_eq!(total_energy(&h, &hc, &state(&[1.0, 1.0], &[2.0])), 3.0);
    }

    #[test]
    fn shifted_storage_reductions() {
        let h = VertexHamiltonian::uniform_quadratic(2, 1.0, 0.0).unwrap();
        let hc = ControllerHamiltonian::standard(2);
        let s = state(&[0.3, -1.0], &[0.5, 2.0]);
        let zero = shifted_storage(&h, &hc, &[0.0, 0.0]).unwrap();
        assert_eq!(zero.evaluate(&s), total_energy(&h, &hc, &s));
        let at = shifted_storage(&h, &hc, &s.eta).unwrap();
        assert!((at.evaluate(&s) - h.value(&s.x)).abs() < 1e-15);
    }

    fn form_strategy() -> impl Strategy<Value = StorageForm> {
        let quad = (0.1..10.0f64, -2.0..2.0f64)
            .prop_map(|(w, g)| StorageForm::quadratic(w, g).unwrap());
        let pow = (0.1..5.0f64, -2.0..2.0f64, 1u32..=4)
            .prop_map(|(w, g, p)| StorageForm::even_power(w, g, 2 * p).unwrap());
        let breg = (0.1..5.0f64, -1.0..1.0f64, 1u32..=4, -1.0..1.0f64).prop_map(|(w, g, p, r)| {
            StorageForm::even_power(w, g, 2 * p).unwrap().bregman_shift(r)
        });
        prop_oneof![quad, pow, breg]
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(f in form_strategy(), x in -3.0..3.0f64) {
            let step = 1e-6;
            let fd = (f.value(x + step) - f.value(x - step)) / (2.0 * step);
            let g = f.gradient(x);
            prop_assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "fd {fd} vs {g}");
        }

        #[test]
        fn gradient_strictly_increasing(f in form_strategy(), mut pts in prop::collection::vec(-3.0..3.0f64, 2..12)) {
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pts.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            for w in pts.windows(2) {
                prop_assert!(f.gradient(w[0]) < f.gradient(w[1]));
            }
        }

        #[test]
        fn bregman_nonnegative_and_zero_at_reference(f in form_strategy(), r in -2.0..2.0f64, x in -3.0..3.0f64) {
            let b = f.bregman_shift(r);
            prop_assert!(b.value(x) >= -1e-12);
            prop_assert!(b.value(r).abs() <= 1e-12);
            prop_assert!((b.gradient(x) - (f.gradient(x) - f.gradient(r))).abs() <= 1e-9 * (1.0 + f.gradient(x).abs()));
        }

        #[test]
        fn shifted_storage_matches_quadratic_formula(
            w in prop::collection::vec(0.1..5.0f64, 3),
            gamma in prop::collection::vec(-1.0..1.0f64, 3),
            x in prop::collection::vec(-3.0..3.0f64, 3),
            eta in prop::collection::vec(-3.0..3.0f64, 2),
            eta_bar in prop::collection::vec(-3.0..3.0f64, 2),
        ) {
            let h = VertexHamiltonian::quadratic(&w, &gamma).unwrap();
            let hc = ControllerHamiltonian::standard(2);
            let v = shifted_storage(&h, &hc, &eta_bar).unwrap().evaluate(&state(&x, &eta));
            let oracle: f64 = (0..3).map(|i| 0.5 * w[i] * (x[i] - gamma[i]).powi(2)).sum::<f64>()
                + (0..2).map(|j| 0.5 * (eta[j] - eta_bar[j]).powi(2)).sum::<f64>();
            prop_assert!((v - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
            prop_assert!(v >= -1e-12);
        }
    }

    #[test]
    fn saturated_storage_reduces_to_plain_without_bounds() {
        let h = VertexHamiltonian::uniform_quadratic(2, 1.0, 0.0).unwrap();
        let hc = ControllerHamiltonian::weighted(vec![2.0, 0.5]).unwrap();
        let s = state(&[0.3, -1.0], &[0.7, -2.5]);
        let v = SaturatedStorage::new(&h, &hc, &BoxBounds::unbounded(2), None).unwrap();
        assert!((v.evaluate(&s) - total_energy(&h, &hc, &s)).abs() < 1e-12);
    }

    #[test]
    fn saturated_storage_matches_quadrature() {
        // one edge, bounds [0, 1]: the integrand is clamp(s, -1, 0)
        let h = VertexHamiltonian::uniform_quadratic(1, 1.0, 0.0).unwrap();
        let hc = ControllerHamiltonian::standard(1);
        let b = BoxBounds::new(vec![0.0], vec![1.0]).unwrap();
        let v = SaturatedStorage::new(&h, &hc, &b, None).unwrap();
        for &eta in &[-3.0, -0.4, 0.0, 0.8, 2.0] {
            let n = 20_000;
            let ds = eta / n as f64;
            let quad: f64 = (0..n)
                .map(|k| (ds * (k as f64 + 0.5)).clamp(-1.0, 0.0) * ds)
                .sum();
            let got = v.evaluate(&state(&[0.0], &[eta]));
            assert!((got - quad).abs() < 1e-8, "eta {eta}: {got} vs {quad}");
        }
    }
}
