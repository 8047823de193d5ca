//! Plane-strain linear elasticity and von Mises deformation plasticity with
//! linear isotropic hardening.
//!
//! All quantities are SI (Pa, m). Tensors carry the out-of-plane `zz` slot
//! explicitly; the single `xy` slot stands for both off-diagonal entries, so
//! the double contraction is `xx^2 + yy^2 + zz^2 + 2 xy^2`.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Effective stress below `FLOW_GUARD * sigma_y0` leaves the flow direction undefined.
pub const FLOW_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialParam {
    Lambda,
    Mu,
    SigmaY0,
    Hp,
}

impl MaterialParam {
    pub const ALL: [MaterialParam; 4] = [Self::Lambda, Self::Mu, Self::SigmaY0, Self::Hp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::Mu => "mu",
            Self::SigmaY0 => "sigma_y0",
            Self::Hp => "hp",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub lambda: f64,
    pub mu: f64,
    pub sigma_y0: f64,
    pub hp: f64,
    /// Indexed by [`MaterialParam::index`].
    pub trainable: [bool; 4],
}

impl MaterialParams {
    pub fn new(lambda: f64, mu: f64, sigma_y0: f64, hp: f64) -> Self {
        Self {
            lambda,
            mu,
            sigma_y0,
            hp,
            trainable: [false; 4],
        }
    }

    /// Aluminium-like constants of the indentation benchmark: E = 70 GPa,
    /// nu = 0.3, sigma_y0 = 0.1 GPa, Hp = 0.5 GPa.
    pub fn benchmark() -> Self {
        let (lambda, mu) = lame_from_engineering(70e9, 0.3).expect("valid constants");
        Self::new(lambda, mu, 0.1e9, 0.5e9)
    }

    pub fn get(&self, p: MaterialParam) -> f64 {
        match p {
            MaterialParam::Lambda => self.lambda,
            MaterialParam::Mu => self.mu,
            MaterialParam::SigmaY0 => self.sigma_y0,
            MaterialParam::Hp => self.hp,
        }
    }

    pub fn set(&mut self, p: MaterialParam, value: f64) {
        match p {
            MaterialParam::Lambda => self.lambda = value,
            MaterialParam::Mu => self.mu = value,
            MaterialParam::SigmaY0 => self.sigma_y0 = value,
            MaterialParam::Hp => self.hp = value,
        }
    }

    pub fn is_trainable(&self, p: MaterialParam) -> bool {
        self.trainable[p.index()]
    }

    pub fn bulk_modulus(&self) -> f64 {
        self.lambda + 2.0 * self.mu / 3.0
    }

    pub fn poisson_ratio(&self) -> f64 {
        self.lambda / (2.0 * (self.lambda + self.mu))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.bulk_modulus() > 0.0
            && self.sigma_y0 > 0.0
            && self.hp >= 0.0
            && [self.lambda, self.mu, self.sigma_y0, self.hp]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "inadmissible material: lambda={} mu={} sigma_y0={} hp={}",
                self.lambda, self.mu, self.sigma_y0, self.hp
            )))
        }
    }
}

/// Symmetric tensor with in-plane components and the out-of-plane `zz`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tensor2D {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
}

impl Tensor2D {
    pub const ZERO: Self = Self {
        xx: 0.0,
        yy: 0.0,
        zz: 0.0,
        xy: 0.0,
    };

    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64) -> Self {
        Self { xx, yy, zz, xy }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 1.0, 1.0, 0.0)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    /// `a_ij a_ij` with the off-diagonal slot counted twice.
    pub fn ddot(&self, other: &Self) -> f64 {
        self.xx * other.xx + self.yy * other.yy + self.zz * other.zz + 2.0 * self.xy * other.xy
    }

    pub fn components(&self) -> [f64; 4] {
        [self.xx, self.yy, self.zz, self.xy]
    }
}

impl Add for Tensor2D {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.xx + o.xx,
            self.yy + o.yy,
            self.zz + o.zz,
            self.xy + o.xy,
        )
    }
}

impl Sub for Tensor2D {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(
            self.xx - o.xx,
            self.yy - o.yy,
            self.zz - o.zz,
            self.xy - o.xy,
        )
    }
}

impl Mul<Tensor2D> for f64 {
    type Output = Tensor2D;
    fn mul(self, t: Tensor2D) -> Tensor2D {
        Tensor2D::new(self * t.xx, self * t.yy, self * t.zz, self * t.xy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlasticState {
    /// Equivalent deviatoric strain.
    pub ebar: f64,
    /// Equivalent plastic strain.
    pub ebar_p: f64,
    /// Plastic strain (deviatoric).
    pub ep: Tensor2D,
}

impl PlasticState {
    pub fn elastic() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressResponse {
    pub sigma: Tensor2D,
    /// Pressure `-sigma_kk / 3`.
    pub p: f64,
    pub s: Tensor2D,
    pub sigma_e: f64,
    /// `sigma_zz - nu (sigma_xx + sigma_yy)`, reported when there is no
    /// plastic strain.
    pub elastic_szz_gap: Option<f64>,
}

/// Lame constants from Young's modulus and Poisson's ratio.
pub fn lame_from_engineering(young: f64, nu: f64) -> Result<(f64, f64)> {
    if !(young > 0.0) {
        return Err(Error::invalid(format!(
            "Young's modulus must be positive, got {young}"
        )));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(Error::invalid(format!(
            "Poisson's ratio must lie in (-1, 0.5), got {nu}"
        )));
    }
    let lambda = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = young / (2.0 * (1.0 + nu));
    Ok((lambda, mu))
}

/// Small-strain tensor from the displacement gradient, with `eps_zz = 0`.
pub fn strain_from_gradients(dux_dx: f64, dux_dy: f64, duy_dx: f64, duy_dy: f64) -> Tensor2D {
    Tensor2D::new(dux_dx, duy_dy, 0.0, 0.5 * (dux_dy + duy_dx))
}

/// Returns the deviatoric part and the trace.
pub fn split_deviatoric(strain: &Tensor2D) -> (Tensor2D, f64) {
    let tr = strain.trace();
    (*strain - (tr / 3.0) * Tensor2D::identity(), tr)
}

/// `sqrt(2/3 e_ij e_ij)`.
pub fn effective_strain(e: &Tensor2D) -> f64 {
    (2.0 / 3.0 * e.ddot(e)).sqrt()
}

/// `max(0, (3 mu ebar - sigma_y0) / (3 mu + Hp))`.
pub fn equivalent_plastic_strain(ebar: f64, params: &MaterialParams) -> f64 {
    ((3.0 * params.mu * ebar - params.sigma_y0) / (3.0 * params.mu + params.hp)).max(0.0)
}

/// `sqrt(3 J2)` with `J2 = s_ij s_ij / 2`.
pub fn effective_stress(s: &Tensor2D) -> f64 {
    (1.5 * s.ddot(s)).sqrt()
}

pub fn stress_response(
    strain: &Tensor2D,
    plastic: &PlasticState,
    params: &MaterialParams,
) -> StressResponse {
    let (e, tr) = split_deviatoric(strain);
    let p = -params.bulk_modulus() * tr;
    let s = 2.0 * params.mu * (e - plastic.ep);
    let sigma = s - p * Tensor2D::identity();
    let elastic = plastic.ep == Tensor2D::ZERO;
    StressResponse {
        sigma,
        p,
        s,
        sigma_e: effective_stress(&s),
        elastic_szz_gap: elastic.then(|| sigma.zz - params.poisson_ratio() * (sigma.xx + sigma.yy)),
    }
}

/// Plastic strain along the flow direction, `3 s / (2 sigma_e) * ebar_p`.
pub fn plastic_strain_tensor(
    s: &Tensor2D,
    sigma_e: f64,
    ebar_p: f64,
    params: &MaterialParams,
) -> Result<Tensor2D> {
    if ebar_p == 0.0 {
        return Ok(Tensor2D::ZERO);
    }
    if !(sigma_e >= FLOW_GUARD * params.sigma_y0) {
        return Err(Error::DegenerateFlowDirection { sigma_e, ebar_p });
    }
    Ok((1.5 * ebar_p / sigma_e) * *s)
}

/// `F = sigma_e - (sigma_y0 + Hp ebar_p)`.
pub fn yield_value(sigma_e: f64, ebar_p: f64, params: &MaterialParams) -> f64 {
    sigma_e - (params.sigma_y0 + params.hp * ebar_p)
}

/// Deformation-theory plastic state of a total strain. The plastic strain is
/// coaxial with the deviatoric strain, `e^p = (ebar_p / ebar) e`, which is the
/// unique solution of the flow rule together with `s = 2 mu (e - e^p)` and the
/// yield condition.
pub fn deformation_plastic_state(strain: &Tensor2D, params: &MaterialParams) -> PlasticState {
    let (e, _) = split_deviatoric(strain);
    let ebar = effective_strain(&e);
    let ebar_p = equivalent_plastic_strain(ebar, params);
    let ep = if ebar_p > 0.0 {
        (ebar_p / ebar) * e
    } else {
        Tensor2D::ZERO
    };
    PlasticState { ebar, ebar_p, ep }
}
