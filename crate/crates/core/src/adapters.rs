//! Adapter variants around a frozen weight `W0 ∈ R^{d×k}`.
//!
//! | variant       | effective weight (pre)     | effective weight (post)    |
//! |---------------|----------------------------|----------------------------|
//! | `lora`        | `W0 + s·BA`                | same (side ignored)        |
//! | `lorma_naive` | `(BA)·W0`                  | `W0·(BA)`                  |
//! | `lorma_pi`    | `I_π(s·BA)·W0`             | `W0·I_π(s·BA)`             |
//! | `lorma_plus`  | `(s·BA + I)·W0`            | `W0·(s·BA + I)`            |
//!
//! with `s = alpha / r`. Pre-side multiplicative factors are `B: d×r`,
//! `A: r×d`; post-side factors are `B: k×r`, `A: r×k`.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{LormaError, Result};
use crate::inflation::{self, InflationKind};
use crate::linalg::{self, numerical_rank, FlopCounter, Matrix};
use crate::rng::RngState;

/// Standard deviation of the Gaussian used for free factor entries.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterVariant {
    Lora,
    LormaNaive,
    LormaPi,
    LormaPlus,
}

impl AdapterVariant {
    pub const ALL: [AdapterVariant; 4] = [
        AdapterVariant::Lora,
        AdapterVariant::LormaNaive,
        AdapterVariant::LormaPi,
        AdapterVariant::LormaPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdapterVariant::Lora => "lora",
            AdapterVariant::LormaNaive => "lorma_naive",
            AdapterVariant::LormaPi => "lorma_pi",
            AdapterVariant::LormaPlus => "lorma_plus",
        }
    }

    pub fn is_multiplicative(self) -> bool {
        self != AdapterVariant::Lora
    }

    pub fn inflation(self) -> InflationKind {
        match self {
            AdapterVariant::LormaPi => InflationKind::Permutation,
            AdapterVariant::LormaPlus => InflationKind::Additive,
            _ => InflationKind::None,
        }
    }

    /// Whether the variant starts from `effective_weight == W0`.
    pub fn has_identity_init(self) -> bool {
        self != AdapterVariant::LormaNaive
    }
}

impl std::str::FromStr for AdapterVariant {
    type Err = LormaError;

    fn from_str(s: &str) -> Result<Self> {
        AdapterVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| LormaError::Config(format!("unknown adapter variant {s:?}")))
    }
}

impl std::fmt::Display for AdapterVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplySide {
    #[default]
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub variant: AdapterVariant,
    #[serde(default)]
    pub side: MultiplySide,
    pub r: usize,
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AdapterConfig {
    pub fn new(variant: AdapterVariant, side: MultiplySide, r: usize, alpha: f64, seed: u64) -> Self {
        Self {
            variant,
            side,
            r,
            alpha,
            seed,
        }
    }

    /// `alpha / r`.
    pub fn scaling(&self) -> f64 {
        self.alpha / self.r as f64
    }

    /// Check the configuration against a `d×k` base weight.
    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.r == 0 {
            return Err(LormaError::Config("rank r must be positive".into()));
        }
        if self.r > d.min(k) {
            return Err(LormaError::Config(format!(
                "rank r = {} exceeds min(d, k) = {}",
                self.r,
                d.min(k)
            )));
        }
        let s = self.scaling();
        if !(self.alpha.is_finite() && self.alpha > 0.0 && s.is_finite() && s > 0.0) {
            return Err(LormaError::Config(format!(
                "alpha = {} must be finite and positive",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Shapes of `(B, A)` for a `d×k` base weight.
    pub fn factor_shapes(&self, d: usize, k: usize) -> ((usize, usize), (usize, usize)) {
        let r = self.r;
        match (self.variant, self.side) {
            (AdapterVariant::Lora, _) => ((d, r), (r, k)),
            (_, MultiplySide::Pre) => ((d, r), (r, d)),
            (_, MultiplySide::Post) => ((k, r), (r, k)),
        }
    }
}

/// Frozen base weight plus trainable factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterState {
    w0: Matrix,
    b: Matrix,
    a: Matrix,
    config: AdapterConfig,
}

impl AdapterState {
    /// Assemble a state, validating every shape against `config`.
    pub fn from_parts(w0: Matrix, b: Matrix, a: Matrix, config: AdapterConfig) -> Result<Self> {
        let (d, k) = w0.shape();
        config.validate(d, k)?;
        let (bs, as_) = config.factor_shapes(d, k);
        if b.shape() != bs || a.shape() != as_ {
            return Err(LormaError::shape(
                "AdapterState",
                format!(
                    "{} {:?} expects B {bs:?}, A {as_:?}; got B {:?}, A {:?}",
                    config.variant,
                    config.side,
                    b.shape(),
                    a.shape()
                ),
            ));
        }
        Ok(Self { w0, b, a, config })
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn variant(&self) -> AdapterVariant {
        self.config.variant
    }

    pub fn side(&self) -> MultiplySide {
        self.config.side
    }

    pub fn scaling(&self) -> f64 {
        self.config.scaling()
    }

    /// Replace the trainable factors; shapes must not change.
    pub fn with_factors(&self, b: Matrix, a: Matrix) -> Result<Self> {
        if b.shape() != self.b.shape() || a.shape() != self.a.shape() {
            return Err(LormaError::shape(
                "with_factors",
                format!(
                    "expected B {:?}, A {:?}; got B {:?}, A {:?}",
                    self.b.shape(),
                    self.a.shape(),
                    b.shape(),
                    a.shape()
                ),
            ));
        }
        Ok(Self {
            w0: self.w0.clone(),
            b,
            a,
            config: self.config.clone(),
        })
    }

    pub(crate) fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.b, &mut self.a)
    }

    /// `B·A`, scaled by `s` for every variant except `lorma_naive`.
    pub fn scaled_product(&self) -> Result<Matrix> {
        self.scaled_product_with(None)
    }

    pub(crate) fn scaled_product_with(&self, counter: Option<&FlopCounter>) -> Result<Matrix> {
        let ba = self.b.matmul_with(&self.a, counter)?;
        match self.variant() {
            AdapterVariant::LormaNaive => Ok(ba),
            _ => ba.scale_with(self.scaling(), counter),
        }
    }

    /// The square matrix multiplying `W0` (`I(s·BA)`), or `None` for LoRA.
    pub fn multiplier(&self) -> Result<Option<Matrix>> {
        if !self.variant().is_multiplicative() {
            return Ok(None);
        }
        let p = self.scaled_product()?;
        Ok(Some(inflation::apply(self.variant().inflation(), &p)?))
    }
}

/// Initialize factors so that, except for `lorma_naive`, the adapter
/// starts as the identity map on `W0`.
///
/// * `lora`: `B = 0`, `A ~ U(−1/√k, 1/√k)`
/// * `lorma_plus`: `B = 0`, `A ~ N(0, 0.02²)`
/// * `lorma_pi`: `B[:,0] = 1/s`, other entries of `B ~ N(0, 0.02²)`;
///   `A[0,:] = e_1ᵀ`, other rows zero
/// * `lorma_naive`: `B, A ~ N(0, 0.02²)`
pub fn init_adapter(w0: &Matrix, config: &AdapterConfig) -> Result<AdapterState> {
    let (d, k) = w0.shape();
    config.validate(d, k)?;
    if config.variant == AdapterVariant::Lora && config.side == MultiplySide::Post {
        warn!("lora is additive; multiply side 'post' is ignored");
    }
    let ((br, bc), (ar, ac)) = config.factor_shapes(d, k);
    let mut rng = RngState::new(config.seed);
    let s = config.scaling();
    let (b, a) = match config.variant {
        AdapterVariant::Lora => {
            let bound = 1.0 / (k as f64).sqrt();
            let a = rng.uniform_matrix(ar, ac, -bound, bound);
            (Matrix::zeros(br, bc), a)
        }
        AdapterVariant::LormaPlus => {
            let a = rng.gaussian_matrix(ar, ac, INIT_STD);
            (Matrix::zeros(br, bc), a)
        }
        AdapterVariant::LormaPi => {
            let b = Matrix::from_fn(br, bc, |_, j| {
                if j == 0 {
                    1.0 / s
                } else {
                    INIT_STD * rng.gaussian()
                }
            });
            let a = Matrix::from_fn(ar, ac, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
            (b, a)
        }
        AdapterVariant::LormaNaive => {
            let b = rng.gaussian_matrix(br, bc, INIT_STD);
            let a = rng.gaussian_matrix(ar, ac, INIT_STD);
            (b, a)
        }
    };
    AdapterState::from_parts(w0.clone(), b, a, config.clone())
}

/// Adapter output for a `k×batch` input.
pub fn forward(state: &AdapterState, x: &Matrix) -> Result<Matrix> {
    forward_impl(state, x, None)
}

/// [`forward`] with every kernel recorded on `counter`.
pub fn forward_counted(state: &AdapterState, x: &Matrix, counter: &FlopCounter) -> Result<Matrix> {
    forward_impl(state, x, Some(counter))
}

fn forward_impl(state: &AdapterState, x: &Matrix, c: Option<&FlopCounter>) -> Result<Matrix> {
    let (d, k) = state.w0.shape();
    if x.rows() != k {
        return Err(LormaError::shape(
            "forward",
            format!("input has {} rows, W0 is {d}x{k}", x.rows()),
        ));
    }
    let s = state.scaling();
    let (w0, b, a) = (&state.w0, &state.b, &state.a);
    match (state.variant(), state.side()) {
        (AdapterVariant::Lora, _) => {
            let base = w0.matmul_with(x, c)?;
            let low = b.matmul_with(&a.matmul_with(x, c)?, c)?;
            base.add_with(&low.scale_with(s, c)?, c)
        }
        (AdapterVariant::LormaNaive, MultiplySide::Pre) => {
            let u = w0.matmul_with(x, c)?;
            b.matmul_with(&a.matmul_with(&u, c)?, c)
        }
        (AdapterVariant::LormaNaive, MultiplySide::Post) => {
            let v = b.matmul_with(&a.matmul_with(x, c)?, c)?;
            w0.matmul_with(&v, c)
        }
        (AdapterVariant::LormaPlus, MultiplySide::Pre) => {
            let u = w0.matmul_with(x, c)?;
            let low = b.matmul_with(&a.matmul_with(&u, c)?, c)?;
            u.add_with(&low.scale_with(s, c)?, c)
        }
        (AdapterVariant::LormaPlus, MultiplySide::Post) => {
            let low = b.matmul_with(&a.matmul_with(x, c)?, c)?;
            let v = x.add_with(&low.scale_with(s, c)?, c)?;
            w0.matmul_with(&v, c)
        }
        (AdapterVariant::LormaPi, side) => {
            // BA is formed explicitly because the rearrangement acts on it.
            let m = inflation::inflate_pi(&state.scaled_product_with(c)?)?;
            match side {
                MultiplySide::Pre => m.matmul_with(&w0.matmul_with(x, c)?, c),
                MultiplySide::Post => w0.matmul_with(&m.matmul_with(x, c)?, c),
            }
        }
    }
}

/// The single `d×k` matrix equal to the adapted layer.
pub fn effective_weight(state: &AdapterState) -> Result<Matrix> {
    let w0 = &state.w0;
    match state.multiplier()? {
        None => w0.add(&state.scaled_product()?),
        Some(m) => match state.side() {
            MultiplySide::Pre => m.matmul(w0),
            MultiplySide::Post => w0.matmul(&m),
        },
    }
}

/// `effective_weight − W0`.
///
/// Evaluated in factored form (`s·BA`, `(I(s·BA) − I)·W0`, …) so that a
/// low-rank update is not polluted by cancellation against `W0`.
pub fn delta_w(state: &AdapterState) -> Result<Matrix> {
    let w0 = &state.w0;
    let side = state.side();
    let apply = |m: &Matrix| match side {
        MultiplySide::Pre => m.matmul(w0),
        MultiplySide::Post => w0.matmul(m),
    };
    match state.variant() {
        AdapterVariant::Lora => state.scaled_product(),
        AdapterVariant::LormaPlus => apply(&state.scaled_product()?),
        AdapterVariant::LormaPi => {
            let m = inflation::inflate_pi(&state.scaled_product()?)?;
            apply(&m.add_scaled_identity(-1.0)?)
        }
        AdapterVariant::LormaNaive => effective_weight(state)?.sub(w0),
    }
}

/// Merged weight plus whether the adapter can be removed again without a
/// stored copy of `W0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedWeight {
    pub weight: Matrix,
    /// LoRA is always reversible (subtract `s·BA`); multiplicative
    /// variants are reversible iff the multiplier has full rank.
    pub invertible: bool,
    /// Numerical rank of the multiplier; `None` for LoRA.
    pub multiplier_rank: Option<usize>,
}

pub fn merge(state: &AdapterState) -> Result<MergedWeight> {
    let weight = effective_weight(state)?;
    match state.multiplier()? {
        None => Ok(MergedWeight {
            weight,
            invertible: true,
            multiplier_rank: None,
        }),
        Some(m) => {
            let rank = numerical_rank(&m)?;
            Ok(MergedWeight {
                weight,
                invertible: rank == m.rows(),
                multiplier_rank: Some(rank),
            })
        }
    }
}

const SIDECAR: &str = "adapter.json";

/// Write `w0.lrma`, `b.lrma`, `a.lrma` and the `adapter.json` sidecar.
pub fn save_adapter(state: &AdapterState, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    linalg::io::write_snapshot(&state.w0, dir.join("w0.lrma"))?;
    linalg::io::write_snapshot(&state.b, dir.join("b.lrma"))?;
    linalg::io::write_snapshot(&state.a, dir.join("a.lrma"))?;
    let json = serde_json::to_string_pretty(&state.config)
        .map_err(|e| LormaError::Io(e.to_string()))?;
    std::fs::write(dir.join(SIDECAR), json + "\n")?;
    Ok(())
}

pub fn load_adapter(dir: impl AsRef<Path>) -> Result<AdapterState> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join(SIDECAR))?;
    let config: AdapterConfig = serde_json::from_str(&text).map_err(|e| LormaError::Format {
        offset: 0,
        detail: format!("{SIDECAR}: {e}"),
    })?;
    let w0 = linalg::io::read_snapshot(dir.join("w0.lrma"))?;
    let b = linalg::io::read_snapshot(dir.join("b.lrma"))?;
    let a = linalg::io::read_snapshot(dir.join("a.lrma"))?;
    AdapterState::from_parts(w0, b, a, config)
}
