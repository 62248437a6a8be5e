//! Synthetic regression tasks: recover a hidden target weight `W*` from
//! pairs `(x, y = W*·x + noise)` starting from a frozen `W0`.

use serde::{Deserialize, Serialize};

use crate::error::{LormaError, Result};
use crate::linalg::{numerical_rank, Matrix};
use crate::rng::RngState;

const MAX_W0_ATTEMPTS: usize = 100;
/// Tokens per sequence for `tiny_attention` inputs.
const ATTENTION_SEQ_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Isotropic Gaussian inputs.
    TargetRecovery,
    /// Inputs are softmax-attention-pooled token embeddings, as seen by a
    /// value projection inside a single attention head.
    TinyAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetKind {
    /// `W* = W0 + U·V` with `U: d×rank`, `V: rank×k`.
    LowRankDelta { rank: usize },
    /// `W*` drawn independently of `W0`.
    DenseRandom,
    /// `W* = P·D·W0`: `P` a product of `swaps` disjoint random
    /// transpositions and `D = diag(1 + U(−spread, spread))`.
    PermutedScaled {
        #[serde(default = "default_swaps")]
        swaps: usize,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_swaps() -> usize {
    2
}
fn default_spread() -> f64 {
    0.1
}

impl TargetKind {
    pub fn permuted_scaled() -> Self {
        TargetKind::PermutedScaled {
            swaps: default_swaps(),
            spread: default_spread(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub d: usize,
    pub k: usize,
    pub target: TargetKind,
    pub n_train: usize,
    #[serde(default)]
    pub noise_std: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LormaError::Config(m));
        if self.d == 0 || self.k == 0 || self.n_train == 0 {
            return bad(format!(
                "task dims must be positive (d={}, k={}, n_train={})",
                self.d, self.k, self.n_train
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std {} must be >= 0", self.noise_std));
        }
        match self.target {
            TargetKind::LowRankDelta { rank } if rank == 0 || rank > self.d.min(self.k) => {
                bad(format!("low_rank_delta rank {rank} outside 1..={}", self.d.min(self.k)))
            }
            TargetKind::PermutedScaled { swaps, spread }
                if 2 * swaps > self.d || !(0.0..1.0).contains(&spread) =>
            {
                bad(format!(
                    "permuted_scaled needs 2·swaps <= d and spread in [0, 1) (swaps={swaps}, spread={spread})"
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Generated dataset. `x` is `k×n`, `y` is `d×n`, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    pub w0: Matrix,
    pub w_star: Matrix,
    pub x: Matrix,
    pub y: Matrix,
}

impl Task {
    pub fn n(&self) -> usize {
        self.x.cols()
    }
}

/// Build a task; everything is a function of `spec` and `seed`.
pub fn make_task(spec: &TaskSpec, seed: u64) -> Result<Task> {
    spec.validate()?;
    let (d, k, n) = (spec.d, spec.k, spec.n_train);
    let mut rng = RngState::new(seed);
    let w_std = 1.0 / (k as f64).sqrt();

    let mut w0 = None;
    for _ in 0..MAX_W0_ATTEMPTS {
        let cand = rng.gaussian_matrix(d, k, w_std);
        if numerical_rank(&cand)? == d.min(k) {
            w0 = Some(cand);
            break;
        }
    }
    let w0 = w0.ok_or_else(|| LormaError::NumericalFailure {
        op: "make_task",
        detail: format!("no full-rank W0 in {MAX_W0_ATTEMPTS} draws"),
    })?;

    let w_star = match spec.target {
        TargetKind::LowRankDelta { rank } => {
            let c = 0.5 / ((k * rank) as f64).sqrt();
            let u = rng.gaussian_matrix(d, rank, 1.0);
            let v = rng.gaussian_matrix(rank, k, 1.0);
            w0.add(&u.matmul(&v)?.scale(c)?)?
        }
        TargetKind::DenseRandom => rng.gaussian_matrix(d, k, w_std),
        TargetKind::PermutedScaled { swaps, spread } => {
            let order = rng.permutation(d);
            let mut perm: Vec<usize> = (0..d).collect();
            for pair in order[..2 * swaps].chunks_exact(2) {
                perm.swap(pair[0], pair[1]);
            }
            let diag: Vec<f64> = (0..d)
                .map(|_| 1.0 + rng.uniform_range(-spread, spread))
                .collect();
            // (P·D·W0)[i, :] = diag[perm[i]] · W0[perm[i], :]
            Matrix::from_fn(d, k, |i, j| diag[perm[i]] * w0.get(perm[i], j))
        }
    };

    let x = match spec.kind {
        TaskKind::TargetRecovery => rng.gaussian_matrix(k, n, 1.0),
        TaskKind::TinyAttention => attention_inputs(&mut rng, k, n)?,
    };
    let clean = w_star.matmul(&x)?;
    let y = if spec.noise_std > 0.0 {
        let noise = rng.gaussian_matrix(d, n, spec.noise_std);
        clean.add(&noise)?
    } else {
        clean
    };
    Ok(Task {
        spec: spec.clone(),
        w0,
        w_star,
        x,
        y,
    })
}

/// Each column is `Σ_j softmax(qᵀ Wqk e_j / √k) · e_j` over a random
/// sequence of token embeddings, with the first token as the query.
fn attention_inputs(rng: &mut RngState, k: usize, n: usize) -> Result<Matrix> {
    let vocab = (4 * k).max(16);
    let emb = rng.gaussian_matrix(k, vocab, 1.0);
    let wqk = rng.gaussian_matrix(k, k, 1.0 / (k as f64).sqrt());
    let mut cols = Vec::with_capacity(n);
    for _ in 0..n {
        let toks: Vec<usize> = (0..ATTENTION_SEQ_LEN).map(|_| rng.below(vocab)).collect();
        let q = emb.column(toks[0]);
        let qk: Vec<f64> = (0..k)
            .map(|c| (0..k).map(|r| q[r] * wqk.get(r, c)).sum())
            .collect();
        let scores: Vec<f64> = toks
            .iter()
            .map(|&t| (0..k).map(|r| qk[r] * emb.get(r, t)).sum::<f64>() / (k as f64).sqrt())
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        let pooled: Vec<f64> = (0..k)
            .map(|r| toks.iter().zip(&w).map(|(&t, wi)| wi / z * emb.get(r, t)).sum())
            .collect();
        cols.push(pooled);
    }
    Ok(Matrix::from_fn(k, n, |r, c| cols[c][r]))
}
