use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul_raw, rng_stream, Linear, Mlp, ParamId, ParamStore, Tape, Var};
use crate::systems::Trajectory;

pub const CODEWORD_DIM: usize = 32;
pub const HIDDEN_DIM: usize = 64;
const STD_FLOOR: f64 = 1e-3;

/// What kind of observations the model ingests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystemKind {
    Continuous {
        dim: usize,
    },
    /// Discrete states factored into per-locus blocks; inputs are the
    /// concatenated one-hot encodings of each block.
    Discrete {
        space: usize,
        blocks: Vec<usize>,
    },
}

impl SystemKind {
    pub fn feature_dim(&self) -> usize {
        match self {
            SystemKind::Continuous { dim } => *dim,
            SystemKind::Discrete { blocks, .. } => blocks.iter().sum(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SystemKind::Continuous { dim } => *dim,
            SystemKind::Discrete { space, .. } => *space,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, SystemKind::Discrete { .. })
    }

    /// One-hot featurization of a discrete state index.
    pub fn featurize_discrete_into(&self, index: usize, out: &mut [f64]) {
        let SystemKind::Discrete { blocks, .. } = self else {
            panic!("featurize_discrete_into on continuous system");
        };
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut rem = index;
        // Mixed-radix decomposition, least significant block last.
        for (bi, &b) in blocks.iter().enumerate().rev() {
            let digit = rem % b;
            rem /= b;
            let offset: usize = blocks[..bi].iter().sum();
            out[offset + digit] = 1.0;
        }
    }

    /// Flatten a batch of trajectory states (by `(traj, t)` pairs) into a
    /// row-major feature matrix.
    pub fn featurize_batch(&self, trajs: &[Trajectory], pairs: &[(usize, usize)]) -> Vec<f64> {
        let f = self.feature_dim();
        let mut out = vec![0.0; pairs.len() * f];
        for (row, &(ti, t)) in pairs.iter().enumerate() {
            let dst = &mut out[row * f..(row + 1) * f];
            match self {
                SystemKind::Continuous { .. } => dst.copy_from_slice(trajs[ti].state(t)),
                SystemKind::Discrete { .. } => {
                    self.featurize_discrete_into(trajs[ti].index(t), dst)
                }
            }
        }
        out
    }
}

/// Decoder output distribution.
#[derive(Debug, Clone)]
pub enum DecoderHead {
    /// Per-dimension Gaussian with a learned mean and a sigmoid-bounded
    /// standard deviation in `[1e-3, 1]`.
    Gaussian { mu: Linear, std: Linear },
    /// Logits over the discrete state space.
    Categorical { logits: Linear },
}

/// Encoder, codebook and decoder parameter handles. The tensors
/// themselves live in a shared [`ParamStore`].
#[derive(Debug, Clone)]
pub struct CodebookModel {
    pub kind: SystemKind,
    pub k: usize,
    pub encoder: Mlp,
    pub trunk: Vec<Linear>,
    pub head: DecoderHead,
    pub codebook: ParamId,
}

impl CodebookModel {
    /// Register all stage-1 parameters. The codebook starts as zeros and
    /// is initialized from encoded data by `stage1_train`.
    pub fn init(store: &mut ParamStore, kind: SystemKind, k: usize, seed: u64) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("codebook size must be >= 1".into()));
        }
        let mut rng = rng_stream(seed, "codebook-init", 0);
        let f = kind.feature_dim();
        let encoder = Mlp::new(store, "encoder", &[f, HIDDEN_DIM, CODEWORD_DIM], &mut rng);
        let trunk = vec![
            Linear::new(store, "decoder.fc0", CODEWORD_DIM, HIDDEN_DIM, &mut rng),
            Linear::new(store, "decoder.fc1", HIDDEN_DIM, HIDDEN_DIM, &mut rng),
        ];
        let head = match &kind {
            SystemKind::Continuous { dim } => DecoderHead::Gaussian {
                mu: Linear::new(store, "decoder.mu", HIDDEN_DIM, *dim, &mut rng),
                std: Linear::new(store, "decoder.std", HIDDEN_DIM, *dim, &mut rng),
            },
            SystemKind::Discrete { space, .. } => DecoderHead::Categorical {
                logits: Linear::new(store, "decoder.logits", HIDDEN_DIM, *space, &mut rng),
            },
        };
        let codebook = store.register(
            "codebook",
            crate::numerics::Tensor::zeros(k, CODEWORD_DIM),
        );
        Ok(Self {
            kind,
            k,
            encoder,
            trunk,
            head,
            codebook,
        })
    }

    pub fn stage1_params(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.params();
        for l in &self.trunk {
            ids.extend(l.params());
        }
        match &self.head {
            DecoderHead::Gaussian { mu, std } => {
                ids.extend(mu.params());
                ids.extend(std.params());
            }
            DecoderHead::Categorical { logits } => ids.extend(logits.params()),
        }
        ids.push(self.codebook);
        ids
    }

    /// Encoder forward on the tape.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, f) = tape.shape(x);
        if f != self.kind.feature_dim() {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: vec![1, self.kind.feature_dim()],
                rhs: vec![1, f],
            });
        }
        self.encoder.forward(tape, store, x)
    }

    /// Decoder trunk (tanh after both layers), shared by the heads.
    pub fn decode_trunk(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let mut h = z;
        for l in &self.trunk {
            h = l.forward(tape, store, h)?;
            h = tape.tanh(h)?;
        }
        Ok(h)
    }

    /// Gaussian head: `(mu, std)` with std in `[1e-3, 1]`.
    pub fn decode_gaussian(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
    ) -> Result<(Var, Var)> {
        let DecoderHead::Gaussian { mu, std } = &self.head else {
            return Err(Error::Config("gaussian head on discrete system".into()));
        };
        let m = mu.forward(tape, store, h)?;
        let z = std.forward(tape, store, h)?;
        let sg = tape.sigmoid(z)?;
        let scaled = tape.mul_scalar(sg, 1.0 - STD_FLOOR)?;
        let s = tape.add_scalar(scaled, STD_FLOOR)?;
        Ok((m, s))
    }

    /// Categorical head: logits over the discrete space.
    pub fn decode_logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let DecoderHead::Categorical { logits } = &self.head else {
            return Err(Error::Config("categorical head on continuous system".into()));
        };
        logits.forward(tape, store, h)
    }

    /// Fast tape-free encoder pass for bulk assignment work.
    pub fn encode_raw(&self, store: &ParamStore, features: &[f64], n: usize) -> Vec<f64> {
        let f = self.kind.feature_dim();
        debug_assert_eq!(features.len(), n * f);
        let mut h = features.to_vec();
        let mut width = f;
        let last = self.encoder.layers.len() - 1;
        for (li, layer) in self.encoder.layers.iter().enumerate() {
            let w = store.get(layer.weight);
            let b = store.get(layer.bias);
            let mut y = matmul_raw(&h, &w.data, n, width, layer.out_dim);
            for row in 0..n {
                for c in 0..layer.out_dim {
                    y[row * layer.out_dim + c] += b.data[c];
                }
            }
            if li != last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = y;
            width = layer.out_dim;
        }
        h
    }

    pub fn codeword_data<'a>(&self, store: &'a ParamStore) -> &'a [f64] {
        &store.get(self.codebook).data
    }
}
