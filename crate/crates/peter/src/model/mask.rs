//! Attention masking. Both modes allow each position to attend to itself
//! and everything before it; peter masking opens exactly one extra cell so
//! the user at position 1 also sees the item at position 2.

use crate::autodiff::{Tensor, MASK_NEG};

use super::{MaskMode, ModelError};

/// Additive |S|×|S| mask of {0, MASK_NEG}; row = query position, column =
/// key position.
#[derive(Debug, Clone)]
pub struct AttentionMask {
    seq_len: usize,
    tensor: Tensor,
}

/// Build the additive mask for a sequence of `seq_len` positions.
/// Left-to-right allows (a, b) iff b ≤ a; peter additionally allows
/// (1, 2) in 1-based positions and therefore needs `seq_len >= 2`.
pub fn build_mask(seq_len: usize, mode: MaskMode) -> Result<AttentionMask, ModelError> {
    if mode == MaskMode::Peter && seq_len < 2 {
        return Err(ModelError::SequenceTooShort(seq_len));
    }
    let mut values = vec![MASK_NEG; seq_len * seq_len];
    for row in 0..seq_len {
        for col in 0..seq_len {
            let causal = col <= row;
            let peter_extra = mode == MaskMode::Peter && row == 0 && col == 1;
            if causal || peter_extra {
                values[row * seq_len + col] = 0.0;
            }
        }
    }
    Ok(AttentionMask {
        seq_len,
        tensor: Tensor::matrix(seq_len, seq_len, values),
    })
}

impl AttentionMask {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    /// Whether the query at `row` may attend to the key at `col` (0-based).
    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.tensor.values()[row * self.seq_len + col] == 0.0
    }

    /// Hide pad keys from every query. Self-attention on the diagonal stays
    /// open so pad rows (whose outputs carry no loss) remain well defined.
    pub fn mask_pad_keys(&mut self, first_pad: usize) {
        let n = self.seq_len;
        for row in 0..n {
            for col in first_pad..n {
                if col != row {
                    self.tensor.values_mut()[row * n + col] = MASK_NEG;
                }
            }
        }
    }
}
