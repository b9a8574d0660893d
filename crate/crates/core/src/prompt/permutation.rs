//! Section ordering: a permutation of (I_s, C, I_a, X).

use serde::{Deserialize, Serialize};

use super::{PromptError, Section};

/// `order[i]` is the canonical index of the section placed at position `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 4]", into = "[usize; 4]")]
pub struct SigmaPermutation {
    order: [usize; 4],
}

impl SigmaPermutation {
    pub const IDENTITY: SigmaPermutation = SigmaPermutation {
        order: [0, 1, 2, 3],
    };

    /// History moved right after the system instructions: (I_s, X, C, I_a).
    pub const HISTORY_FIRST: SigmaPermutation = SigmaPermutation {
        order: [0, 3, 1, 2],
    };

    pub fn new(order: [usize; 4]) -> Result<Self, PromptError> {
        let mut seen = [false; 4];
        for &i in &order {
            if i >= 4 || seen[i] {
                return Err(PromptError::InvalidPermutation(format!("{order:?}")));
            }
            seen[i] = true;
        }
        Ok(Self { order })
    }

    /// Builds from a 0/1 permutation matrix acting on the column vector
    /// (I_s, C, I_a, X).
    pub fn from_matrix(rows: [[u8; 4]; 4]) -> Result<Self, PromptError> {
        let mut order = [0; 4];
        for (r, row) in rows.iter().enumerate() {
            let ones: Vec<usize> = (0..4).filter(|&c| row[c] == 1).collect();
            if ones.len() != 1 || row.iter().any(|&v| v > 1) {
                return Err(PromptError::InvalidPermutation(format!("row {r}: {row:?}")));
            }
            order[r] = ones[0];
        }
        Self::new(order)
    }

    pub fn order(&self) -> [usize; 4] {
        self.order
    }

    pub fn inverse(&self) -> Self {
        let mut inv = [0; 4];
        for (pos, &src) in self.order.iter().enumerate() {
            inv[src] = pos;
        }
        Self { order: inv }
    }

    pub fn apply<T: Clone>(&self, sections: &[T; 4]) -> [T; 4] {
        std::array::from_fn(|i| sections[self.order[i]].clone())
    }

    pub fn sections(&self) -> [Section; 4] {
        self.apply(&Section::CANONICAL)
    }
}

impl TryFrom<[usize; 4]> for SigmaPermutation {
    type Error = PromptError;

    fn try_from(order: [usize; 4]) -> Result<Self, Self::Error> {
        Self::new(order)
    }
}

impl From<SigmaPermutation> for [usize; 4] {
    fn from(p: SigmaPermutation) -> Self {
        p.order
    }
}

/// Reorders `sections`, given as (I_s, C, I_a, X), by `sigma`.
pub fn apply_permutation<T: Clone>(sigma: &SigmaPermutation, sections: &[T; 4]) -> [T; 4] {
    sigma.apply(sections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TUPLE: [&str; 4] = ["I_s", "C", "I_a", "X"];

    #[test]
    fn identity_keeps_order() {
        assert_eq!(
            apply_permutation(&SigmaPermutation::IDENTITY, &TUPLE),
            TUPLE
        );
    }

    #[test]
    fn int_matrix_moves_history_after_system() {
        let m =
            SigmaPermutation::from_matrix([[1, 0, 0, 0], [0, 0, 0, 1], [0, 1, 0, 0], [0, 0, 1, 0]])
                .unwrap();
        assert_eq!(m, SigmaPermutation::HISTORY_FIRST);
        assert_eq!(m.apply(&TUPLE), ["I_s", "X", "C", "I_a"]);
    }

    #[test]
    fn non_bijective_rejected() {
        assert!(SigmaPermutation::new([0, 0, 1, 2]).is_err());
        assert!(SigmaPermutation::new([0, 1, 2, 4]).is_err());
        assert!(
            SigmaPermutation::from_matrix([[1, 1, 0, 0], [0; 4], [0, 0, 1, 0], [0, 0, 0, 1]])
                .is_err()
        );
        assert!(serde_json::from_str::<SigmaPermutation>("[3,3,1,0]").is_err());
    }

    fn any_perm() -> impl Strategy<Value = SigmaPermutation> {
        Just([0usize, 1, 2, 3])
            .prop_shuffle()
            .prop_map(|o| SigmaPermutation::new(o).unwrap())
    }

    proptest! {
        #[test]
        fn inverse_restores(p in any_perm()) {
            let there = p.apply(&TUPLE);
            prop_assert_eq!(p.inverse().apply(&there), TUPLE);
        }
    }
}
