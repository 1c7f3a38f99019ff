//! Exact Tic-Tac-Toe solver used as an evaluation opponent and test oracle.
//! It has its own line detection and does not consult the environment's
//! rules.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

const LINES: [[usize; 3]; 8] = [
    [0, 1, 2],
    [3, 4, 5],
    [6, 7, 8],
    [0, 3, 6],
    [1, 4, 7],
    [2, 5, 8],
    [0, 4, 8],
    [2, 4, 6],
];

const POSITIONS: usize = 19_683;
const UNKNOWN: i8 = i8::MIN;

/// Mark of the player that completed a line, if any.
pub fn ttt_winner(cells: &[u8]) -> Option<u8> {
    LINES.iter().find_map(|l| {
        let m = cells[l[0]];
        (m != 0 && m == cells[l[1]] && m == cells[l[2]]).then_some(m)
    })
}

fn index(cells: &[u8]) -> usize {
    cells.iter().fold(0, |acc, &c| acc * 3 + c as usize)
}

/// Game-theoretic value of every position for the player to move, filled
/// by memoised negamax.
#[derive(Clone, Debug)]
pub struct TicTacToeOracle {
    // [mover][position]: +1 win, 0 draw, −1 loss for `mover`.
    values: [Vec<i8>; 2],
}

impl Default for TicTacToeOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl TicTacToeOracle {
    pub fn new() -> Self {
        let mut oracle = TicTacToeOracle {
            values: [vec![UNKNOWN; POSITIONS], vec![UNKNOWN; POSITIONS]],
        };
        for first in 0..2 {
            oracle.solve(&mut [0u8; 9], first);
        }
        oracle
    }

    fn solve(&mut self, cells: &mut [u8; 9], mover: usize) -> i8 {
        let key = index(cells);
        if self.values[mover][key] != UNKNOWN {
            return self.values[mover][key];
        }
        let v = if ttt_winner(cells).is_some() {
            // The previous player just completed a line.
            -1
        } else if cells.iter().all(|&c| c != 0) {
            0
        } else {
            let mut best = -1;
            for i in 0..9 {
                if cells[i] == 0 {
                    cells[i] = mover as u8 + 1;
                    best = best.max(-self.solve(cells, 1 - mover));
                    cells[i] = 0;
                }
            }
            best
        };
        self.values[mover][key] = v;
        v
    }

    /// Value for `mover` of a position; positions never reached from an
    /// empty board are solved on demand.
    pub fn value(&self, cells: &[u8], mover: usize) -> i8 {
        let v = self.values[mover][index(cells)];
        if v != UNKNOWN {
            return v;
        }
        let mut c = [0u8; 9];
        c.copy_from_slice(cells);
        self.clone().solve(&mut c, mover)
    }

    /// Moves that keep the best achievable value for `mover`.
    pub fn optimal_moves(&self, cells: &[u8], mover: usize) -> Vec<usize> {
        let mut c = [0u8; 9];
        c.copy_from_slice(cells);
        let mut best = i8::MIN;
        let mut moves = Vec::new();
        for i in 0..9 {
            if c[i] != 0 {
                continue;
            }
            c[i] = mover as u8 + 1;
            let v = -self.value(&c, 1 - mover);
            c[i] = 0;
            if v > best {
                best = v;
                moves.clear();
            }
            if v == best {
                moves.push(i);
            }
        }
        moves
    }

    /// An optimal move, ties broken uniformly at random.
    pub fn choose<R: Rng + ?Sized>(&self, cells: &[u8], mover: usize, rng: &mut R) -> Option<usize> {
        let moves = self.optimal_moves(cells, mover);
        if moves.is_empty() {
            return None;
        }
        Some(moves[rng.random_range(0..moves.len())])
    }
}
