use alloc::vec;
use alloc::vec::Vec;

use super::{check_actions, DecPomdpSpec, Env, GameResult, StepOutcome, TeamEvents, TeamView};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoardKind {
    /// 3×3, free placement, three in a row.
    TicTacToe,
    /// 4×4 with gravity: a piece drops to the lowest empty cell of its
    /// column; four in a row in any direction wins.
    ConnectFour,
}

impl BoardKind {
    pub fn rows(self) -> usize {
        match self {
            BoardKind::TicTacToe => 3,
            BoardKind::ConnectFour => 4,
        }
    }

    pub fn cols(self) -> usize {
        self.rows()
    }

    pub fn cells(self) -> usize {
        self.rows() * self.cols()
    }

    /// Placement actions (cells or columns); the no-op is the next index.
    pub fn placements(self) -> usize {
        match self {
            BoardKind::TicTacToe => 9,
            BoardKind::ConnectFour => 4,
        }
    }

    pub fn noop(self) -> usize {
        self.placements()
    }

    fn win_len(self) -> usize {
        self.rows()
    }
}

/// One-hot board encoding from `team`'s perspective: per cell, channels
/// (blank, own mark, opponent mark). `cells` holds 0 for empty and `t + 1`
/// for a mark of team `t`.
pub fn encode_board(cells: &[u8], team: usize) -> Vec<f64> {
    let own = team as u8 + 1;
    let mut out = vec![0.0; cells.len() * 3];
    for (i, &c) in cells.iter().enumerate() {
        let ch = match c {
            0 => 0,
            c if c == own => 1,
            _ => 2,
        };
        out[i * 3 + ch] = 1.0;
    }
    out
}

/// Turn-based board game exposed as a one-agent-per-team Dec-POMDP.
///
/// Cells are row-major; for Connect-Four row 0 is the bottom row.
#[derive(Clone, Debug)]
pub struct BoardGame {
    kind: BoardKind,
    spec: DecPomdpSpec,
    lines: Vec<Vec<usize>>,
    cells: Vec<u8>,
    to_move: usize,
    first_mover: usize,
    steps: usize,
    done: bool,
    result: Option<GameResult>,
}

impl BoardGame {
    pub fn new(kind: BoardKind) -> Self {
        let n = kind.cells();
        let spec = DecPomdpSpec {
            agents_per_team: 1,
            num_actions: kind.placements() + 1,
            obs_parts: vec![3 * n],
            global_state_width: 3 * n + 1,
            max_episode_len: n,
            turn_based: true,
        };
        BoardGame {
            kind,
            spec,
            lines: lines(kind.rows(), kind.cols(), kind.win_len()),
            cells: vec![0; n],
            to_move: 0,
            first_mover: 0,
            steps: 0,
            done: false,
            result: None,
        }
    }

    pub fn kind(&self) -> BoardKind {
        self.kind
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn to_move(&self) -> usize {
        self.to_move
    }

    /// Sets up an arbitrary position. Used by search oracles and tests; the
    /// position is not validated for reachability.
    pub fn set_position(&mut self, cells: &[u8], to_move: usize) -> Result<StepOutcome> {
        if cells.len() != self.kind.cells() || cells.iter().any(|&c| c > 2) || to_move > 1 {
            return Err(Error::Precondition("invalid board position".into()));
        }
        self.cells.copy_from_slice(cells);
        self.to_move = to_move;
        self.steps = cells.iter().filter(|&&c| c != 0).count();
        self.result = self.terminal_result();
        self.done = self.result.is_some();
        Ok(self.outcome([0.0; 2]))
    }

    /// Cell index a placement action lands on, if legal.
    pub fn landing_cell(&self, action: usize) -> Option<usize> {
        match self.kind {
            BoardKind::TicTacToe => (action < 9 && self.cells[action] == 0).then_some(action),
            BoardKind::ConnectFour => {
                if action >= 4 {
                    return None;
                }
                (0..4).map(|r| r * 4 + action).find(|&i| self.cells[i] == 0)
            }
        }
    }

    fn winner(&self) -> Option<usize> {
        for line in &self.lines {
            let c = self.cells[line[0]];
            if c != 0 && line.iter().all(|&i| self.cells[i] == c) {
                return Some(c as usize - 1);
            }
        }
        None
    }

    fn terminal_result(&self) -> Option<GameResult> {
        match self.winner() {
            Some(0) => Some(GameResult::Win),
            Some(_) => Some(GameResult::Loss),
            None if self.cells.iter().all(|&c| c != 0) => Some(GameResult::Draw),
            None => None,
        }
    }

    fn mask(&self, team: usize) -> Vec<bool> {
        let mut m = vec![false; self.spec.num_actions];
        if self.done {
            // Terminal views keep the no-op legal so masks are never empty.
            m[self.kind.noop()] = true;
        } else if team == self.to_move {
            for (a, slot) in m.iter_mut().enumerate().take(self.kind.placements()) {
                *slot = self.landing_cell(a).is_some();
            }
        } else {
            m[self.kind.noop()] = true;
        }
        m
    }

    fn view(&self, team: usize) -> TeamView {
        let obs = encode_board(&self.cells, team);
        let mut global = obs.clone();
        global.push(if self.to_move == team && !self.done { 1.0 } else { 0.0 });
        TeamView {
            obs,
            global,
            masks: self.mask(team),
        }
    }

    fn outcome(&self, rewards: [f64; 2]) -> StepOutcome {
        StepOutcome {
            teams: [self.view(0), self.view(1)],
            base_rewards: rewards,
            rewards,
            done: self.done,
            result: self.result,
            step: self.steps,
            events: [TeamEvents::default(); 2],
        }
    }
}

fn lines(rows: usize, cols: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let dirs: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            for (dr, dc) in dirs {
                let end_r = r + dr * (k as isize - 1);
                let end_c = c + dc * (k as isize - 1);
                if end_r < 0 || end_r >= rows as isize || end_c < 0 || end_c >= cols as isize {
                    continue;
                }
                out.push(
                    (0..k as isize)
                        .map(|i| ((r + dr * i) * cols as isize + c + dc * i) as usize)
                        .collect(),
                );
            }
        }
    }
    out
}

impl Env for BoardGame {
    fn spec(&self) -> &DecPomdpSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> StepOutcome {
        self.cells.iter_mut().for_each(|c| *c = 0);
        self.to_move = self.first_mover;
        self.steps = 0;
        self.done = false;
        self.result = None;
        self.outcome([0.0; 2])
    }

    fn step(&mut self, team0: &[usize], team1: &[usize]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let views = [self.view(0), self.view(1)];
        check_actions(&views, [team0, team1], 1, self.spec.num_actions)?;
        let mover = self.to_move;
        let action = if mover == 0 { team0[0] } else { team1[0] };
        let cell = self.landing_cell(action).expect("legal placement");
        self.cells[cell] = mover as u8 + 1;
        self.steps += 1;
        self.to_move = 1 - mover;
        self.result = self.terminal_result();
        self.done = self.result.is_some();
        let r = match self.result {
            Some(GameResult::Win) => 1.0,
            Some(GameResult::Loss) => -1.0,
            _ => 0.0,
        };
        Ok(self.outcome([r, -r]))
    }

    fn set_first_mover(&mut self, team: usize) {
        self.first_mover = team & 1;
    }

    fn first_mover(&self) -> usize {
        self.first_mover
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn state_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.cells.iter().map(|&c| c as f64).collect();
        v.push(self.to_move as f64);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ttt() -> BoardGame {
        BoardGame::new(BoardKind::TicTacToe)
    }

    #[test]
    fn line_counts() {
        assert_eq!(lines(3, 3, 3).len(), 8);
        assert_eq!(lines(4, 4, 4).len(), 10);
    }

    #[test]
    fn reset_masks() {
        let mut g = ttt();
        let o = g.reset(0);
        assert_eq!(&o.teams[0].masks[..9], &[true; 9]);
        assert!(!o.teams[0].masks[9]);
        let mut idle = vec![false; 10];
        idle[9] = true;
        assert_eq!(o.teams[1].masks, idle);
        assert!(!o.done);
        assert_eq!(o.teams[0].obs.len(), 27);

        let mut c = BoardGame::new(BoardKind::ConnectFour);
        let o = c.reset(0);
        assert_eq!(o.teams[0].masks, vec![true, true, true, true, false]);
        assert_eq!(o.teams[0].obs.len(), 48);
    }

    #[test]
    fn encoding_examples() {
        let empty = encode_board(&[0; 9], 0);
        assert_eq!(empty, [1.0, 0.0, 0.0].repeat(9));
        let mut cells = [0u8; 9];
        cells[0] = 1;
        let e = encode_board(&cells, 0);
        assert_eq!(&e[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(&e[3..], &[1.0, 0.0, 0.0].repeat(8)[..]);
        let e = encode_board(&cells, 1);
        assert_eq!(&e[..3], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn row_win_for_controlled_first_mover() {
        let mut g = ttt();
        g.reset(0);
        let noop = [9];
        g.step(&[0], &noop).unwrap();
        g.step(&noop, &[3]).unwrap();
        g.step(&[1], &noop).unwrap();
        g.step(&noop, &[4]).unwrap();
        let o = g.step(&[2], &noop).unwrap();
        assert!(o.done);
        assert_eq!(o.result, Some(GameResult::Win));
        assert_eq!(o.rewards, [1.0, -1.0]);
        assert!(matches!(g.step(&noop, &[5]), Err(Error::EpisodeDone)));
    }

    #[test]
    fn row_win_for_opponent() {
        let mut g = ttt();
        g.set_first_mover(1);
        g.reset(0);
        let noop = [9];
        g.step(&noop, &[0]).unwrap();
        g.step(&[3], &noop).unwrap();
        g.step(&noop, &[1]).unwrap();
        g.step(&[4], &noop).unwrap();
        let o = g.step(&noop, &[2]).unwrap();
        assert_eq!(o.result, Some(GameResult::Loss));
        assert_eq!(o.rewards, [-1.0, 1.0]);
    }

    #[test]
    fn full_board_draw() {
        let mut g = ttt();
        g.reset(0);
        // X: 0 1 5 6 8, O: 2 3 4 7 -> no line
        let seq = [0, 2, 1, 3, 5, 4, 6, 7, 8];
        let mut o = None;
        for (i, &c) in seq.iter().enumerate() {
            let (a0, a1) = if i % 2 == 0 { ([c], [9]) } else { ([9], [c]) };
            o = Some(g.step(&a0, &a1).unwrap());
        }
        let o = o.unwrap();
        assert!(o.done);
        assert_eq!(o.result, Some(GameResult::Draw));
        assert_eq!(o.rewards, [0.0, 0.0]);
    }

    #[test]
    fn illegal_actions_rejected() {
        let mut g = ttt();
        g.reset(0);
        assert!(matches!(
            g.step(&[9], &[9]),
            Err(Error::IllegalAction { team: 0, agent: 0, action: 9 })
        ));
        assert!(matches!(
            g.step(&[0], &[0]),
            Err(Error::IllegalAction { team: 1, agent: 0, action: 0 })
        ));
        g.step(&[4], &[9]).unwrap();
        assert!(matches!(
            g.step(&[9], &[4]),
            Err(Error::IllegalAction { team: 1, agent: 0, action: 4 })
        ));
    }

    #[test]
    fn connect_four_gravity() {
        let mut g = BoardGame::new(BoardKind::ConnectFour);
        g.reset(0);
        g.step(&[2], &[4]).unwrap();
        assert_eq!(g.cells()[2], 1);
        g.step(&[4], &[2]).unwrap();
        assert_eq!(g.cells()[6], 2);
        g.step(&[2], &[4]).unwrap();
        let o = g.step(&[4], &[2]).unwrap();
        assert_eq!(g.cells()[14], 2);
        // column 2 is now full
        assert!(!o.teams[0].masks[2]);
        assert!(o.teams[0].masks[0]);
    }

    #[test]
    fn connect_four_vertical_win() {
        let mut g = BoardGame::new(BoardKind::ConnectFour);
        g.reset(0);
        let mut last = None;
        for _ in 0..3 {
            g.step(&[0], &[4]).unwrap();
            g.step(&[4], &[1]).unwrap();
        }
        last.replace(g.step(&[0], &[4]).unwrap());
        let o = last.unwrap();
        assert_eq!(o.result, Some(GameResult::Win));
    }

    #[test]
    fn global_marks_mover() {
        let mut g = ttt();
        let o = g.reset(0);
        assert_eq!(o.teams[0].global[27], 1.0);
        assert_eq!(o.teams[1].global[27], 0.0);
    }
}
