//! Evaluation: matches, TrueSkill ratings, round-robin tournaments and the
//! behavioural diversity index of a pool.

pub mod diversity;
pub mod minimax;
pub mod tournament;
pub mod trueskill;

pub use diversity::{default_bandwidth, diversity_index, pool_diversity, DiversityReport, ProbeSet};
pub use tournament::{play_games, play_match, tournament, PayoffMatrix, Record, TournamentReport};
pub use trueskill::{Outcome, Rating, TrueSkillParams};
