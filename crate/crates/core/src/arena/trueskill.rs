//! Two-player TrueSkill with draws.

use core::f64::consts::{PI, SQRT_2};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rating {
    pub mu: f64,
    pub sigma: f64,
}

impl Rating {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::Precondition("rating needs finite mu and sigma > 0".into()));
        }
        Ok(Rating { mu, sigma })
    }

    /// μ − 3σ.
    pub fn conservative(&self) -> f64 {
        self.mu - 3.0 * self.sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrueSkillParams {
    pub mu0: f64,
    pub sigma0: f64,
    pub beta: f64,
    pub tau: f64,
    pub p_draw: f64,
}

impl Default for TrueSkillParams {
    fn default() -> Self {
        let sigma0 = 25.0 / 3.0;
        TrueSkillParams {
            mu0: 25.0,
            sigma0,
            beta: sigma0 / 2.0,
            tau: sigma0 / 100.0,
            p_draw: 0.1,
        }
    }
}

impl TrueSkillParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.beta > 0.0 && self.tau >= 0.0 && self.mu0.is_finite()) {
            return Err(Error::config("trueskill", "sigma0 and beta must be positive, tau non-negative"));
        }
        if !(0.0..1.0).contains(&self.p_draw) {
            return Err(Error::config("trueskill.p_draw", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn initial(&self) -> Rating {
        Rating {
            mu: self.mu0,
            sigma: self.sigma0,
        }
    }

    /// Performance-difference margin inside which a game is a draw.
    pub fn draw_margin(&self) -> f64 {
        norm_ppf((self.p_draw + 1.0) / 2.0) * SQRT_2 * self.beta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    AWins,
    BWins,
    Draw,
}

impl Outcome {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "a" | "a_wins" | "win" => Ok(Outcome::AWins),
            "b" | "b_wins" | "loss" => Ok(Outcome::BWins),
            "draw" => Ok(Outcome::Draw),
            other => Err(Error::UnknownOutcome(other.into())),
        }
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * PI)
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Inverse standard normal cdf (Wichura's AS241, PPND16), relative error
/// about 1e-16 over (0, 1).
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = libm::sqrt(-libm::log(r));
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Mean-shift factor for a decisive game; `t` and `eps` already divided by c.
pub fn v_win(t: f64, eps: f64) -> f64 {
    let x = t - eps;
    let den = norm_cdf(x);
    if den < 1e-300 {
        -x
    } else {
        norm_pdf(x) / den
    }
}

pub fn w_win(t: f64, eps: f64) -> f64 {
    let x = t - eps;
    if norm_cdf(x) < 1e-300 {
        return if x < 0.0 { 1.0 } else { 0.0 };
    }
    let v = v_win(t, eps);
    v * (v + x)
}

pub fn v_draw(t: f64, eps: f64) -> f64 {
    let a = t.abs();
    let den = norm_cdf(eps - a) - norm_cdf(-eps - a);
    let v = if den < 1e-300 {
        -a - eps
    } else {
        (norm_pdf(-eps - a) - norm_pdf(eps - a)) / den
    };
    if t < 0.0 {
        -v
    } else {
        v
    }
}

pub fn w_draw(t: f64, eps: f64) -> f64 {
    let a = t.abs();
    let den = norm_cdf(eps - a) - norm_cdf(-eps - a);
    if den < 1e-300 {
        return 1.0;
    }
    let v = v_draw(a, eps);
    v * v + ((eps - a) * norm_pdf(eps - a) + (eps + a) * norm_pdf(eps + a)) / den
}

/// Updates both ratings after one game between A and B.
pub fn update(a: Rating, b: Rating, outcome: Outcome, params: &TrueSkillParams) -> Result<(Rating, Rating)> {
    if !(a.sigma > 0.0 && b.sigma > 0.0) {
        return Err(Error::Precondition("ratings need sigma > 0".into()));
    }
    let var_a = a.sigma * a.sigma + params.tau * params.tau;
    let var_b = b.sigma * b.sigma + params.tau * params.tau;
    let c2 = 2.0 * params.beta * params.beta + var_a + var_b;
    let c = libm::sqrt(c2);
    let eps = params.draw_margin() / c;
    // Work from the winner's side; for draws A is "first".
    let (winner_is_a, draw) = match outcome {
        Outcome::AWins => (true, false),
        Outcome::BWins => (false, false),
        Outcome::Draw => (true, true),
    };
    let (mu_w, mu_l) = if winner_is_a { (a.mu, b.mu) } else { (b.mu, a.mu) };
    let t = (mu_w - mu_l) / c;
    let (v, w) = if draw {
        (v_draw(t, eps), w_draw(t, eps))
    } else {
        (v_win(t, eps), w_win(t, eps))
    };
    let (var_w, var_l) = if winner_is_a { (var_a, var_b) } else { (var_b, var_a) };
    let new_w = Rating {
        mu: mu_w + var_w / c * v,
        sigma: libm::sqrt(var_w * (1.0 - var_w / c2 * w)),
    };
    let new_l = Rating {
        mu: mu_l - var_l / c * v,
        sigma: libm::sqrt(var_l * (1.0 - var_l / c2 * w)),
    };
    Ok(if winner_is_a { (new_w, new_l) } else { (new_l, new_w) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn no_draw_static() -> TrueSkillParams {
        TrueSkillParams {
            tau: 0.0,
            p_draw: 0.0,
            ..TrueSkillParams::default()
        }
    }

    #[test]
    fn v_at_zero_is_pdf_over_cdf() {
        // φ(0)/Φ(0) = (1/√(2π)) / 0.5 = √(2/π).
        let want = libm::sqrt(2.0 / PI);
        assert!((v_win(0.0, 0.0) - want).abs() < 1e-15);
        assert!((v_win(0.0, 0.0) - 0.7978845608).abs() < 1e-9);
    }

    #[test]
    fn ppf_inverts_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.2, 0.5, 0.55, 0.9, 0.999, 1.0 - 1e-9] {
            let x = norm_ppf(p);
            assert!((norm_cdf(x) - p).abs() < 1e-9 * p.max(1e-3), "p={p}");
        }
        // Known quantiles.
        assert!((norm_ppf(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((norm_ppf(0.55) - 0.12566134685507402).abs() < 1e-12);
    }

    #[test]
    fn fresh_players_move_symmetrically() {
        let p = no_draw_static();
        let (a, b) = update(p.initial(), p.initial(), Outcome::AWins, &p).unwrap();
        assert!(a.mu > 25.0 && b.mu < 25.0);
        assert!(((a.mu - 25.0) - (25.0 - b.mu)).abs() < 1e-12);
        assert_eq!(a.sigma, b.sigma);
        // Closed form: Δμ = σ²/c · √(2/π).
        let c = libm::sqrt(2.0 * p.beta * p.beta + 2.0 * p.sigma0 * p.sigma0);
        assert!((a.mu - 25.0 - p.sigma0 * p.sigma0 / c * libm::sqrt(2.0 / PI)).abs() < 1e-12);
        let (x, y) = update(p.initial(), p.initial(), Outcome::BWins, &p).unwrap();
        assert!((x.mu - b.mu).abs() < 1e-12 && (y.mu - a.mu).abs() < 1e-12);
    }

    #[test]
    fn draw_between_equals_keeps_means() {
        let p = TrueSkillParams::default();
        let (a, b) = update(p.initial(), p.initial(), Outcome::Draw, &p).unwrap();
        assert!((a.mu - 25.0).abs() < 1e-12 && (b.mu - 25.0).abs() < 1e-12);
        assert!(a.sigma < p.sigma0);
        // A draw pulls an underdog up.
        let low = Rating::new(20.0, 5.0).unwrap();
        let (a, b) = update(low, p.initial(), Outcome::Draw, &p).unwrap();
        assert!(a.mu > 20.0 && b.mu < 25.0);
    }

    #[test]
    fn unknown_outcome_is_an_error() {
        assert!(matches!(Outcome::parse("forfeit"), Err(Error::UnknownOutcome(_))));
        assert_eq!(Outcome::parse("draw").unwrap(), Outcome::Draw);
    }

    #[test]
    fn sigma_strictly_decreases_without_dynamics() {
        let p = TrueSkillParams {
            tau: 0.0,
            ..TrueSkillParams::default()
        };
        let mut rng = crate::rng_from_seed(17);
        // Means within 30 of each other: for an expected win by more than
        // about 8c the variance shrink drops below double resolution.
        for _ in 0..100_000 {
            let a = Rating::new(rng.random_range(10.0..40.0), rng.random_range(0.5..10.0)).unwrap();
            let b = Rating::new(rng.random_range(10.0..40.0), rng.random_range(0.5..10.0)).unwrap();
            let o = [Outcome::AWins, Outcome::BWins, Outcome::Draw][rng.random_range(0..3)];
            let (a2, b2) = update(a, b, o, &p).unwrap();
            assert!(a2.sigma < a.sigma && b2.sigma < b.sigma, "{a:?} {b:?} {o:?}");
            assert!(a2.sigma > 0.0 && b2.sigma > 0.0);
        }
    }

    proptest! {
        #[test]
        fn equal_sigma_updates_are_zero_sum(mu_a in 0.0f64..50.0, mu_b in 0.0f64..50.0, s in 0.5f64..10.0, o in 0usize..3) {
            let p = TrueSkillParams::default();
            let o = [Outcome::AWins, Outcome::BWins, Outcome::Draw][o];
            let (a, b) = update(Rating { mu: mu_a, sigma: s }, Rating { mu: mu_b, sigma: s }, o, &p).unwrap();
            prop_assert!(((a.mu - mu_a) + (b.mu - mu_b)).abs() < 1e-9);
        }

        #[test]
        fn w_lies_in_unit_interval(t in -6.0f64..6.0, eps in 0.0f64..2.0) {
            let w = w_win(t, eps);
            prop_assert!(w > 0.0 && w < 1.0);
            let w = w_draw(t, eps.max(0.01));
            prop_assert!(w > 0.0 && w < 1.0);
        }
    }
}
