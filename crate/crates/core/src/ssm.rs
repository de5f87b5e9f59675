//! Discretized selective state-space recurrence.
//!
//! Per channel `c` and state `n`, with `a = -exp(a_log[c,n])`:
//!
//! ```text
//! Ā_t = exp(Δ_t a)            B̄_t = (exp(Δ_t a) - 1) / a · B_t
//! h_t = Ā_t ⊙ h_{t-1} + B̄_t u_t
//! y_t = <C_t, h_t> + D u_t
//! ```
//!
//! `Δ`, `B`, `C` are produced from the input sequence by [`s6_parameterize`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Below this `|Δa|` the input factor switches to its Taylor expansion.
pub const ZOH_TAYLOR_THRESHOLD: f64 = 1e-6;

/// Learned parameters of one selective scan over `channels` with `state_dim` states.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    /// `[C, N]`; the decay is `A = -exp(a_log)`.
    pub a_log: Tensor,
    /// `[C]` skip weight.
    pub d: Tensor,
    /// `[C, R]` then `[R, C]`: low-rank projection producing Δ.
    pub dt_down: Tensor,
    pub dt_up: Tensor,
    /// `[C]`
    pub dt_bias: Tensor,
    /// `[C, N]` projections producing per-step B and C.
    pub w_b: Tensor,
    pub w_c: Tensor,
}

/// Tape handles for an [`SsmParams`].
#[derive(Clone, Copy, Debug)]
pub struct SsmVars {
    pub a_log: Var,
    pub d: Var,
    pub dt_down: Var,
    pub dt_up: Var,
    pub dt_bias: Var,
    pub w_b: Var,
    pub w_c: Var,
}

/// Input-dependent scan operands, all with sequence length `L`.
#[derive(Clone, Copy, Debug)]
pub struct ScanInputs {
    /// `[L, C]`
    pub u: Var,
    /// `[L, C]`, strictly positive.
    pub delta: Var,
    /// `[L, N]`
    pub b: Var,
    /// `[L, N]`
    pub c: Var,
}

impl SsmParams {
    /// Initialization: `A_n = -(n+1)/(4N)`, `D = 0`, Δ bias giving
    /// `softplus(bias) = 0.5`.
    pub fn init<R: Rng + ?Sized>(channels: usize, state_dim: usize, dt_rank: usize, rng: &mut R) -> Self {
        assert!(channels > 0 && state_dim > 0 && dt_rank > 0);
        let dt_init: f64 = 0.5f64.exp_m1().ln();
        let proj = 1.0 / (channels as f64).sqrt();
        SsmParams {
            a_log: Tensor::from_fn([channels, state_dim], |i| {
                ((i % state_dim + 1) as f64 / (4 * state_dim) as f64).ln()
            }),
            d: Tensor::zeros([channels]),
            dt_down: Tensor::uniform([channels, dt_rank], -proj, proj, rng),
            dt_up: Tensor::uniform([dt_rank, channels], -0.5, 0.5, rng),
            dt_bias: Tensor::full([channels], dt_init),
            w_b: Tensor::uniform([channels, state_dim], -proj, proj, rng),
            w_c: Tensor::uniform([channels, state_dim], -proj, proj, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.d.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    /// Named tensors in a fixed order.
    pub fn named(&self) -> [(&'static str, &Tensor); 7] {
        [
            ("a_log", &self.a_log),
            ("d", &self.d),
            ("dt_down", &self.dt_down),
            ("dt_up", &self.dt_up),
            ("dt_bias", &self.dt_bias),
            ("w_b", &self.w_b),
            ("w_c", &self.w_c),
        ]
    }

    pub fn from_named(mut get: impl FnMut(&str) -> Result<Tensor>) -> Result<Self> {
        Ok(SsmParams {
            a_log: get("a_log")?,
            d: get("d")?,
            dt_down: get("dt_down")?,
            dt_up: get("dt_up")?,
            dt_bias: get("dt_bias")?,
            w_b: get("w_b")?,
            w_c: get("w_c")?,
        })
    }

    /// Registers every tensor as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> SsmVars {
        SsmVars {
            a_log: tape.leaf(self.a_log.clone()),
            d: tape.leaf(self.d.clone()),
            dt_down: tape.leaf(self.dt_down.clone()),
            dt_up: tape.leaf(self.dt_up.clone()),
            dt_bias: tape.leaf(self.dt_bias.clone()),
            w_b: tape.leaf(self.w_b.clone()),
            w_c: tape.leaf(self.w_c.clone()),
        }
    }
}

/// `(Ā, B̄/B)` for one diagonal entry. `B̄ = factor · B`.
#[inline]
pub(crate) fn zoh_factors(a: f64, delta: f64) -> (f64, f64) {
    let x = delta * a;
    let abar = x.exp();
    let bfac = if x.abs() < ZOH_TAYLOR_THRESHOLD {
        delta * (1.0 + x / 2.0 + x * x / 6.0)
    } else {
        x.exp_m1() / a
    };
    (abar, bfac)
}

/// Derivative of the input factor `(exp(Δa) - 1)/a` with respect to `a`.
#[inline]
fn dbfac_da(a: f64, delta: f64, abar: f64) -> f64 {
    let x = delta * a;
    if x.abs() < 1e-2 {
        delta
            * delta
            * (0.5 + x * (1.0 / 3.0 + x * (1.0 / 8.0 + x * (1.0 / 30.0 + x * (1.0 / 144.0 + x / 840.0)))))
    } else {
        (x * abar - x.exp_m1()) / (a * a)
    }
}

/// Zero-order-hold discretization of one step: `Ā = exp(ΔA)`,
/// `B̄ = (ΔA)^{-1}(exp(ΔA) - 1)·ΔB`, with `A` diagonal.
pub fn discretize_zoh(a: &[f64], b: &[f64], delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(delta > 0.0) {
        return Err(Error::domain("discretize_zoh", format!("Δ must be positive, got {delta}")));
    }
    if a.len() != b.len() {
        return Err(Error::shape("discretize_zoh", &[a.len()], &[b.len()]));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&a, &b)| {
            let (abar, bfac) = zoh_factors(a, delta);
            (abar, bfac * b)
        })
        .unzip())
}

/// `Δ = softplus(u·W_down·W_up + b_Δ)`, `B = u·W_B`, `C = u·W_C`.
pub fn s6_parameterize(tape: &mut Tape, p: &SsmVars, u: Var) -> Result<ScanInputs> {
    let low = tape.linear(u, p.dt_down, None)?;
    let pre = tape.linear(low, p.dt_up, Some(p.dt_bias))?;
    let delta = tape.softplus(pre)?;
    let b = tape.linear(u, p.w_b, None)?;
    let c = tape.linear(u, p.w_c, None)?;
    Ok(ScanInputs { u, delta, b, c })
}

/// Runs the recurrence from `h_0 = 0`; differentiable in `u`, Δ, B, C, `a_log` and `D`.
pub fn selective_scan(tape: &mut Tape, p: &SsmVars, x: &ScanInputs) -> Result<Var> {
    let (l, ch) = match *tape.shape(x.u) {
        [l, c] => (l, c),
        ref s => return Err(Error::domain("selective_scan", format!("u must be L×C, got {s:?}"))),
    };
    let n = match *tape.shape(p.a_log) {
        [c, n] if c == ch && n > 0 => n,
        ref s => return Err(Error::shape("selective_scan", &[ch, 0], s)),
    };
    for (v, want) in [(x.delta, [l, ch]), (x.b, [l, n]), (x.c, [l, n])] {
        if tape.shape(v) != want {
            return Err(Error::shape("selective_scan", &want, tape.shape(v)));
        }
    }
    if tape.shape(p.d) != [ch] {
        return Err(Error::shape("selective_scan", &[ch], tape.shape(p.d)));
    }
    if let Some(bad) = tape.value(x.delta).data().iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::domain("selective_scan", format!("Δ must be positive, got {bad}")));
    }

    let u = tape.value(x.u).data();
    let dl = tape.value(x.delta).data();
    let bm = tape.value(x.b).data();
    let cm = tape.value(x.c).data();
    let dv = tape.value(p.d).data();
    let a: Vec<f64> = tape.value(p.a_log).data().iter().map(|v| -v.exp()).collect();

    // states[(t*C + c)*N + n]
    let mut states = vec![0.0; l * ch * n];
    let mut y = vec![0.0; l * ch];
    for t in 0..l {
        for c in 0..ch {
            let ut = u[t * ch + c];
            let dt = dl[t * ch + c];
            let base = (t * ch + c) * n;
            let mut acc = dv[c] * ut;
            for k in 0..n {
                let (abar, bfac) = zoh_factors(a[c * n + k], dt);
                let prev = if t > 0 { states[base - ch * n + k] } else { 0.0 };
                let h = abar * prev + bfac * bm[t * n + k] * ut;
                states[base + k] = h;
                acc += cm[t * n + k] * h;
            }
            y[t * ch + c] = acc;
        }
    }

    let y = Tensor::from_parts(vec![l, ch], y);
    tape.record(
        "selective_scan",
        y,
        &[x.u, x.delta, p.a_log, x.b, x.c, p.d],
        move |g, ins, _| {
            let (u, dl, a_log, bm, cm, dv) = (
                ins[0].data(),
                ins[1].data(),
                ins[2].data(),
                ins[3].data(),
                ins[4].data(),
                ins[5].data(),
            );
            let gy = g.data();
            let mut gu = vec![0.0; l * ch];
            let mut gd = vec![0.0; l * ch];
            let mut ga_log = vec![0.0; ch * n];
            let mut gb = vec![0.0; l * n];
            let mut gc = vec![0.0; l * n];
            let mut gdv = vec![0.0; ch];
            for c in 0..ch {
                for t in 0..l {
                    gdv[c] += gy[t * ch + c] * u[t * ch + c];
                    gu[t * ch + c] += gy[t * ch + c] * dv[c];
                }
                for k in 0..n {
                    let a = -a_log[c * n + k].exp();
                    let mut carry = 0.0;
                    let mut ga = 0.0;
                    for t in (0..l).rev() {
                        let i = t * ch + c;
                        let h = states[i * n + k];
                        gc[t * n + k] += gy[i] * h;
                        carry += gy[i] * cm[t * n + k];
                        let prev = if t > 0 { states[(i - ch) * n + k] } else { 0.0 };
                        let dt = dl[i];
                        let (abar, bfac) = zoh_factors(a, dt);
                        let g_abar = carry * prev;
                        let bu = bm[t * n + k] * u[i];
                        gd[i] += g_abar * a * abar + carry * bu * abar;
                        ga += g_abar * dt * abar + carry * bu * dbfac_da(a, dt, abar);
                        gb[t * n + k] += carry * bfac * u[i];
                        gu[i] += carry * bfac * bm[t * n + k];
                        carry *= abar;
                    }
                    ga_log[c * n + k] = ga * a;
                }
            }
            vec![
                Tensor::from_parts(vec![l, ch], gu),
                Tensor::from_parts(vec![l, ch], gd),
                Tensor::from_parts(vec![ch, n], ga_log),
                Tensor::from_parts(vec![l, n], gb),
                Tensor::from_parts(vec![l, n], gc),
                Tensor::from_parts(vec![ch], gdv),
            ]
        },
    )
}

/// `selective_scan(s6_parameterize(u))`.
pub fn s6_forward(tape: &mut Tape, p: &SsmVars, u: Var) -> Result<Var> {
    let inputs = s6_parameterize(tape, p, u)?;
    selective_scan(tape, p, &inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zoh_closed_form() {
        let (abar, bbar) = discretize_zoh(&[-1.0], &[1.0], std::f64::consts::LN_2).unwrap();
        assert!((abar[0] - 0.5).abs() < 1e-15);
        assert!((bbar[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zoh_small_step_limit() {
        let (abar, bbar) = discretize_zoh(&[-3.0, -0.5], &[2.0, 1.0], 1e-12).unwrap();
        assert!(abar.iter().all(|&v| (v - 1.0).abs() < 1e-10));
        assert!(bbar.iter().all(|&v| v.abs() < 1e-10));
        assert!(discretize_zoh(&[-1.0], &[1.0], 0.0).is_err());
        assert!(discretize_zoh(&[-1.0], &[1.0], -0.1).is_err());
    }

    #[test]
    fn zoh_matches_taylor_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let a: f64 = -rng.random_range(0.01..1.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            let dt: f64 = rng.random_range(1e-4..1.0);
            // (e^x - 1)/x · Δ b = Δ b Σ_{k≥0} x^k/(k+1)!
            let x = dt * a;
            let mut term = 1.0;
            let mut series = 0.0;
            for k in 0..20 {
                term = if k == 0 { 1.0 } else { term * x / (k as f64 + 1.0) };
                series += term;
            }
            let want = series * dt * b;
            let (_, bbar) = discretize_zoh(&[a], &[b], dt).unwrap();
            assert!((bbar[0] - want).abs() < 1e-12, "{} vs {want}", bbar[0]);
        }
    }

    #[test]
    fn dbfac_series_and_direct_agree_at_switch() {
        for &a in &[-0.5, -2.0] {
            let dt = 0.01 / -a;
            let below = dbfac_da(a, dt * 0.9999999, (a * dt).exp());
            let (x, abar) = (a * dt, (a * dt).exp());
            let direct = (x * abar - x.exp_m1()) / (a * a);
            assert!((below - direct).abs() / direct.abs() < 1e-5);
        }
    }

    #[test]
    fn initial_delta_near_half() {
        let p = SsmParams::init(3, 4, 1, &mut ChaCha8Rng::seed_from_u64(0));
        let s = crate::tensor::ops_softplus(p.dt_bias.data()[0]);
        assert!((s - 0.5).abs() < 1e-12);
        assert!(p.a_log.data().iter().all(|v| -v.exp() < 0.0));
    }
}
