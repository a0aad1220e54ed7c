//! Per-parameter update rules.
//!
//! Each rule is a pure state transition `(w, g, state) -> (w', state')`
//! applied elementwise. State starts at zero and its step counter advances
//! by one per call to [`step`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::Param;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    Sgd,
    Adagrad,
    Adadelta,
    Rmsprop,
    Adam,
    Adamax,
    Nadam,
    Ftrl,
}

impl Rule {
    pub const ALL: [Rule; 8] = [
        Rule::Sgd,
        Rule::Adagrad,
        Rule::Adadelta,
        Rule::Rmsprop,
        Rule::Adam,
        Rule::Adamax,
        Rule::Nadam,
        Rule::Ftrl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Sgd => "sgd",
            Rule::Adagrad => "adagrad",
            Rule::Adadelta => "adadelta",
            Rule::Rmsprop => "rmsprop",
            Rule::Adam => "adam",
            Rule::Adamax => "adamax",
            Rule::Nadam => "nadam",
            Rule::Ftrl => "ftrl",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown optimizer {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub rule: Rule,
    pub learning_rate: f64,
    /// SGD velocity decay.
    pub momentum: f64,
    /// Decay of the squared-gradient averages (RMSprop, Adadelta).
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l1: f64,
    pub l2: f64,
    pub beta_ftrl: f64,
}

impl OptimizerConfig {
    /// Defaults from the optimizers' original descriptions.
    pub fn new(rule: Rule, learning_rate: f64) -> Self {
        Self {
            rule,
            learning_rate,
            momentum: 0.0,
            rho: if rule == Rule::Adadelta { 0.95 } else { 0.9 },
            beta1: 0.9,
            beta2: 0.999,
            epsilon: match rule {
                Rule::Adagrad => 1e-10,
                Rule::Adadelta => 1e-6,
                _ => 1e-8,
            },
            l1: 0.0,
            l2: 0.0,
            beta_ftrl: 1.0,
        }
    }

    /// A zero learning rate is accepted (it freezes the weights) except for
    /// FTRL, whose closed form divides by it.
    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate;
        if !(lr.is_finite() && lr >= 0.0) || (self.rule == Rule::Ftrl && lr == 0.0) {
            return Err(Error::invalid(format!("learning rate {lr} is not allowed for {}", self.rule)));
        }
        let in_open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !(self.momentum >= 0.0) {
            return Err(Error::invalid("momentum must be non-negative"));
        }
        if !in_open_unit(self.rho) {
            return Err(Error::invalid("rho must lie in (0,1)"));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0) || !in_open_unit(self.beta2) {
            return Err(Error::invalid("beta1 must lie in [0,1) and beta2 in (0,1)"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be non-negative"));
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0 && self.beta_ftrl >= 0.0) {
            return Err(Error::invalid("FTRL l1, l2 and beta must be non-negative"));
        }
        Ok(())
    }
}

/// Per-rule accumulators, each with the parameter's length.
#[derive(Clone, Debug, PartialEq)]
pub enum Accumulators {
    Sgd { velocity: Vec<f64> },
    Adagrad { sum_sq: Vec<f64> },
    Adadelta { avg_sq_grad: Vec<f64>, avg_sq_delta: Vec<f64> },
    Rmsprop { avg_sq: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64> },
    Adamax { m: Vec<f64>, u: Vec<f64> },
    Nadam { m: Vec<f64>, v: Vec<f64> },
    Ftrl { z: Vec<f64>, n: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub acc: Accumulators,
    len: usize,
}

impl OptimizerState {
    pub fn new(rule: Rule, len: usize) -> Self {
        let z = || vec![0.0; len];
        let acc = match rule {
            Rule::Sgd => Accumulators::Sgd { velocity: z() },
            Rule::Adagrad => Accumulators::Adagrad { sum_sq: z() },
            Rule::Adadelta => Accumulators::Adadelta {
                avg_sq_grad: z(),
                avg_sq_delta: z(),
            },
            Rule::Rmsprop => Accumulators::Rmsprop { avg_sq: z() },
            Rule::Adam => Accumulators::Adam { m: z(), v: z() },
            Rule::Adamax => Accumulators::Adamax { m: z(), u: z() },
            Rule::Nadam => Accumulators::Nadam { m: z(), v: z() },
            Rule::Ftrl => Accumulators::Ftrl { z: z(), n: z() },
        };
        Self { t: 0, acc, len }
    }

    pub fn rule(&self) -> Rule {
        match self.acc {
            Accumulators::Sgd { .. } => Rule::Sgd,
            Accumulators::Adagrad { .. } => Rule::Adagrad,
            Accumulators::Adadelta { .. } => Rule::Adadelta,
            Accumulators::Rmsprop { .. } => Rule::Rmsprop,
            Accumulators::Adam { .. } => Rule::Adam,
            Accumulators::Adamax { .. } => Rule::Adamax,
            Accumulators::Nadam { .. } => Rule::Nadam,
            Accumulators::Ftrl { .. } => Rule::Ftrl,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Applies one update of `config.rule` to `params` in place.
pub fn step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, state for {}",
            params.len(),
            grads.len(),
            state.len
        )));
    }
    if state.rule() != config.rule {
        return Err(Error::State(format!(
            "state belongs to {}, config asks for {}",
            state.rule(),
            config.rule
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient {i} is {}", grads[i])));
    }
    state.t += 1;
    let t = state.t as i32;
    let c = config;
    let lr = c.learning_rate;
    match &mut state.acc {
        Accumulators::Sgd { velocity } => {
            for ((w, &g), vel) in params.iter_mut().zip(grads).zip(velocity) {
                *vel = c.momentum * *vel + g;
                *w -= lr * *vel;
            }
        }
        Accumulators::Adagrad { sum_sq } => {
            for ((w, &g), s) in params.iter_mut().zip(grads).zip(sum_sq) {
                *s += g * g;
                *w -= lr * g / (s.sqrt() + c.epsilon);
            }
        }
        Accumulators::Rmsprop { avg_sq } => {
            for ((w, &g), v) in params.iter_mut().zip(grads).zip(avg_sq) {
                *v = c.rho * *v + (1.0 - c.rho) * g * g;
                *w -= lr * g / (v.sqrt() + c.epsilon);
            }
        }
        Accumulators::Adadelta {
            avg_sq_grad,
            avg_sq_delta,
        } => {
            for (((w, &g), eg), ed) in params.iter_mut().zip(grads).zip(avg_sq_grad).zip(avg_sq_delta) {
                *eg = c.rho * *eg + (1.0 - c.rho) * g * g;
                let delta = -((*ed + c.epsilon).sqrt() / (*eg + c.epsilon).sqrt()) * g;
                *ed = c.rho * *ed + (1.0 - c.rho) * delta * delta;
                *w += lr * delta;
            }
        }
        Accumulators::Adam { m, v } => {
            let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
            for (((w, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Accumulators::Adamax { m, u } => {
            let step_size = lr / (1.0 - c.beta1.powi(t));
            for (((w, &g), m), u) in params.iter_mut().zip(grads).zip(m).zip(u) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *u = (c.beta2 * *u).max(g.abs());
                *w -= step_size * *m / (*u + c.epsilon);
            }
        }
        Accumulators::Nadam { m, v } => {
            let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
            for (((w, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let lookahead = c.beta1 * m_hat + (1.0 - c.beta1) * g / bc1;
                *w -= lr * lookahead / (v_hat.sqrt() + c.epsilon);
            }
        }
        Accumulators::Ftrl { z, n } => {
            for (((w, &g), z), n) in params.iter_mut().zip(grads).zip(z).zip(n) {
                // A zero gradient carries no information; leave the coordinate alone.
                if g == 0.0 {
                    continue;
                }
                let n_new = *n + g * g;
                let sigma = (n_new.sqrt() - n.sqrt()) / lr;
                *z += g - sigma * *w;
                *n = n_new;
                *w = if z.abs() <= c.l1 {
                    0.0
                } else {
                    -(*z - z.signum() * c.l1) / ((c.beta_ftrl + n.sqrt()) / lr + c.l2)
                };
            }
        }
    }
    Ok(())
}

/// One [`OptimizerState`] per model parameter, created on first use.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    states: Vec<OptimizerState>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            states: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn states(&self) -> &[OptimizerState] {
        &self.states
    }

    /// Updates every parameter from its stored gradient.
    pub fn step(&mut self, params: Vec<&mut Param>) -> Result<()> {
        if self.states.is_empty() {
            self.states = params.iter().map(|p| OptimizerState::new(self.config.rule, p.len())).collect();
        }
        if self.states.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} tensors, got {}",
                self.states.len(),
                params.len()
            )));
        }
        for (p, state) in params.into_iter().zip(&mut self.states) {
            if p.grad.len() != p.value.len() {
                return Err(Error::State("parameter has no gradient; run backward first".into()));
            }
            step(&mut p.value, &p.grad, state, &self.config)?;
        }
        Ok(())
    }
}
