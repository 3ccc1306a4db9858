//! Translation cross-entropy, CTC over glosses, and their weighted sum.

use slt_tensor::Tensor;

use crate::data::vocab::BLANK;
use crate::error::{Error, Result};

/// `log(exp(a) + exp(b))` tolerating `-inf`.
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Mean over non-pad positions of `−log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], pad: usize) -> Result<Tensor> {
    let &[len, vocab] = logits.shape() else {
        return Err(Error::Contract(format!("cross entropy expects [L, V] logits, got {:?}", logits.shape())));
    };
    if targets.len() != len {
        return Err(Error::Contract(format!("{} targets for {len} logit rows", targets.len())));
    }
    if let Some(&id) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::Vocabulary { id, size: vocab });
    }
    let counted = targets.iter().filter(|&&t| t != pad).count();
    if counted == 0 {
        return Err(Error::Contract("every target position is padding".into()));
    }
    let x = logits.data();
    let mut probs = vec![0.0; len * vocab];
    let mut total = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        let row = &x[i * vocab..(i + 1) * vocab];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (p, v) in probs[i * vocab..(i + 1) * vocab].iter_mut().zip(row) {
            *p = (v - log_z).exp();
        }
        if target != pad {
            total += log_z - row[target];
        }
    }
    drop(x);
    let n = counted as f64;
    let targets = targets.to_vec();
    Ok(Tensor::from_op("cross_entropy", vec![total / n], &[], vec![logits.clone()], move |g, _| {
        let mut grad = probs.clone();
        for (i, &target) in targets.iter().enumerate() {
            let row = &mut grad[i * vocab..(i + 1) * vocab];
            if target == pad {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row[target] -= 1.0;
                row.iter_mut().for_each(|v| *v *= g[0] / n);
            }
        }
        vec![Some(grad)]
    })?)
}

/// Fewest frames that can emit `targets`: one per label plus a separating
/// blank between equal neighbours.
pub fn ctc_min_frames(targets: &[usize]) -> usize {
    targets.len() + targets.windows(2).filter(|w| w[0] == w[1]).count()
}

struct CtcLattice {
    log_likelihood: f64,
    /// `[T, S]` forward variables, emission at `t` included.
    alpha: Vec<f64>,
    /// `[T, S]` backward variables, emission at `t` excluded.
    beta: Vec<f64>,
    labels: Vec<usize>,
}

fn ctc_lattice(lp: &[f64], frames: usize, classes: usize, targets: &[usize]) -> CtcLattice {
    let labels: Vec<usize> = std::iter::once(BLANK)
        .chain(targets.iter().flat_map(|&l| [l, BLANK]))
        .collect();
    let s_len = labels.len();
    let skip_allowed = |s: usize| s >= 2 && labels[s] != BLANK && labels[s] != labels[s - 2];
    let y = |t: usize, s: usize| lp[t * classes + labels[s]];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; frames * s_len];
    alpha[0] = y(0, 0);
    if s_len > 1 {
        alpha[1] = y(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if skip_allowed(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == neg { neg } else { acc + y(t, s) };
        }
    }

    let mut beta = vec![neg; frames * s_len];
    let last = (frames - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let mut acc = beta[next + s] + y(t + 1, s);
            if s + 1 < s_len {
                acc = log_add(acc, beta[next + s + 1] + y(t + 1, s + 1));
            }
            if s + 2 < s_len && skip_allowed(s + 2) {
                acc = log_add(acc, beta[next + s + 2] + y(t + 1, s + 2));
            }
            beta[t * s_len + s] = acc;
        }
    }

    let end = &alpha[last..];
    let log_likelihood = if s_len > 1 { log_add(end[s_len - 1], end[s_len - 2]) } else { end[0] };
    CtcLattice { log_likelihood, alpha, beta, labels }
}

/// Negative log-likelihood of `targets` (gloss ids ≥ 1, blank = 0) under
/// per-frame log-probabilities `[T, G + 1]`, summed over every monotonic
/// alignment. The gradient flows to `log_probs` as given; normalisation is
/// the caller's log-softmax.
pub fn ctc_loss(log_probs: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let &[frames, classes] = log_probs.shape() else {
        return Err(Error::Contract(format!("CTC expects [T, G+1] log-probabilities, got {:?}", log_probs.shape())));
    };
    if targets.is_empty() {
        return Err(Error::Contract("CTC target must hold at least one gloss".into()));
    }
    if let Some(&id) = targets.iter().find(|&&t| t == BLANK || t >= classes) {
        return Err(Error::Vocabulary { id, size: classes });
    }
    let required = ctc_min_frames(targets);
    if frames < required {
        return Err(Error::InfeasibleAlignment { frames, required });
    }
    let lattice = ctc_lattice(&log_probs.data(), frames, classes, targets);
    let log_p = lattice.log_likelihood;
    Ok(Tensor::from_op("ctc_loss", vec![-log_p], &[], vec![log_probs.clone()], move |g, _| {
        let s_len = lattice.labels.len();
        let mut grad = vec![0.0; frames * classes];
        for t in 0..frames {
            for (s, &label) in lattice.labels.iter().enumerate() {
                let a = lattice.alpha[t * s_len + s];
                let b = lattice.beta[t * s_len + s];
                if a > f64::NEG_INFINITY && b > f64::NEG_INFINITY {
                    grad[t * classes + label] -= g[0] * (a + b - log_p).exp();
                }
            }
        }
        vec![Some(grad)]
    })?)
}

/// Loss components of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub ce: f64,
    pub ctc: Option<f64>,
    pub total: f64,
}

/// `ce + lambda · ctc`; with no CTC term or a zero weight the result is
/// `ce` itself.
pub fn joint_loss(ce: &Tensor, ctc: Option<&Tensor>, lambda_ctc: f64) -> Result<(Tensor, LossReport)> {
    if !(lambda_ctc >= 0.0) {
        return Err(Error::config(format!("lambda_ctc must be non-negative, got {lambda_ctc}")));
    }
    match ctc {
        Some(ctc) if lambda_ctc > 0.0 => {
            let total = ce.add(&ctc.scale(lambda_ctc))?;
            let report = LossReport { ce: ce.item(), ctc: Some(ctc.item()), total: total.item() };
            Ok((total, report))
        }
        _ => Ok((ce.clone(), LossReport { ce: ce.item(), ctc: None, total: ce.item() })),
    }
}
