//! Softmax cross-entropy.

/// Returns `(loss, ∂loss/∂logits)` for one example.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label {label} out of range for {} logits", logits.len());
    let top = argmax(logits);
    let max = logits[top];
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    // log Σ exp = max + ln(1 + rest); ln_1p keeps tiny losses accurate
    let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, e)| e).sum();
    let total = 1.0 + rest;
    let loss = (max - logits[label]) + rest.ln_1p();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / total).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
