//! Reference values of the pre-training and alignment losses.
//!
//! Every function is pure; stop-gradient markers of the training objective
//! have no effect on values and are therefore not modelled.

use ndarray::{Array2, Array3, ArrayView1};

use crate::{Error, Result};

const UNIT_TOL: f64 = 1e-6;

/// `T′×d` latent sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    values: Array2<f64>,
}

impl LatentSequence {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "latent shape {:?}",
                values.dim()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite latent entry".into()));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("ragged latent rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((rows.len(), d), flat).expect("shape checked"))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// `N×d` unit-norm embeddings with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    vectors: Array2<f64>,
    labels: Option<Vec<String>>,
}

impl EmbeddingBatch {
    pub fn new(vectors: Array2<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if let Some(l) = &labels {
            if l.len() != vectors.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} vectors",
                    l.len(),
                    vectors.nrows()
                )));
            }
        }
        for (i, row) in vectors.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if !((n - 1.0).abs() <= UNIT_TOL) {
                return Err(Error::Invalid(format!("embedding {i} has norm {n}")));
            }
        }
        Ok(Self { vectors, labels })
    }

    /// Normalizes each row before construction.
    pub fn normalized(mut vectors: Array2<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        for (i, mut row) in vectors.rows_mut().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if !(n > 0.0) {
                return Err(Error::ZeroNorm(i));
            }
            row /= n;
        }
        Self::new(vectors, labels)
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Temperature(tau))
    }
}

/// `log softmax(logits)[target]` with max subtraction.
fn log_softmax_at(logits: ArrayView1<f64>, target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits[target] - max - lse
}

/// Mean over time of per-step cosine similarity.
pub fn seq_cosine_similarity(pred: &LatentSequence, target: &LatentSequence) -> Result<f64> {
    if pred.values.dim() != target.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            pred.values.dim(),
            target.values.dim()
        )));
    }
    let mut total = 0.0;
    for (l, (p, t)) in pred
        .values
        .rows()
        .into_iter()
        .zip(target.values.rows())
        .enumerate()
    {
        let pp = p.dot(&p);
        let tt = t.dot(&t);
        if pp == 0.0 || tt == 0.0 {
            return Err(Error::ZeroNorm(l));
        }
        total += (p.dot(&t) / (pp * tt).sqrt()).clamp(-1.0, 1.0);
    }
    Ok(total / pred.steps() as f64)
}

/// Cross-view InfoNCE: row `n` of the similarity matrix has its positive at `n`.
pub fn infonce_cross_view(
    preds: &[LatentSequence],
    targets: &[LatentSequence],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    let n = preds.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if targets.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} predictions for {} targets",
            targets.len()
        )));
    }
    let mut logits = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            logits[[i, j]] = seq_cosine_similarity(&preds[i], &targets[j])? / tau;
        }
    }
    let total: f64 = (0..n).map(|i| log_softmax_at(logits.row(i), i)).sum();
    Ok(-total / n as f64)
}

/// `L_{A→B} + L_{B→A}`.
pub fn mcvpcl_loss(
    preds_ab: &[LatentSequence],
    targets_b: &[LatentSequence],
    preds_ba: &[LatentSequence],
    targets_a: &[LatentSequence],
    tau: f64,
) -> Result<f64> {
    Ok(infonce_cross_view(preds_ab, targets_b, tau)?
        + infonce_cross_view(preds_ba, targets_a, tau)?)
}

/// `Σ_j (P/(T′d̄)) Σ_ℓ ‖z̄_{ℓ,j} − e_{ℓ,j}‖²` over `T′×P×dim` arrays.
pub fn commitment_loss(chunks: &Array3<f64>, codes: &Array3<f64>) -> Result<f64> {
    if chunks.dim() != codes.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            chunks.dim(),
            codes.dim()
        )));
    }
    let (t, p, dim) = chunks.dim();
    if t == 0 || p == 0 || dim == 0 {
        return Err(Error::ShapeMismatch(format!(
            "empty chunk array {:?}",
            chunks.dim()
        )));
    }
    let scale = p as f64 / (t as f64 * (p * dim) as f64);
    let mut total = 0.0;
    for j in 0..p {
        let mut sq = 0.0;
        for l in 0..t {
            for c in 0..dim {
                let e = chunks[[l, j, c]] - codes[[l, j, c]];
                sq += e * e;
            }
        }
        total += scale * sq;
    }
    Ok(total)
}

/// Mean SmoothL1 with transition point 1.
pub fn smooth_l1(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    if x.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| {
            let e = (a - b).abs();
            if e < 1.0 {
                0.5 * e * e
            } else {
                e - 0.5
            }
        })
        .sum();
    Ok(total / x.len() as f64)
}

/// Symmetric IMU-text contrastive loss with the joint `1/(2N)` factor.
///
/// Swapping the batches transposes the logit matrix exactly, so the value is
/// bit-identical under the swap.
pub fn itc_loss(h_imu: &EmbeddingBatch, h_text: &EmbeddingBatch, tau_ml: f64) -> Result<f64> {
    check_tau(tau_ml)?;
    let n = h_imu.len();
    if h_text.len() != n || h_imu.vectors.ncols() != h_text.vectors.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            h_imu.vectors.dim(),
            h_text.vectors.dim()
        )));
    }
    let mut logits = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            logits[[i, j]] = h_imu.vectors.row(i).dot(&h_text.vectors.row(j)) / tau_ml;
        }
    }
    let total: f64 = (0..n)
        .map(|i| log_softmax_at(logits.row(i), i) + log_softmax_at(logits.column(i), i))
        .sum();
    Ok(-total / (2 * n) as f64)
}

/// Supervised contrastive loss; anchors without a same-label peer contribute nothing.
pub fn label_contrastive_loss(h: &EmbeddingBatch, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let labels = h
        .labels()
        .ok_or_else(|| Error::Invalid("label contrastive loss needs labels".into()))?;
    let n = h.len();
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let logits: Vec<f64> = others
            .iter()
            .map(|&j| h.vectors.row(i).dot(&h.vectors.row(j)) / tau)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let sum: f64 = positives
            .iter()
            .map(|&p| {
                let k = others
                    .iter()
                    .position(|&j| j == p)
                    .expect("positive is another index");
                logits[k] - max - lse
            })
            .sum();
        total += -sum / positives.len() as f64;
        anchors += 1;
    }
    if anchors == 0 {
        return Ok(0.0);
    }
    Ok(total / anchors as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seq(rows: &[&[f64]]) -> LatentSequence {
        LatentSequence::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = seq(&[&[1.0, 2.0, 3.0], &[-0.3, 0.7, 0.1]]);
        assert_eq!(seq_cosine_similarity(&a, &a).unwrap(), 1.0);
        let neg = LatentSequence::new(-a.values().clone()).unwrap();
        assert_eq!(seq_cosine_similarity(&a, &neg).unwrap(), -1.0);
        let p = seq(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let t = seq(&[&[0.0, 1.0], &[0.0, 5.0]]);
        assert_eq!(seq_cosine_similarity(&p, &t).unwrap(), 0.5);
        let z = seq(&[&[0.0, 0.0], &[0.0, 5.0]]);
        assert!(matches!(
            seq_cosine_similarity(&p, &z),
            Err(Error::ZeroNorm(0))
        ));
    }

    #[test]
    fn infonce_examples() {
        let a = seq(&[&[1.0, 0.0]]);
        let b = seq(&[&[0.0, 1.0]]);
        assert_eq!(
            infonce_cross_view(std::slice::from_ref(&a), std::slice::from_ref(&b), 0.1).unwrap(),
            0.0
        );
        let v = infonce_cross_view(&[a.clone(), b.clone()], &[a.clone(), b.clone()], 0.1).unwrap();
        let expect = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((expect - 4.54e-5).abs() < 1e-7);
        let same = infonce_cross_view(
            &[a.clone(), a.clone(), a.clone()],
            &[a.clone(), a.clone(), a.clone()],
            0.5,
        )
        .unwrap();
        assert!((same - 3f64.ln()).abs() < 1e-15);
        assert!(matches!(
            infonce_cross_view(std::slice::from_ref(&a), &[b], 0.0),
            Err(Error::Temperature(_))
        ));
    }

    #[test]
    fn commitment_examples() {
        let z = Array3::from_shape_vec((1, 1, 2), vec![1.0, 0.0]).unwrap();
        let e = Array3::zeros((1, 1, 2));
        assert_eq!(commitment_loss(&z, &e).unwrap(), 0.5);
        assert_eq!(commitment_loss(&z, &z).unwrap(), 0.0);
        let z2 = Array3::from_shape_vec((2, 1, 2), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            commitment_loss(&z2, &Array3::zeros((2, 1, 2))).unwrap(),
            0.5
        );
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(&array![[0.5]], &array![[0.0]]).unwrap(), 0.125);
        assert_eq!(smooth_l1(&array![[2.0]], &array![[0.0]]).unwrap(), 1.5);
        assert_eq!(
            smooth_l1(&array![[2.0, 1.0]], &array![[2.0, 1.0]]).unwrap(),
            0.0
        );
        assert!(smooth_l1(&array![[1.0]], &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn itc_single_and_symmetry() {
        let a = EmbeddingBatch::normalized(array![[1.0, 2.0]], None).unwrap();
        let b = EmbeddingBatch::normalized(array![[0.0, 1.0]], None).unwrap();
        assert_eq!(itc_loss(&a, &b, 0.05).unwrap(), 0.0);
        let a =
            EmbeddingBatch::normalized(array![[1.0, 2.0], [0.3, -1.0], [2.0, 0.1]], None).unwrap();
        let b =
            EmbeddingBatch::normalized(array![[0.2, 1.0], [1.0, 1.0], [-1.0, 0.4]], None).unwrap();
        assert_eq!(
            itc_loss(&a, &b, 0.05).unwrap().to_bits(),
            itc_loss(&b, &a, 0.05).unwrap().to_bits()
        );
    }

    #[test]
    fn label_examples() {
        let v = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let distinct =
            EmbeddingBatch::new(v.clone(), Some(vec!["a".into(), "b".into(), "c".into()])).unwrap();
        assert_eq!(label_contrastive_loss(&distinct, 0.1).unwrap(), 0.0);
        let pair = EmbeddingBatch::new(
            array![[0.6, 0.8], [0.6, 0.8]],
            Some(vec!["x".into(), "x".into()]),
        )
        .unwrap();
        assert_eq!(label_contrastive_loss(&pair, 0.1).unwrap(), 0.0);
        assert!(label_contrastive_loss(&EmbeddingBatch::new(v, None).unwrap(), 0.1).is_err());
    }

    #[test]
    fn unit_norm_enforced() {
        assert!(EmbeddingBatch::new(array![[1.0, 1.0]], None).is_err());
        assert!(matches!(
            EmbeddingBatch::normalized(array![[0.0, 0.0]], None),
            Err(Error::ZeroNorm(0))
        ));
    }
}
