//! Agreement between reconstructors and the precision sanity check.

use super::AnalysisError;
use crate::metrics::{bertscore, EmbeddingProvider};

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::Argument(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(AnalysisError::Argument(format!(
            "pearson needs at least 3 pairs, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean precision of each reconstruction against the debate summary it was
/// extracted from.
pub fn reconstructor_precision_check(
    debate_summary: &str,
    reconstructions: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<f64, AnalysisError> {
    if reconstructions.is_empty() {
        return Err(AnalysisError::Argument("no reconstructions to check".into()));
    }
    let mut total = 0.0;
    for r in reconstructions {
        total += bertscore(r, debate_summary, provider, None)?.precision;
    }
    Ok(total / reconstructions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::StubEmbeddings;

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert_eq!(pearson(&xs, &ys).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::UndefinedCorrelation)
        ));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn verbatim_excerpt_has_unit_precision() {
        let stub = StubEmbeddings::new(64, "");
        let d = "The committee backed the tariff plan. Opponents warned of retaliation.";
        let p = reconstructor_precision_check(
            d,
            &["Opponents warned of retaliation.".to_string()],
            &stub,
        )
        .unwrap();
        assert!((p - 1.0).abs() < 1e-12);
    }
}
