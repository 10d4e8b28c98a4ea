use std::io::Write;

use crate::error::{Error, Result};
use crate::hwcounters::HardwareDescriptor;
use crate::predictor::FeatureNorm;

/// Pairwise Euclidean distances; symmetric with a zero diagonal.
pub fn euclidean_distance_matrix(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = vectors.len();
    if let Some(first) = vectors.first() {
        if let Some(v) = vectors.iter().find(|v| v.len() != first.len()) {
            return Err(Error::Domain(format!(
                "vector of length {} among vectors of length {}",
                v.len(),
                first.len()
            )));
        }
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

/// Distances between flattened descriptors. With `normalized`, features are
/// `log1p`-transformed and z-scored across the given descriptors first, as
/// the model sees them; otherwise raw values are compared.
pub fn descriptor_distance_matrix(
    descriptors: &[HardwareDescriptor],
    normalized: bool,
) -> Result<Vec<Vec<f64>>> {
    let raw: Vec<Vec<f64>> = descriptors.iter().map(HardwareDescriptor::flattened).collect();
    if !normalized {
        return euclidean_distance_matrix(&raw);
    }
    let norm = FeatureNorm::fit(&raw);
    let feats: Vec<Vec<f64>> = raw.iter().map(|r| norm.apply(r)).collect();
    euclidean_distance_matrix(&feats)
}

/// Square CSV with a label header row and a label column.
pub fn write_distance_csv<W: Write>(labels: &[String], matrix: &[Vec<f64>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![String::from("device_id")];
    header.extend(labels.iter().cloned());
    out.write_record(&header).map_err(to_io)?;
    for (label, row) in labels.iter().zip(matrix) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(to_io)?;
    }
    out.flush()?;
    Ok(())
}

pub(super) fn to_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let m = euclidean_distance_matrix(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m, vec![vec![0.0, 5.0], vec![5.0, 0.0]]);
    }

    #[test]
    fn identical_vectors_have_zero_distance() {
        let v = vec![1.5, -2.0, 7.0];
        let m = euclidean_distance_matrix(&[v.clone(), v]).unwrap();
        assert_eq!(m[0][1], 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(euclidean_distance_matrix(&[vec![0.0], vec![1.0, 2.0]]).is_err());
    }
}
