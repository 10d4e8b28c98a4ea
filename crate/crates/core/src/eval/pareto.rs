use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::distance::to_io;
use crate::error::Result;
use crate::search_space::ArchitectureId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub arch: ArchitectureId,
    pub latency_ms: f64,
    pub accuracy: f64,
}

/// Points not dominated in (lower latency, higher accuracy), sorted by
/// latency ascending. Points with identical coordinates are all kept.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.latency_ms
            .total_cmp(&b.latency_ms)
            .then(b.accuracy.total_cmp(&a.accuracy))
            .then(a.arch.cmp(&b.arch))
    });
    let mut front = Vec::new();
    // Best accuracy among strictly faster points.
    let mut best_faster = f64::NEG_INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let lat = sorted[i].latency_ms;
        let group_best = sorted[i].accuracy;
        let mut j = i;
        while j < sorted.len() && sorted[j].latency_ms == lat {
            let p = sorted[j];
            if p.accuracy == group_best && p.accuracy > best_faster {
                front.push(p);
            }
            j += 1;
        }
        best_faster = best_faster.max(group_best);
        i = j;
    }
    front
}

/// Share of the true front's architectures that the predicted front also
/// contains.
pub fn pareto_agreement(predicted: &[ParetoPoint], truth: &[ParetoPoint]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let pred: HashSet<ArchitectureId> = predicted.iter().map(|p| p.arch).collect();
    let hits = truth.iter().filter(|p| pred.contains(&p.arch)).count();
    hits as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub arch_id: u32,
    pub latency_ms: f64,
    pub accuracy: f64,
    pub on_true_front: bool,
    pub on_predicted_front: bool,
}

/// Marks each architecture's membership in the fronts built from true and
/// predicted latencies. Rows carry the true latency.
pub fn pareto_table(
    archs: &[ArchitectureId],
    true_latency: &[f64],
    predicted_latency: &[f64],
    accuracy: &[f64],
) -> (Vec<ParetoRow>, f64) {
    let points = |lat: &[f64]| -> Vec<ParetoPoint> {
        archs
            .iter()
            .zip(lat)
            .zip(accuracy)
            .map(|((&arch, &latency_ms), &accuracy)| ParetoPoint {
                arch,
                latency_ms,
                accuracy,
            })
            .collect()
    };
    let true_front = pareto_front(&points(true_latency));
    let pred_front = pareto_front(&points(predicted_latency));
    let on_true: HashSet<_> = true_front.iter().map(|p| p.arch).collect();
    let on_pred: HashSet<_> = pred_front.iter().map(|p| p.arch).collect();
    let rows = archs
        .iter()
        .enumerate()
        .map(|(i, a)| ParetoRow {
            arch_id: a.get(),
            latency_ms: true_latency[i],
            accuracy: accuracy[i],
            on_true_front: on_true.contains(a),
            on_predicted_front: on_pred.contains(a),
        })
        .collect();
    (rows, pareto_agreement(&pred_front, &true_front))
}

pub fn write_pareto_csv<W: Write>(rows: &[ParetoRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(to_io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(id: u32, latency_ms: f64, accuracy: f64) -> ParetoPoint {
        ParetoPoint {
            arch: ArchitectureId::new(id).unwrap(),
            latency_ms,
            accuracy,
        }
    }

    #[test]
    fn worked_example() {
        let front = pareto_front(&[pt(0, 10.0, 0.90), pt(1, 5.0, 0.80), pt(2, 7.0, 0.95)]);
        assert_eq!(front, vec![pt(1, 5.0, 0.80), pt(2, 7.0, 0.95)]);
    }

    #[test]
    fn trivial_inputs() {
        assert!(pareto_front(&[]).is_empty());
        assert_eq!(pareto_front(&[pt(3, 1.0, 0.5)]), vec![pt(3, 1.0, 0.5)]);
    }

    #[test]
    fn ties_are_kept() {
        let front = pareto_front(&[pt(1, 2.0, 0.7), pt(2, 2.0, 0.7), pt(3, 2.0, 0.6)]);
        assert_eq!(front, vec![pt(1, 2.0, 0.7), pt(2, 2.0, 0.7)]);
        // Same accuracy, slower: dominated.
        let front = pareto_front(&[pt(1, 1.0, 0.7), pt(2, 2.0, 0.7)]);
        assert_eq!(front, vec![pt(1, 1.0, 0.7)]);
    }

    #[test]
    fn agreement() {
        let a = vec![pt(1, 1.0, 0.5), pt(2, 2.0, 0.6)];
        let b = vec![pt(3, 1.0, 0.5)];
        assert_eq!(pareto_agreement(&a, &a), 1.0);
        assert_eq!(pareto_agreement(&b, &a), 0.0);
        assert_eq!(pareto_agreement(&a[..1], &a), 0.5);
    }

    #[test]
    fn perfect_predictor_agrees() {
        let archs: Vec<_> = (0..50).map(|i| ArchitectureId::new(i * 300).unwrap()).collect();
        let lat: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 + 1.0).collect();
        let acc: Vec<f64> = (0..50).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
        let (rows, agreement) = pareto_table(&archs, &lat, &lat, &acc);
        assert_eq!(agreement, 1.0);
        assert!(rows.iter().all(|r| r.on_true_front == r.on_predicted_front));
    }
}
