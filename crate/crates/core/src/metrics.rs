//! NRMSE evaluation, per-round records and cross-run comparison tables.

use std::cmp::Ordering;
use std::io::Write;

use serde::Serialize;

use crate::data::ClientDataset;
use crate::fl::Method;
use crate::nn::{predict, MlpShape, ParamVector};
use crate::similarity::Provenance;
use crate::{Error, Result};

/// RMSE divided by the range of `truth`.
pub fn nrmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("truth"));
    }
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            (lo.min(t), hi.max(t))
        });
    if !(hi > lo) {
        return Err(Error::ConstantTruth);
    }
    let mse = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mse.sqrt() / (hi - lo))
}

/// NRMSE of `model` on the client's test split.
pub fn evaluate_client(model: &ParamVector, shape: &MlpShape, ds: &ClientDataset) -> Result<f64> {
    if ds.test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let predicted = predict(model, shape, &ds.test)?;
    let truth: Vec<f64> = ds.test.iter().map(|s| s.target).collect();
    nrmse(&predicted, &truth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRoundRecord {
    pub client: usize,
    pub available: bool,
    pub provenance: Provenance,
    pub test_nrmse: f64,
    pub train_loss: f64,
    /// Budget released this round; `None` when DP is off or nothing was sent.
    pub epsilon_used: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientRoundRecord>,
    pub global_test_nrmse_mean: f64,
}

impl RoundReport {
    pub fn new(round: usize, clients: Vec<ClientRoundRecord>) -> Self {
        let mean = if clients.is_empty() {
            0.0
        } else {
            clients.iter().map(|c| c.test_nrmse).sum::<f64>() / clients.len() as f64
        };
        Self {
            round,
            clients,
            global_test_nrmse_mean: mean,
        }
    }
}

pub const METRICS_HEADER: &str = "round,client,available,provenance,test_nrmse,train_loss,epsilon";

pub fn write_metrics_csv<W: Write>(mut out: W, reports: &[RoundReport]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for report in reports {
        for c in &report.clients {
            let eps = c.epsilon_used.map(|e| e.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                report.round, c.client, c.available, c.provenance, c.test_nrmse, c.train_loss, eps
            )?;
        }
    }
    Ok(())
}

/// Final per-community NRMSE of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub dropout_ratio: f64,
    /// `None` means no noise (infinite budget).
    pub epsilon: Option<f64>,
    pub mu: f64,
    pub epochs_local: usize,
    pub seed: u64,
    pub community_nrmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub method: Method,
    pub dropout_ratio: f64,
    pub epsilon: Option<f64>,
    pub mu: f64,
    pub epochs_local: usize,
    pub seed: u64,
    pub community_nrmse: Vec<f64>,
    pub mean: f64,
}

fn eps_key(e: Option<f64>) -> f64 {
    e.unwrap_or(f64::INFINITY)
}

fn row_order(a: &TableRow, b: &TableRow) -> Ordering {
    a.method
        .cmp(&b.method)
        .then(a.dropout_ratio.total_cmp(&b.dropout_ratio))
        .then(eps_key(a.epsilon).total_cmp(&eps_key(b.epsilon)))
        .then(a.mu.total_cmp(&b.mu))
        .then(a.epochs_local.cmp(&b.epochs_local))
        .then(a.seed.cmp(&b.seed))
}

/// One row per run, sorted by method, dropout ratio, budget, mu, local
/// epochs and seed.
pub fn comparison_table(runs: &[RunSummary]) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = runs
        .iter()
        .map(|r| {
            let mean = if r.community_nrmse.is_empty() {
                f64::NAN
            } else {
                r.community_nrmse.iter().sum::<f64>() / r.community_nrmse.len() as f64
            };
            TableRow {
                method: r.method,
                dropout_ratio: r.dropout_ratio,
                epsilon: r.epsilon,
                mu: r.mu,
                epochs_local: r.epochs_local,
                seed: r.seed,
                community_nrmse: r.community_nrmse.clone(),
                mean,
            }
        })
        .collect();
    rows.sort_by(row_order);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Sample;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nrmse_hand_values() {
        assert_eq!(nrmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(nrmse(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 0.5);
        // uniform offset c on a truth of range rho -> |c| / rho
        let truth = [0.0, 1.0, 4.0, 2.0];
        let shifted: Vec<f64> = truth.iter().map(|t| t - 0.5).collect();
        assert_abs_diff_eq!(nrmse(&shifted, &truth).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn nrmse_errors() {
        assert!(matches!(
            nrmse(&[1.0, 2.0], &[3.0, 3.0]),
            Err(Error::ConstantTruth)
        ));
        assert!(nrmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(nrmse(&[], &[]).is_err());
    }

    #[test]
    fn zero_model_has_positive_error() {
        let shape = MlpShape::new(1, 2).unwrap();
        let model = ParamVector::zeros(shape.param_count());
        let ds = ClientDataset {
            community_id: 0,
            train: vec![],
            test: vec![Sample::new(vec![0.0], 1.0), Sample::new(vec![1.0], 3.0)],
            train_timestamps: vec![],
            test_timestamps: vec![],
            normalization: vec![],
            profile: None,
        };
        // RMSE = sqrt((1 + 9) / 2), range 2
        assert_abs_diff_eq!(
            evaluate_client(&model, &shape, &ds).unwrap(),
            5f64.sqrt() / 2.0,
            epsilon = 1e-15
        );
    }

    fn run(method: Method, n_c: f64, eps: Option<f64>, vals: &[f64]) -> RunSummary {
        RunSummary {
            method,
            dropout_ratio: n_c,
            epsilon: eps,
            mu: 5e-4,
            epochs_local: 10,
            seed: 0,
            community_nrmse: vals.to_vec(),
        }
    }

    #[test]
    fn table_rows_sorted_with_means() {
        let runs = vec![
            run(Method::A4, 0.5, Some(0.1), &[0.1, 0.3]),
            run(Method::A2, 0.5, None, &[0.2, 0.2]),
            run(Method::A4, 0.25, None, &[0.4, 0.2]),
            run(Method::A4, 0.25, Some(1.0), &[0.4, 0.4]),
        ];
        let rows = comparison_table(&runs);
        let keys: Vec<_> = rows
            .iter()
            .map(|r| (r.method, r.dropout_ratio, r.epsilon))
            .collect();
        assert_eq!(
            keys,
            vec![
                (Method::A2, 0.5, None),
                (Method::A4, 0.25, Some(1.0)),
                (Method::A4, 0.25, None),
                (Method::A4, 0.5, Some(0.1)),
            ]
        );
        assert_abs_diff_eq!(rows[3].mean, 0.2, epsilon = 1e-15);
        let mut reversed = runs.clone();
        reversed.reverse();
        assert_eq!(comparison_table(&reversed), rows);
        assert_eq!(comparison_table(&runs[..1]).len(), 1);
    }

    #[test]
    fn metrics_csv_layout() {
        let report = RoundReport::new(
            3,
            vec![
                ClientRoundRecord {
                    client: 0,
                    available: true,
                    provenance: Provenance::Uploaded,
                    test_nrmse: 0.25,
                    train_loss: 1.5,
                    epsilon_used: Some(0.1),
                },
                ClientRoundRecord {
                    client: 1,
                    available: false,
                    provenance: Provenance::Excluded,
                    test_nrmse: 0.75,
                    train_loss: 2.0,
                    epsilon_used: None,
                },
            ],
        );
        assert_eq!(report.global_test_nrmse_mean, 0.5);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[report]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "round,client,available,provenance,test_nrmse,train_loss,epsilon\n\
             3,0,true,uploaded,0.25,1.5,0.1\n\
             3,1,false,excluded,0.75,2,\n"
        );
    }
}
