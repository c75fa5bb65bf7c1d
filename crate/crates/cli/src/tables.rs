//! Text renderings of matrices shared by several stages.

use std::fmt::Write;

use serde::Serialize;

use snerv_core::MetricMatrix;

pub fn component_ids(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("c{j}")).collect()
}

/// Square matrix as CSV with component ids on both axes; undefined entries
/// are written as `null`.
pub fn metric_csv(m: &MetricMatrix, ids: &[String]) -> String {
    let mut out = String::from("component");
    for id in ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..ids.len() {
            match m.get(i, j) {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push_str(",null"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn counts_csv(counts: &ndarray::Array2<usize>, ids: &[String]) -> String {
    let mut out = String::from("component");
    for id in ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..ids.len() {
            let _ = write!(out, ",{}", counts[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// JSON form of a correlation result: nested rows with `null` entries.
#[derive(Debug, Serialize)]
pub struct MatricesJson {
    pub components: Vec<String>,
    pub pixels: usize,
    pub dsc: Vec<Vec<Option<f64>>>,
    pub pcc: Vec<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_counts: Option<Vec<Vec<usize>>>,
}

impl MatricesJson {
    pub fn new(c: &snerv_core::CorrelationMatrices, pixels: usize) -> Self {
        Self {
            components: c.components.iter().map(|&j| format!("c{j}")).collect(),
            pixels,
            dsc: c.dsc.to_rows(),
            pcc: c.pcc.to_rows(),
            support_counts: Some(c.support_counts.rows().into_iter().map(|r| r.to_vec()).collect()),
        }
    }

    pub fn difference(d: &snerv_core::metrics::DifferenceMatrices<f64>, pixels: usize) -> Self {
        Self {
            components: d.components.iter().map(|&j| format!("c{j}")).collect(),
            pixels,
            dsc: d.dsc.to_rows(),
            pcc: d.pcc.to_rows(),
            support_counts: None,
        }
    }
}
