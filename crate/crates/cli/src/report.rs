//! Markdown and HTML report assembled from the outputs of the other stages.

use std::fmt::Write;

use serde_json::Value;

use snerv_core::io::read_matrix;
use snerv_core::spectra::max_normalize;
use snerv_core::unmixing::{best_unique_assignment, match_components, MAX_ASSIGNMENT_COMPONENTS};

use crate::context::{Context, Stage};
use crate::error::{CliError, Result};
use crate::stages::{read_output, UnmixSummary, Written};
use crate::svg::{self, escape};

enum Block {
    Heading(String),
    Para(String),
    Table(Vec<String>, Vec<Vec<String>>),
    Image(String, String),
}

fn render_md(title: &str, blocks: &[Block]) -> String {
    let mut out = format!("# {title}\n");
    for b in blocks {
        out.push('\n');
        match b {
            Block::Heading(h) => {
                let _ = writeln!(out, "## {h}");
            }
            Block::Para(p) => {
                let _ = writeln!(out, "{p}");
            }
            Block::Table(head, rows) => {
                let _ = writeln!(out, "| {} |", head.join(" | "));
                let _ = writeln!(out, "|{}", "---|".repeat(head.len()));
                for r in rows {
                    let _ = writeln!(out, "| {} |", r.join(" | "));
                }
            }
            Block::Image(alt, src) => {
                let _ = writeln!(out, "![{alt}]({src})");
            }
        }
    }
    out
}

fn render_html(title: &str, blocks: &[Block]) -> String {
    let mut out = format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{t}</title>\n\
         <style>body{{font-family:sans-serif;max-width:60em;margin:2em auto}}\
         table{{border-collapse:collapse}}td,th{{border:1px solid #ccc;padding:2px 8px;text-align:right}}</style>\n\
         </head><body>\n<h1>{t}</h1>\n",
        t = escape(title)
    );
    for b in blocks {
        match b {
            Block::Heading(h) => {
                let _ = writeln!(out, "<h2>{}</h2>", escape(h));
            }
            Block::Para(p) => {
                let _ = writeln!(out, "<p>{}</p>", escape(p));
            }
            Block::Table(head, rows) => {
                out.push_str("<table>\n<tr>");
                for h in head {
                    let _ = write!(out, "<th>{}</th>", escape(h));
                }
                out.push_str("</tr>\n");
                for r in rows {
                    out.push_str("<tr>");
                    for c in r {
                        let _ = write!(out, "<td>{}</td>", escape(c));
                    }
                    out.push_str("</tr>\n");
                }
                out.push_str("</table>\n");
            }
            Block::Image(alt, src) => {
                let _ = writeln!(out, "<p><img src=\"{}\" alt=\"{}\"></p>", escape(src), escape(alt));
            }
        }
    }
    out.push_str("</body></html>\n");
    out
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.3}"),
        None => "–".into(),
    }
}

/// Table of one matrix out of a `MatricesJson` object.
fn matrix_table(obj: &Value, key: &str) -> Block {
    let ids: Vec<String> = obj["components"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let mut head = vec![String::new()];
    head.extend(ids.iter().cloned());
    let rows = obj[key]
        .as_array()
        .map(|rows| {
            rows.iter()
                .zip(&ids)
                .map(|(r, id)| {
                    let mut row = vec![id.clone()];
                    row.extend(r.as_array().into_iter().flatten().map(num));
                    row
                })
                .collect()
        })
        .unwrap_or_default();
    Block::Table(head, rows)
}

pub fn report(ctx: &Context, out: &mut Written) -> Result<()> {
    let unmix_dir = ctx.dir(Stage::Unmix);
    let summary: UnmixSummary = read_output(&unmix_dir.join("summary.json"))?;
    let (h, _) = read_matrix::<f64>(&unmix_dir.join("components.json"))?;
    let lib = ctx.library()?;
    if lib.grid().wavelengths() != summary.wavelengths_nm.as_slice() {
        return Err(CliError::ConfigInvalid(
            "the library and the stacks use different wavelength grids".into(),
        ));
    }
    let matrices: Value = read_output(&ctx.dir(Stage::Correlate).join("matrices.json"))?;
    let cluster_dir = ctx.dir(Stage::Cluster);
    let tree: Value = read_output(&cluster_dir.join("tree.json"))?;
    let clusters: Value = read_output(&cluster_dir.join("clusters.json"))?;
    let dir = ctx.dir(Stage::Report);

    let mut blocks = vec![Block::Heading("Unmixing".into())];
    let cfg = &summary.config;
    blocks.push(Block::Para(format!(
        "{} spectra from {} image(s), {} bands, k = {}, λ1 = {}, λF = {}. Relative error {:.4}% after {} iterations ({}).",
        summary.spectra,
        summary.stacks.len(),
        summary.bands,
        summary.k,
        cfg.lambda1,
        cfg.lambda_f,
        100.0 * summary.relative_error,
        summary.iterations,
        if summary.converged { "converged" } else { "iteration limit reached" }
    )));
    blocks.push(Block::Para(format!(
        "{:.1}% of the coefficients are exactly zero.",
        100.0 * summary.zero_fraction
    )));

    let trace_csv = std::fs::read_to_string(unmix_dir.join("trace.csv"))?;
    let trace: Vec<(f64, f64)> = trace_csv
        .lines()
        .skip(1)
        .filter_map(|l| {
            let (i, v) = l.split_once(',')?;
            Some((i.parse().ok()?, v.parse().ok()?))
        })
        .collect();
    out.text(
        dir.join("trace.svg"),
        &svg::line_plot(
            "Objective",
            "iteration",
            "objective",
            &[svg::Series {
                name: "objective".into(),
                points: trace,
            }],
            true,
        ),
    )?;
    blocks.push(Block::Image("objective trace".into(), "trace.svg".into()));

    blocks.push(Block::Heading("Components and library".into()));
    let matches = match_components(h.view(), &lib)?;
    blocks.push(Block::Para(
        "Greedy naming: component/entry pairs taken in order of increasing spectral angle.".into(),
    ));
    blocks.push(Block::Table(
        vec!["component".into(), "chromophore".into(), "angle (rad)".into(), "angle (°)".into()],
        matches
            .iter()
            .map(|m| {
                vec![
                    format!("c{}", m.component),
                    m.chromophore.clone().unwrap_or_else(|| "–".into()),
                    m.angle.map_or("–".into(), |a| format!("{a:.3}")),
                    m.angle.map_or("–".into(), |a| format!("{:.1}", a.to_degrees())),
                ]
            })
            .collect(),
    ));
    if lib.len() <= h.nrows() && h.nrows() <= MAX_ASSIGNMENT_COMPONENTS {
        let best = best_unique_assignment(h.view(), &lib)?;
        blocks.push(Block::Para("Assignment minimizing the total angle over library entries:".into()));
        blocks.push(Block::Table(
            vec!["chromophore".into(), "component".into(), "angle (rad)".into()],
            best.iter()
                .map(|m| vec![m.chromophore.clone(), format!("c{}", m.component), format!("{:.3}", m.angle)])
                .collect(),
        ));
    }
    let mut series = Vec::new();
    for m in &matches {
        let Some(name) = &m.chromophore else { continue };
        let comp = max_normalize(h.row(m.component)).unwrap_or_else(|_| h.row(m.component).to_owned());
        let entry = lib.get(name).expect("matched entry exists");
        let entry = max_normalize(entry).unwrap_or_else(|_| entry.to_owned());
        let wl = lib.grid().wavelengths();
        series.push(svg::Series {
            name: format!("c{}", m.component),
            points: wl.iter().copied().zip(comp.iter().copied()).collect(),
        });
        series.push(svg::Series {
            name: name.clone(),
            points: wl.iter().copied().zip(entry.iter().copied()).collect(),
        });
    }
    out.text(
        dir.join("matches.svg"),
        &svg::line_plot("Components and matched library spectra", "wavelength (nm)", "max-normalized", &series, false),
    )?;
    blocks.push(Block::Image("components and matched library spectra".into(), "matches.svg".into()));

    blocks.push(Block::Heading("Nerve versus reference".into()));
    blocks.push(Block::Para(format!(
        "{} nerve pixels, {} reference pixels. Undefined entries are shown as –.",
        matrices["nerve"]["pixels"], matrices["reference"]["pixels"]
    )));
    for (label, obj, key) in [
        ("DSC, nerve", &matrices["nerve"], "dsc"),
        ("DSC, nerve − reference", &matrices["difference"], "dsc"),
        ("PCC, nerve", &matrices["nerve"], "pcc"),
        ("PCC, nerve − reference", &matrices["difference"], "pcc"),
    ] {
        blocks.push(Block::Para(label.into()));
        blocks.push(matrix_table(obj, key));
    }
    blocks.push(Block::Image("correlation heatmaps".into(), "../correlate/heatmap.svg".into()));

    blocks.push(Block::Heading("Mixture classes".into()));
    let leaves = tree["leaves"].as_array().map_or(0, Vec::len);
    blocks.push(Block::Para(format!(
        "{leaves} mixture classes of at most {} possible; {} pixels have no component.",
        1u64.checked_shl(summary.k as u32).map_or("many".into(), |v| v.to_string()),
        tree["empty_pixels"]
    )));
    if let Some(tv) = clusters["nerve_reference_total_variation"].as_f64() {
        blocks.push(Block::Para(format!(
            "Total-variation distance between the nerve and reference fingerprints: {tv:.3}."
        )));
    }
    let rows: Vec<Vec<String>> = clusters["clusters"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|c| {
            vec![
                c["cluster"].to_string(),
                c["patterns"].as_array().map_or(0, Vec::len).to_string(),
                c["pixels"].to_string(),
                c["nerve_pixels"].to_string(),
            ]
        })
        .collect();
    blocks.push(Block::Table(
        vec!["cluster".into(), "classes".into(), "pixels".into(), "nerve pixels".into()],
        rows,
    ));
    blocks.push(Block::Image("polar dendrogram".into(), "../cluster/dendrogram.svg".into()));
    blocks.push(Block::Image("cluster mean shapes".into(), "../cluster/cluster_shapes.svg".into()));

    let title = "Spectral analysis report";
    out.text(dir.join("report.md"), &render_md(title, &blocks))?;
    out.text(dir.join("report.html"), &render_html(title, &blocks))
}
