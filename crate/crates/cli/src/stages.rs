//! The pipeline stages. Each reads its inputs, writes its outputs through
//! [`Written`] (atomically, one file at a time) and returns the list of
//! files it produced for the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use snerv_core::clustering::{
    build_tree, cluster_mean_shape, cut_tree, enumerate_classes, fingerprint, leaf_correlations, member_rows, patterns,
    total_variation, CutSpec,
};
use snerv_core::io::{
    payload_path, read_bool_matrix, read_json, read_mask, read_matrix, read_stack, valid_mask_path, write_atomic,
    write_bool_matrix, write_json, write_mask, write_matrix, write_stack, Dtype,
};
use snerv_core::library::write_components_csv;
use snerv_core::metrics::{correlation_matrices, difference_matrices};
use snerv_core::phantom::{generate, PhantomScene};
use snerv_core::probmodel::{fit_component_models, standardize};
use snerv_core::reference::{fit_reference_sampler, sample_reference_roi, ReferenceSampler};
use snerv_core::stack::RoiMask;
use snerv_core::unmixing::fit;
use snerv_core::{ComponentModel, MultispectralStack, SpectralFingerprint, StandardizedCoefficients};

use crate::config::SceneSource;
use crate::context::{Context, Stage, StackRef};
use crate::error::{CliError, Result};
use crate::manifest::{sha256_file, Manifest, MANIFEST_FILE};
use crate::svg;
use crate::tables::{component_ids, counts_csv, metric_csv, MatricesJson};

/// Collects the files a stage writes.
pub struct Written {
    files: Vec<PathBuf>,
}

impl Written {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn json<S: Serialize>(&mut self, path: PathBuf, value: &S) -> Result<()> {
        write_json(&path, value)?;
        self.files.push(path);
        Ok(())
    }

    pub fn text(&mut self, path: PathBuf, text: &str) -> Result<()> {
        write_atomic(&path, text.as_bytes())?;
        self.files.push(path);
        Ok(())
    }

    fn matrix(&mut self, path: PathBuf, m: &Array2<f64>, ids: &[String]) -> Result<()> {
        write_matrix(m, ids, &path, Dtype::F64Le)?;
        self.files.push(payload_path(&path));
        self.files.push(path);
        Ok(())
    }

    fn bool_matrix(&mut self, path: PathBuf, m: &Array2<bool>, ids: &[String]) -> Result<()> {
        write_bool_matrix(m, ids, &path)?;
        self.files.push(payload_path(&path));
        self.files.push(path);
        Ok(())
    }

    fn mask(&mut self, path: PathBuf, mask: &RoiMask) -> Result<()> {
        write_mask(mask, &path)?;
        self.files.push(payload_path(&path));
        self.files.push(path);
        Ok(())
    }

    fn stack(&mut self, path: PathBuf, stack: &MultispectralStack) -> Result<()> {
        write_stack(stack, &path, Dtype::F64Le)?;
        self.files.push(payload_path(&path));
        self.files.push(valid_mask_path(&path));
        self.files.push(path);
        Ok(())
    }
}

/// Runs one stage after checking its upstream, then records its manifest.
pub fn run(stage: Stage, ctx: &Context) -> Result<()> {
    ctx.check_upstream(stage)?;
    let inputs = ctx.current_inputs(stage)?;
    let dir = ctx.dir(stage);
    let manifest_path = dir.join(MANIFEST_FILE);
    match std::fs::remove_file(&manifest_path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
        _ => {}
    }
    let mut out = Written::new();
    match stage {
        Stage::Phantom => phantom(ctx, &mut out)?,
        Stage::Unmix => unmix(ctx, &mut out)?,
        Stage::Model => model(ctx, &mut out)?,
        Stage::Reference => reference(ctx, &mut out)?,
        Stage::Correlate => correlate(ctx, &mut out)?,
        Stage::Cluster => cluster(ctx, &mut out)?,
        Stage::Report => crate::report::report(ctx, &mut out)?,
    }
    let mut outputs = BTreeMap::new();
    for f in &out.files {
        outputs.insert(ctx.output_key(f), sha256_file(f)?);
    }
    write_json(
        &manifest_path,
        &Manifest {
            stage: stage.name().into(),
            inputs,
            outputs,
        },
    )?;
    Ok(())
}

fn label_file(label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("roi_{clean}.json")
}

fn phantom(ctx: &Context, out: &mut Written) -> Result<()> {
    let pc = ctx
        .cfg
        .phantom
        .as_ref()
        .ok_or_else(|| CliError::ConfigInvalid("the configuration has no phantom section".into()))?;
    let lib = ctx.library()?;
    let mut scene = match &pc.scene {
        None => PhantomScene::layered(pc.layered_size),
        Some(SceneSource::Path(p)) => read_json(&ctx.resolve(p))
            .map_err(|e| CliError::ConfigInvalid(format!("scene: {e}")))?,
        Some(SceneSource::Inline(s)) => (**s).clone(),
    };
    scene.seed = ctx.seed;
    scene.validate(&lib).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    if let Some(fraction) = pc.noise_fraction {
        scene.noise_sigma = 0.0;
        let (clean, _) = generate(&scene, &lib)?;
        let peak = clean.data().iter().copied().fold(0.0, f64::max);
        scene.noise_sigma = fraction * peak;
    }
    let (stack, truth) = generate(&scene, &lib)?;
    let dir = ctx.phantom_dir().expect("phantom section present");
    out.stack(dir.join("stack.json"), &stack)?;
    for roi in &truth.rois {
        out.mask(dir.join(label_file(&roi.label)), roi)?;
    }
    let (h, w, c) = truth.concentration_maps.dim();
    let conc = truth
        .concentration_maps
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((h * w, c))
        .expect("contiguous");
    out.matrix(dir.join("concentrations.json"), &conc, &truth.chromophores)?;
    out.json(dir.join("scene.json"), &scene)?;
    Ok(())
}

/// Spectra of the valid pixels of every stack, stacked in configuration
/// order, with the number of rows each stack contributed.
fn pooled_spectra(stacks: &[StackRef]) -> Result<(Array2<f64>, Vec<usize>, Vec<MultispectralStack>)> {
    if stacks.is_empty() {
        return Err(CliError::ConfigInvalid("no stacks to analyse".into()));
    }
    let mut loaded = Vec::with_capacity(stacks.len());
    for s in stacks {
        let stack: MultispectralStack = read_stack(&s.stack)?;
        if let Some(first) = loaded.first() {
            let first: &MultispectralStack = first;
            if first.grid() != stack.grid() {
                return Err(CliError::ConfigInvalid(format!(
                    "stack {} uses a different wavelength grid from {}",
                    s.id, stacks[0].id
                )));
            }
        }
        loaded.push(stack);
    }
    let parts: Vec<Array2<f64>> = loaded.iter().map(|s| s.valid_matrix().0).collect();
    let rows = parts.iter().map(|p| p.nrows()).collect();
    let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
    let pooled = concatenate(Axis(0), &views).map_err(|e| CliError::Failed(e.to_string()))?;
    Ok((pooled, rows, loaded))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StackRows {
    pub id: String,
    pub rows: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UnmixSummary {
    pub k: usize,
    pub bands: usize,
    pub wavelengths_nm: Vec<f64>,
    pub spectra: usize,
    pub stacks: Vec<StackRows>,
    pub relative_error: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reseeded: Vec<usize>,
    pub zero_fraction: f64,
    pub config: snerv_core::unmixing::UnmixingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
}

fn unmix(ctx: &Context, out: &mut Written) -> Result<()> {
    let stacks = ctx.stacks();
    let (s, rows, loaded) = pooled_spectra(&stacks)?;
    let mut cfg = ctx.cfg.unmixing.clone();
    cfg.seed = ctx.seed;
    let start = Instant::now();
    let r = fit(s.view(), &cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let dir = ctx.dir(Stage::Unmix);
    let ids = component_ids(cfg.k);
    let grid = loaded[0].grid().clone();

    let mut csv = Vec::new();
    write_components_csv(&mut csv, &grid, &ids, r.h.view())?;
    out.text(dir.join("components.csv"), std::str::from_utf8(&csv).expect("csv is utf-8"))?;
    let wl: Vec<String> = grid.wavelengths().iter().map(|w| w.to_string()).collect();
    out.matrix(dir.join("components.json"), &r.h, &wl)?;

    let mut trace = String::from("iteration,objective\n");
    for (i, v) in r.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{v}\n"));
    }
    out.text(dir.join("trace.csv"), &trace)?;

    let mut offset = 0;
    for (s, &n) in stacks.iter().zip(&rows) {
        let w = r.w.slice(ndarray::s![offset..offset + n, ..]).to_owned();
        out.matrix(dir.join(&s.id).join("coefficients.json"), &w, &ids)?;
        offset += n;
    }

    let series: Vec<svg::Series> = r
        .h
        .rows()
        .into_iter()
        .zip(&ids)
        .map(|(row, id)| svg::Series {
            name: id.clone(),
            points: grid.wavelengths().iter().copied().zip(row.iter().copied()).collect(),
        })
        .collect();
    out.text(
        dir.join("components.svg"),
        &svg::line_plot("Fitted components", "wavelength (nm)", "absorption (a.u.)", &series, false),
    )?;

    let summary = UnmixSummary {
        k: cfg.k,
        bands: grid.len(),
        wavelengths_nm: grid.wavelengths().to_vec(),
        spectra: s.nrows(),
        stacks: stacks.iter().zip(&rows).map(|(s, &rows)| StackRows { id: s.id.clone(), rows }).collect(),
        relative_error: r.relative_error,
        final_objective: r.final_objective(),
        iterations: r.iterations,
        converged: r.converged,
        reseeded: r.reseeded.clone(),
        zero_fraction: r.zero_fraction(),
        config: cfg,
        elapsed_seconds: (!ctx.strict).then_some(elapsed),
    };
    out.json(dir.join("summary.json"), &summary)
}

fn pooled_coefficients(ctx: &Context, stacks: &[StackRef]) -> Result<(Array2<f64>, Vec<String>, Vec<usize>)> {
    let dir = ctx.dir(Stage::Unmix);
    let mut parts = Vec::new();
    let mut ids = Vec::new();
    for s in stacks {
        let (w, cols) = read_matrix::<f64>(&dir.join(&s.id).join("coefficients.json"))?;
        ids = cols;
        parts.push(w);
    }
    let rows = parts.iter().map(|p| p.nrows()).collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let w = concatenate(Axis(0), &views).map_err(|e| CliError::Failed(e.to_string()))?;
    Ok((w, ids, rows))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelsJson {
    components: Vec<String>,
    models: Vec<ComponentModel>,
}

fn model(ctx: &Context, out: &mut Written) -> Result<()> {
    let stacks = ctx.stacks();
    let (w, ids, rows) = pooled_coefficients(ctx, &stacks)?;
    let models = fit_component_models(w.view());
    let z = standardize(w.view(), &models)?;
    let dir = ctx.dir(Stage::Model);
    let mut offset = 0;
    for (s, &n) in stacks.iter().zip(&rows) {
        let part: Vec<usize> = (offset..offset + n).collect();
        let sub = z.select_rows(&part);
        out.matrix(dir.join(&s.id).join("z.json"), &sub.z, &ids)?;
        out.bool_matrix(dir.join(&s.id).join("m.json"), &sub.m, &ids)?;
        offset += n;
    }
    out.json(dir.join("models.json"), &ModelsJson { components: ids, models })
}

/// Per-image stream for reference sampling.
fn image_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceImage {
    id: String,
    nerve_pixels: usize,
    samples: usize,
    reference_pixels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceJson {
    sampler: ReferenceSampler,
    images: Vec<ReferenceImage>,
}

fn nerve_stacks(stacks: Vec<StackRef>) -> Result<Vec<(StackRef, PathBuf)>> {
    let with: Vec<_> = stacks
        .into_iter()
        .filter_map(|s| s.nerve.clone().map(|n| (s, n)))
        .collect();
    if with.is_empty() {
        return Err(CliError::ConfigInvalid("no stack has a nerve mask".into()));
    }
    Ok(with)
}

fn reference(ctx: &Context, out: &mut Written) -> Result<()> {
    let stacks = nerve_stacks(ctx.stacks())?;
    let mut nerves = Vec::new();
    let mut valids = Vec::new();
    for (s, n) in &stacks {
        let stack: MultispectralStack = read_stack(&s.stack)?;
        let nerve = read_mask(n)?;
        nerve
            .check_against(&stack)
            .map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", s.id)))?;
        valids.push(stack.valid_mask().clone());
        nerves.push(nerve);
    }
    let refs: Vec<&RoiMask> = nerves.iter().collect();
    let sampler = fit_reference_sampler(&refs)?;
    let dir = ctx.dir(Stage::Reference);
    let mut images = Vec::new();
    for (i, ((s, _), (nerve, valid))) in stacks.iter().zip(nerves.iter().zip(&valids)).enumerate() {
        let n = ctx.cfg.statmetrics.reference_samples.unwrap_or_else(|| nerve.count());
        let roi = sample_reference_roi(&sampler, valid.view(), nerve, n, image_seed(ctx.seed, i))?;
        images.push(ReferenceImage {
            id: s.id.clone(),
            nerve_pixels: nerve.count(),
            samples: n,
            reference_pixels: roi.count(),
        });
        out.mask(dir.join(&s.id).join("reference.json"), &roi)?;
    }
    out.json(dir.join("sampler.json"), &ReferenceJson { sampler, images })
}

/// Standardized coefficients of all stacks, with the pooled row indices of
/// nerve and reference pixels.
pub struct PooledRois {
    pub z: StandardizedCoefficients,
    pub ids: Vec<String>,
    pub nerve_rows: Vec<usize>,
    pub reference_rows: Vec<usize>,
}

fn rows_in(valid: &Array2<bool>, roi: &Array2<bool>, offset: usize) -> Vec<usize> {
    valid
        .iter()
        .zip(roi.iter())
        .filter(|(v, _)| **v)
        .enumerate()
        .filter_map(|(i, (_, r))| r.then_some(offset + i))
        .collect()
}

fn pooled_rois(ctx: &Context, stacks: &[StackRef]) -> Result<(PooledRois, Vec<MultispectralStack>)> {
    let model_dir = ctx.dir(Stage::Model);
    let ref_dir = ctx.dir(Stage::Reference);
    let mut zs = Vec::new();
    let mut ms = Vec::new();
    let mut loaded = Vec::new();
    let mut ids = Vec::new();
    let (mut nerve_rows, mut reference_rows) = (Vec::new(), Vec::new());
    let mut offset = 0;
    for s in stacks {
        let (z, cols) = read_matrix::<f64>(&model_dir.join(&s.id).join("z.json"))?;
        let (m, _) = read_bool_matrix(&model_dir.join(&s.id).join("m.json"))?;
        let stack: MultispectralStack = read_stack(&s.stack)?;
        let valid = stack.valid_mask();
        if valid.iter().filter(|&&v| v).count() != z.nrows() {
            return Err(CliError::UpstreamStale(format!(
                "{}: coefficient rows do not match the stack's valid pixels",
                s.id
            )));
        }
        if let Some(n) = &s.nerve {
            let nerve = read_mask(n)?;
            let reference = read_mask(&ref_dir.join(&s.id).join("reference.json"))?;
            nerve_rows.extend(rows_in(valid, &nerve.mask, offset));
            reference_rows.extend(rows_in(valid, &reference.mask, offset));
        }
        offset += z.nrows();
        ids = cols;
        zs.push(z);
        ms.push(m);
        loaded.push(stack);
    }
    let zv: Vec<_> = zs.iter().map(|a| a.view()).collect();
    let mv: Vec<_> = ms.iter().map(|a| a.view()).collect();
    let z = StandardizedCoefficients {
        z: concatenate(Axis(0), &zv).map_err(|e| CliError::Failed(e.to_string()))?,
        m: concatenate(Axis(0), &mv).map_err(|e| CliError::Failed(e.to_string()))?,
    };
    Ok((
        PooledRois {
            z,
            ids,
            nerve_rows,
            reference_rows,
        },
        loaded,
    ))
}

fn correlate(ctx: &Context, out: &mut Written) -> Result<()> {
    let stacks: Vec<StackRef> = nerve_stacks(ctx.stacks())?.into_iter().map(|(s, _)| s).collect();
    let (p, _) = pooled_rois(ctx, &stacks)?;
    let opts = ctx.cfg.statmetrics.pearson;
    let nerve = correlation_matrices(&p.z.select_rows(&p.nerve_rows), opts)?;
    let reference = correlation_matrices(&p.z.select_rows(&p.reference_rows), opts)?;
    let diff = difference_matrices(&nerve, &reference)?;
    let dir = ctx.dir(Stage::Correlate);
    let ids = &p.ids;
    for (name, m) in [
        ("nerve_dsc", &nerve.dsc),
        ("nerve_pcc", &nerve.pcc),
        ("reference_dsc", &reference.dsc),
        ("reference_pcc", &reference.pcc),
        ("difference_dsc", &diff.dsc),
        ("difference_pcc", &diff.pcc),
    ] {
        out.text(dir.join(format!("{name}.csv")), &metric_csv(m, ids))?;
    }
    out.text(dir.join("nerve_support.csv"), &counts_csv(&nerve.support_counts, ids))?;
    out.text(dir.join("reference_support.csv"), &counts_csv(&reference.support_counts, ids))?;
    out.json(
        dir.join("matrices.json"),
        &json!({
            "pearson": opts,
            "nerve": MatricesJson::new(&nerve, p.nerve_rows.len()),
            "reference": MatricesJson::new(&reference, p.reference_rows.len()),
            "difference": MatricesJson::difference(&diff, p.nerve_rows.len()),
        }),
    )?;
    let panels = [
        svg::Panel {
            title: "DSC nerve".into(),
            matrix: &nerve.dsc,
        },
        svg::Panel {
            title: "DSC nerve − reference".into(),
            matrix: &diff.dsc,
        },
        svg::Panel {
            title: "PCC nerve".into(),
            matrix: &nerve.pcc,
        },
        svg::Panel {
            title: "PCC nerve − reference".into(),
            matrix: &diff.pcc,
        },
    ];
    out.text(dir.join("heatmap.svg"), &svg::heatmap_grid(&panels, ids, 2))
}

#[derive(Debug, Serialize, Deserialize)]
struct LeafJson {
    pattern: u64,
    components: Vec<String>,
    count: usize,
    representative: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeJson {
    weighting: snerv_core::clustering::WardWeighting,
    wavelengths_nm: Vec<f64>,
    empty_pixels: usize,
    leaves: Vec<LeafJson>,
    /// `[left, right, height, size]` with node ids as in the merge order.
    merges: Vec<(usize, usize, f64, usize)>,
    leaf_order: Vec<usize>,
}

fn pattern_components(pattern: u64, ids: &[String]) -> Vec<String> {
    snerv_core::clustering::components_of(pattern)
        .into_iter()
        .map(|j| ids.get(j).cloned().unwrap_or_else(|| format!("c{j}")))
        .collect()
}

fn cluster(ctx: &Context, out: &mut Written) -> Result<()> {
    let stacks = ctx.stacks();
    let (p, loaded) = pooled_rois(ctx, &stacks)?;
    let parts: Vec<Array2<f64>> = loaded.iter().map(|s| s.valid_matrix().0).collect();
    let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
    let s = concatenate(Axis(0), &views).map_err(|e| CliError::Failed(e.to_string()))?;
    let opts = &ctx.cfg.clustering;
    let grid = loaded[0].grid().clone();

    let classes = enumerate_classes(p.z.m.view(), s.view())?;
    let empty_pixels = classes.empty_pixels.len();
    let tree = build_tree(classes.classes, opts.weighting)?;
    let pats = patterns(p.z.m.view())?;
    let dir = ctx.dir(Stage::Cluster);

    out.json(
        dir.join("tree.json"),
        &TreeJson {
            weighting: tree.weighting,
            wavelengths_nm: grid.wavelengths().to_vec(),
            empty_pixels,
            leaves: tree
                .leaves
                .iter()
                .map(|l| LeafJson {
                    pattern: l.pattern,
                    components: pattern_components(l.pattern, &p.ids),
                    count: l.count,
                    representative: l.representative.to_vec(),
                })
                .collect(),
            merges: tree.merges.iter().map(|m| (m.left, m.right, m.height, m.size)).collect(),
            leaf_order: tree.leaf_order(),
        },
    )?;

    let roi_patterns = |rows: &[usize]| -> Vec<u64> { rows.iter().map(|&r| pats[r]).collect() };
    let mut fingerprints: Vec<SpectralFingerprint> = vec![fingerprint(&tree, &pats, "all")?];
    let has_rois = !p.nerve_rows.is_empty();
    if has_rois {
        fingerprints.push(fingerprint(&tree, &roi_patterns(&p.nerve_rows), "nerve")?);
        fingerprints.push(fingerprint(&tree, &roi_patterns(&p.reference_rows), "reference")?);
    }
    let mut csv = String::from("pattern,label,weight\n");
    for fp in &fingerprints {
        for (pattern, w) in fp.patterns.iter().zip(&fp.weights) {
            csv.push_str(&format!("{pattern},{},{w}\n", fp.label));
        }
        csv.push_str(&format!("0,{},{}\n", fp.label, fp.unexplained));
    }
    out.text(dir.join("fingerprints.csv"), &csv)?;

    let n_leaves = tree.n_leaves();
    let spec = match opts.cut {
        CutSpec::Count(c) => CutSpec::Count(c.min(n_leaves)),
        h => h,
    };
    let cut = cut_tree(&tree, spec)?;
    let mut clusters = Vec::new();
    let mut shapes = Vec::new();
    for c in 0..cut.n_clusters {
        let leaves = cut.members(c);
        let rows = member_rows(&tree, &leaves);
        let (mean, std, used) = cluster_mean_shape(s.view(), &rows)?;
        shapes.push(svg::Series {
            name: format!("cluster {c}"),
            points: grid.wavelengths().iter().copied().zip(mean.iter().copied()).collect(),
        });
        let nerve_pixels = p.nerve_rows.iter().filter(|r| rows.binary_search(r).is_ok()).count();
        clusters.push(json!({
            "cluster": c,
            "patterns": leaves.iter().map(|&l| tree.leaves[l].pattern).collect::<Vec<_>>(),
            "pixels": rows.len(),
            "nerve_pixels": nerve_pixels,
            "spectra_used": used,
            "mean": mean.to_vec(),
            "std": std.to_vec(),
        }));
    }
    let tv = if has_rois {
        Some(total_variation(&fingerprints[1], &fingerprints[2])?)
    } else {
        None
    };
    out.json(
        dir.join("clusters.json"),
        &json!({
            "cut": spec,
            "n_clusters": cut.n_clusters,
            "assignment": cut.assignment,
            "nerve_reference_total_variation": tv,
            "clusters": clusters,
        }),
    )?;
    out.text(
        dir.join("cluster_shapes.svg"),
        &svg::line_plot("Cluster mean shapes", "wavelength (nm)", "L2-normalized absorption", &shapes, false),
    )?;

    if has_rois {
        let mut by_size: Vec<usize> = (0..n_leaves).collect();
        by_size.sort_by(|&a, &b| {
            tree.leaves[b]
                .count
                .cmp(&tree.leaves[a].count)
                .then(tree.leaves[a].pattern.cmp(&tree.leaves[b].pattern))
        });
        let mut leaves = Vec::new();
        for &l in by_size.iter().take(opts.leaf_correlations) {
            let pattern = tree.leaves[l].pattern;
            let lc = leaf_correlations(&[pattern], &p.z, &p.nerve_rows, &p.reference_rows, ctx.cfg.statmetrics.pearson)?;
            leaves.push(json!({
                "pattern": pattern,
                "count": tree.leaves[l].count,
                "nerve": MatricesJson::new(&lc.roi, lc.roi_pixels),
                "reference": MatricesJson::new(&lc.reference, lc.reference_pixels),
                "difference": MatricesJson::difference(&lc.difference, lc.roi_pixels),
            }));
        }
        out.json(dir.join("leaf_correlations.json"), &leaves)?;
        let refs: Vec<&SpectralFingerprint> = fingerprints[1..].iter().collect();
        out.text(dir.join("dendrogram.svg"), &svg::polar_dendrogram(&tree, &refs))?;
    } else {
        out.text(dir.join("dendrogram.svg"), &svg::polar_dendrogram(&tree, &[&fingerprints[0]]))?;
    }
    Ok(())
}

/// Reads a JSON output of an earlier stage.
pub fn read_output<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(read_json(path)?)
}
