use ndarray::ArrayView2;
use serde::Serialize;

use super::UnmixError;
use crate::library::ChromophoreLibrary;
use crate::scalar::Scalar;
use crate::spectra::{spectral_angle, SpectrumError};

/// A fitted component and the library entry it was assigned to, if any.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentMatch<T> {
    pub component: usize,
    pub chromophore: Option<String>,
    /// Spectral angle in radians to the assigned entry.
    pub angle: Option<T>,
}

/// Names fitted components after library chromophores.
///
/// All component/entry pairs are ranked by spectral angle and assigned
/// greedily from the smallest angle, using each component and each entry at
/// most once. Components left over when the library is smaller than `k`
/// stay unassigned.
pub fn match_components<T: Scalar>(
    h: ArrayView2<'_, T>,
    library: &ChromophoreLibrary<T>,
) -> Result<Vec<ComponentMatch<T>>, UnmixError> {
    if h.ncols() != library.grid().len() {
        return Err(UnmixError::ShapeMismatch(format!(
            "components have {} bands, library has {}",
            h.ncols(),
            library.grid().len()
        )));
    }
    let mut pairs = Vec::with_capacity(h.nrows() * library.len());
    for (c, row) in h.rows().into_iter().enumerate() {
        for (e, (_, spectrum)) in library.iter().enumerate() {
            let angle = spectral_angle(row, spectrum).map_err(|err| match err {
                SpectrumError::ZeroSpectrum => UnmixError::ZeroComponent(c),
                other => UnmixError::ShapeMismatch(other.to_string()),
            })?;
            pairs.push((angle, c, e));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut out: Vec<ComponentMatch<T>> = (0..h.nrows())
        .map(|component| ComponentMatch {
            component,
            chromophore: None,
            angle: None,
        })
        .collect();
    let mut entry_used = vec![false; library.len()];
    for (angle, c, e) in pairs {
        if out[c].chromophore.is_some() || entry_used[e] {
            continue;
        }
        entry_used[e] = true;
        out[c].chromophore = Some(library.names()[e].clone());
        out[c].angle = Some(angle);
    }
    Ok(out)
}

/// A library entry and the fitted component it was paired with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryMatch<T> {
    pub chromophore: String,
    pub component: usize,
    pub angle: T,
}

/// Most components a [`best_unique_assignment`] search accepts.
pub const MAX_ASSIGNMENT_COMPONENTS: usize = 16;

/// Pairs every library entry with a distinct component so that the summed
/// spectral angle is minimal.
///
/// Exact dynamic program over subsets of used components; ties resolve to
/// the lexicographically smallest component sequence.
pub fn best_unique_assignment<T: Scalar>(
    h: ArrayView2<'_, T>,
    library: &ChromophoreLibrary<T>,
) -> Result<Vec<EntryMatch<T>>, UnmixError> {
    let k = h.nrows();
    let e = library.len();
    if h.ncols() != library.grid().len() {
        return Err(UnmixError::ShapeMismatch(format!(
            "components have {} bands, library has {}",
            h.ncols(),
            library.grid().len()
        )));
    }
    if k < e || k > MAX_ASSIGNMENT_COMPONENTS {
        return Err(UnmixError::ShapeMismatch(format!(
            "need between {e} and {MAX_ASSIGNMENT_COMPONENTS} components, got {k}"
        )));
    }
    let mut angles = vec![vec![0.0f64; k]; e];
    for (c, row) in h.rows().into_iter().enumerate() {
        for (j, (_, spectrum)) in library.iter().enumerate() {
            angles[j][c] = spectral_angle(row, spectrum)
                .map_err(|err| match err {
                    SpectrumError::ZeroSpectrum => UnmixError::ZeroComponent(c),
                    other => UnmixError::ShapeMismatch(other.to_string()),
                })?
                .as_f64();
        }
    }

    // cost[mask] = best total for entries 0..popcount(mask) using exactly `mask`.
    let size = 1usize << k;
    let mut cost = vec![f64::INFINITY; size];
    let mut choice = vec![usize::MAX; size];
    cost[0] = 0.0;
    let mut masks: Vec<usize> = (1..size).filter(|m| m.count_ones() as usize <= e).collect();
    masks.sort_by_key(|m| m.count_ones());
    for mask in masks {
        let entry = mask.count_ones() as usize - 1;
        for c in 0..k {
            if mask & (1 << c) == 0 {
                continue;
            }
            let prev = mask ^ (1 << c);
            let total = cost[prev] + angles[entry][c];
            if total < cost[mask] {
                cost[mask] = total;
                choice[mask] = c;
            }
        }
    }
    let best = (0..size)
        .filter(|m| m.count_ones() as usize == e)
        .min_by(|&a, &b| cost[a].partial_cmp(&cost[b]).unwrap())
        .expect("k >= number of entries");

    let mut out = Vec::with_capacity(e);
    let mut mask = best;
    for entry in (0..e).rev() {
        let c = choice[mask];
        out.push(EntryMatch {
            chromophore: library.names()[entry].clone(),
            component: c,
            angle: T::lit(angles[entry][c]),
        });
        mask ^= 1 << c;
    }
    out.reverse();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::WavelengthGrid;
    use ndarray::{array, Array1, Array2};
    use std::sync::Arc;

    fn lib(entries: &[(&str, Vec<f64>)]) -> ChromophoreLibrary<f64> {
        let n = entries[0].1.len();
        let grid = Arc::new(WavelengthGrid::new((0..n).map(|i| 700.0 + 10.0 * i as f64).collect()).unwrap());
        ChromophoreLibrary::new(
            grid,
            entries.iter().map(|(n, v)| (n.to_string(), Array1::from(v.clone()))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn library_matches_itself() {
        let l = lib(&[("a", vec![1.0, 0.2, 0.0]), ("b", vec![0.0, 1.0, 0.5]), ("c", vec![0.3, 0.3, 1.0])]);
        let h = Array2::from_shape_fn((3, 3), |(i, j)| l.iter().nth(i).unwrap().1[j]);
        let m = match_components(h.view(), &l).unwrap();
        for (i, name) in ["a", "b", "c"].iter().enumerate() {
            assert_eq!(m[i].chromophore.as_deref(), Some(*name));
            assert_eq!(m[i].angle, Some(0.0));
        }
    }

    #[test]
    fn permuted_rescaled_library_recovered() {
        let l = lib(&[("a", vec![1.0, 0.2, 0.0, 0.1]), ("b", vec![0.0, 1.0, 0.5, 0.2]), ("c", vec![0.3, 0.3, 1.0, 0.9])]);
        let perm = [2usize, 0, 1];
        let scale = [3.5, 0.01, 120.0];
        let h = Array2::from_shape_fn((3, 4), |(i, j)| scale[i] * l.iter().nth(perm[i]).unwrap().1[j]);
        let m = match_components(h.view(), &l).unwrap();
        for i in 0..3 {
            assert_eq!(m[i].chromophore.as_deref(), Some(l.names()[perm[i]].as_str()));
            assert!(m[i].angle.unwrap() <= 1e-9);
        }
    }

    /// Minimum-total-angle injective assignment by enumeration.
    fn best_unique(angles: &Array2<f64>) -> Vec<usize> {
        let (k, e) = angles.dim();
        let mut best = (f64::INFINITY, Vec::new());
        fn rec(angles: &Array2<f64>, c: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, total: f64, best: &mut (f64, Vec<usize>)) {
            if c == angles.nrows() {
                if total < best.0 {
                    *best = (total, cur.clone());
                }
                return;
            }
            for j in 0..angles.ncols() {
                if !used[j] {
                    used[j] = true;
                    cur.push(j);
                    rec(angles, c + 1, used, cur, total + angles[(c, j)], best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        rec(angles, 0, &mut vec![false; e], &mut Vec::with_capacity(k), 0.0, &mut best);
        best.1
    }

    #[test]
    fn averaged_component_still_gets_a_unique_entry() {
        let l = lib(&[("a", vec![1.0, 0.0, 0.0]), ("b", vec![0.0, 1.0, 0.0]), ("c", vec![0.0, 0.0, 1.0])]);
        let h = array![[1.0, 0.0, 0.0], [0.5, 0.5, 0.0]];
        let m = match_components(h.view(), &l).unwrap();
        assert_ne!(m[0].chromophore, m[1].chromophore);

        let angles = Array2::from_shape_fn((2, 3), |(i, j)| {
            spectral_angle(h.row(i), l.iter().nth(j).unwrap().1).unwrap()
        });
        let oracle = best_unique(&angles);
        for i in 0..2 {
            assert_eq!(m[i].chromophore.as_deref(), Some(l.names()[oracle[i]].as_str()));
        }
    }

    #[test]
    fn best_assignment_matches_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let bands = 5;
            let n_entries = rng.random_range(1..=4);
            let k = rng.random_range(n_entries..=6);
            let entries: Vec<(String, Vec<f64>)> = (0..n_entries)
                .map(|i| (format!("e{i}"), (0..bands).map(|_| rng.random::<f64>() + 0.01).collect()))
                .collect();
            let refs: Vec<(&str, Vec<f64>)> = entries.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
            let l = lib(&refs);
            let h = Array2::from_shape_fn((k, bands), |_| rng.random::<f64>() + 0.01);
            let got = best_unique_assignment(h.view(), &l).unwrap();
            // Enumerate from the entry side.
            let angles = Array2::from_shape_fn((n_entries, k), |(j, c)| spectral_angle(h.row(c), l.iter().nth(j).unwrap().1).unwrap());
            let oracle = best_unique(&angles);
            let total: f64 = got.iter().map(|m| m.angle).sum();
            let oracle_total: f64 = oracle.iter().enumerate().map(|(j, &c)| angles[(j, c)]).sum();
            assert!((total - oracle_total).abs() <= 1e-12);
            let mut used: Vec<usize> = got.iter().map(|m| m.component).collect();
            used.sort();
            used.dedup();
            assert_eq!(used.len(), n_entries);
        }
        let l = lib(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        assert!(best_unique_assignment(array![[1.0, 0.0]].view(), &l).is_err());
    }

    #[test]
    fn extra_components_stay_unassigned_and_zero_rows_error() {
        let l = lib(&[("a", vec![1.0, 0.0])]);
        let h = array![[1.0, 0.1], [0.0, 1.0]];
        let m = match_components(h.view(), &l).unwrap();
        assert_eq!(m[0].chromophore.as_deref(), Some("a"));
        assert_eq!(m[1].chromophore, None);
        let z = array![[0.0, 0.0]];
        assert_eq!(match_components(z.view(), &l).unwrap_err(), UnmixError::ZeroComponent(0));
    }
}
