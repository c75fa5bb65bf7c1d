//! Reference absorption spectra of known chromophores.

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{Array1, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::spectra::{Spectrum, SpectrumError, WavelengthGrid};

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("header must start with 'wavelength_nm'")]
    BadHeader,
    #[error("duplicate chromophore name '{0}'")]
    DuplicateName(String),
    #[error("chromophore '{0}' has a negative value")]
    Negative(String),
    #[error("chromophore '{0}' is identically zero")]
    AllZero(String),
    #[error("unknown chromophore '{0}'")]
    Unknown(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Named non-negative absorption spectra on a shared grid, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromophoreLibrary<T> {
    grid: Arc<WavelengthGrid>,
    names: Vec<String>,
    spectra: Vec<Array1<T>>,
}

impl<T: Scalar> ChromophoreLibrary<T> {
    pub fn new(grid: Arc<WavelengthGrid>, entries: Vec<(String, Array1<T>)>) -> Result<Self, LibraryError> {
        let mut names = Vec::with_capacity(entries.len());
        let mut spectra = Vec::with_capacity(entries.len());
        for (name, values) in entries {
            if names.contains(&name) {
                return Err(LibraryError::DuplicateName(name));
            }
            // Validates length and finiteness.
            let values = Spectrum::new(Arc::clone(&grid), values)?.into_values();
            if values.iter().any(|&v| v < T::zero()) {
                return Err(LibraryError::Negative(name));
            }
            if values.iter().all(|&v| v == T::zero()) {
                return Err(LibraryError::AllZero(name));
            }
            names.push(name);
            spectra.push(values);
        }
        Ok(Self { grid, names, spectra })
    }

    pub fn grid(&self) -> &Arc<WavelengthGrid> {
        &self.grid
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<ArrayView1<'_, T>> {
        self.index_of(name).map(|i| self.spectra[i].view())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ArrayView1<'_, T>)> {
        self.names.iter().map(String::as_str).zip(self.spectra.iter().map(|s| s.view()))
    }

    /// Sub-library with the given entries, in the given order.
    pub fn subset(&self, names: &[&str]) -> Result<Self, LibraryError> {
        let mut entries = Vec::with_capacity(names.len());
        for &n in names {
            let s = self.get(n).ok_or_else(|| LibraryError::Unknown(n.to_string()))?;
            entries.push((n.to_string(), s.to_owned()));
        }
        Self::new(Arc::clone(&self.grid), entries)
    }

    /// Parses the `wavelength_nm,<name1>,<name2>,...` CSV layout.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, LibraryError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("wavelength_nm") {
            return Err(LibraryError::BadHeader);
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut wavelengths = Vec::new();
        let mut columns: Vec<Vec<T>> = vec![Vec::new(); names.len()];
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse = |field: Option<&str>| -> Result<f64, LibraryError> {
                let f = field.ok_or_else(|| LibraryError::Parse {
                    line,
                    message: "missing field".into(),
                })?;
                f.parse::<f64>().map_err(|e| LibraryError::Parse {
                    line,
                    message: format!("'{f}': {e}"),
                })
            };
            wavelengths.push(parse(record.get(0))?);
            for (j, col) in columns.iter_mut().enumerate() {
                col.push(T::lit(parse(record.get(j + 1))?));
            }
        }
        let grid = Arc::new(WavelengthGrid::new(wavelengths)?);
        let entries = names
            .into_iter()
            .zip(columns)
            .map(|(n, c)| (n, Array1::from(c)))
            .collect();
        Self::new(grid, entries)
    }

    pub fn to_csv<W: Write>(&self, writer: W) -> Result<(), LibraryError> {
        let rows: Vec<ArrayView1<'_, T>> = self.spectra.iter().map(|s| s.view()).collect();
        write_spectra_csv(writer, &self.grid, &self.names, &rows)
    }
}

/// Writes named spectra in the library CSV layout, one wavelength per line.
pub fn write_spectra_csv<W: Write, T: Scalar>(
    writer: W,
    grid: &WavelengthGrid,
    names: &[String],
    spectra: &[ArrayView1<'_, T>],
) -> Result<(), LibraryError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["wavelength_nm".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (b, wl) in grid.wavelengths().iter().enumerate() {
        let mut rec = vec![wl.to_string()];
        rec.extend(spectra.iter().map(|s| s[b].as_f64().to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Row-per-component convenience wrapper over [`write_spectra_csv`].
pub fn write_components_csv<W: Write, T: Scalar>(
    writer: W,
    grid: &WavelengthGrid,
    names: &[String],
    components: ArrayView2<'_, T>,
) -> Result<(), LibraryError> {
    let rows: Vec<ArrayView1<'_, T>> = components.rows().into_iter().collect();
    write_spectra_csv(writer, grid, names, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "wavelength_nm,a,b\n700,1.0,0.0\n710,0.5,2.0\n";

    #[test]
    fn parses_layout() {
        let lib = ChromophoreLibrary::<f64>::from_csv(CSV.as_bytes()).unwrap();
        assert_eq!(lib.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(lib.grid().wavelengths(), &[700.0, 710.0]);
        assert_eq!(lib.get("b").unwrap().to_vec(), vec![0.0, 2.0]);
        let mut out = Vec::new();
        lib.to_csv(&mut out).unwrap();
        let again = ChromophoreLibrary::<f64>::from_csv(out.as_slice()).unwrap();
        assert_eq!(again, lib);
    }

    #[test]
    fn rejects_invalid_entries() {
        let neg = "wavelength_nm,a\n700,-1\n";
        assert!(matches!(
            ChromophoreLibrary::<f64>::from_csv(neg.as_bytes()),
            Err(LibraryError::Negative(_))
        ));
        let zero = "wavelength_nm,a\n700,0\n710,0\n";
        assert!(matches!(
            ChromophoreLibrary::<f64>::from_csv(zero.as_bytes()),
            Err(LibraryError::AllZero(_))
        ));
        let dup = "wavelength_nm,a,a\n700,1,1\n";
        assert!(matches!(
            ChromophoreLibrary::<f64>::from_csv(dup.as_bytes()),
            Err(LibraryError::DuplicateName(_))
        ));
        let header = "nm,a\n700,1\n";
        assert!(matches!(
            ChromophoreLibrary::<f64>::from_csv(header.as_bytes()),
            Err(LibraryError::BadHeader)
        ));
        let text = "wavelength_nm,a\n700,x\n";
        assert!(matches!(
            ChromophoreLibrary::<f64>::from_csv(text.as_bytes()),
            Err(LibraryError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn shipped_library_is_valid() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/chromophores.csv");
        let lib = ChromophoreLibrary::<f64>::from_csv(std::fs::File::open(path).unwrap()).unwrap();
        assert_eq!(lib.grid().as_ref(), &WavelengthGrid::default_msot());
        for n in ["HbO2", "HHb", "water", "lipid", "melanin", "collagen"] {
            assert!(lib.get(n).is_some(), "{n}");
        }
    }
}
