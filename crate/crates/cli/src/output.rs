use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::CliError;

/// Files staged in memory and written together once every one is ready.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_csv<R>(&mut self, name: &str, header: &[&str], rows: R) -> Result<(), CliError>
    where
        R: IntoIterator,
        R::Item: IntoIterator,
        <R::Item as IntoIterator>::Item: AsRef<[u8]>,
    {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(header)?;
        for row in rows {
            wtr.write_record(row)?;
        }
        let bytes = wtr.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        self.add(name, bytes);
        Ok(())
    }

    /// Each file goes to a temporary sibling first and is renamed into place.
    pub fn commit(self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        for (name, bytes) in self.files {
            let target = dir.join(&name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(&bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(&target)
                .map_err(|e| CliError::Data(format!("cannot write {}: {}", target.display(), e.error)))?;
            log::info!("wrote {}", target.display());
        }
        Ok(())
    }
}

/// Shortest-decimal float formatting that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
