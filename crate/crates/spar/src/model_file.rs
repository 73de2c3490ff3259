//! Versioned model container.
//!
//! Layout: a UTF-8 text header of `key value…` lines ending with a line
//! `end`, followed by a blob of little-endian `f64` values. The header names
//! each array and its shape in blob order and records the SHA-256 of the
//! blob. Scalars use the shortest round-trip decimal form, so loading
//! reproduces every value bit for bit.
//!
//! ```text
//! SPAR-MODEL
//! version 1
//! zeta 0.1
//! kappa 1206.792640639329
//! n_observations 271704
//! threshold_hidden 16 16 16
//! gp_hidden 16 16 16
//! preprocess metocean            (metocean | generic | none)
//! column U_x component 3.2 0.0   (one per dimension unless `none`)
//! array kde_centers 271704 5
//! array threshold_params 641 1
//! array gp_params 658 1
//! array body_pool 244533 5
//! blob_sha256 <64 hex digits>
//! end
//! <blob>
//! ```

use std::path::Path;

use spar_core::angular::KdeModel;
use spar_core::nnet::{MlpArchitecture, MlpParams, OutputTransform};
use spar_core::preprocess::{ColumnSpec, PreprocessSpec, Role};
use spar_core::radial::{GpModel, ThresholdModel};
use spar_core::spar::SparModel;
use spar_core::Matrix;

use crate::error::{AppError, Result};
use crate::io::{atomic_write, fmt_f64, sha256_hex};

pub const MAGIC: &str = "SPAR-MODEL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: SparModel,
    /// Size of the sample the model was fitted to.
    pub n_observations: usize,
}

fn hidden_widths(arch: &MlpArchitecture) -> String {
    arch.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn to_bytes(file: &ModelFile) -> Result<Vec<u8>> {
    let m = &file.model;
    let arrays: [(&str, usize, usize, &[f64]); 4] = [
        ("kde_centers", m.kde.centers().nrows(), m.kde.centers().ncols(), m.kde.centers().as_slice()),
        ("threshold_params", m.threshold.params.as_slice().len(), 1, m.threshold.params.as_slice()),
        ("gp_params", m.gp.params.as_slice().len(), 1, m.gp.params.as_slice()),
        ("body_pool", m.body_pool.nrows(), m.body_pool.ncols(), m.body_pool.as_slice()),
    ];

    let mut blob = Vec::with_capacity(arrays.iter().map(|a| a.3.len() * 8).sum());
    for (_, _, _, values) in &arrays {
        for v in values.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut h = String::new();
    h.push_str(MAGIC);
    h.push('\n');
    h.push_str(&format!("version {VERSION}\n"));
    h.push_str(&format!("zeta {}\n", fmt_f64(m.zeta)));
    h.push_str(&format!("kappa {}\n", fmt_f64(m.kde.kappa())));
    h.push_str(&format!("n_observations {}\n", file.n_observations));
    h.push_str(&format!("threshold_hidden {}\n", hidden_widths(&m.threshold.arch)));
    h.push_str(&format!("gp_hidden {}\n", hidden_widths(&m.gp.arch)));
    match &m.preprocess {
        None => h.push_str("preprocess none\n"),
        Some(p) => {
            h.push_str(if p.metocean { "preprocess metocean\n" } else { "preprocess generic\n" });
            for c in &p.columns {
                if c.name.is_empty() || c.name.chars().any(char::is_whitespace) {
                    return Err(AppError::Usage(format!("column name `{}` cannot be stored (empty or contains whitespace)", c.name)));
                }
                h.push_str(&format!("column {} {} {} {}\n", c.name, c.role.name(), fmt_f64(c.scale), fmt_f64(c.offset)));
            }
        }
    }
    for (name, rows, cols, _) in &arrays {
        h.push_str(&format!("array {name} {rows} {cols}\n"));
    }
    h.push_str(&format!("blob_sha256 {}\n", sha256_hex(&blob)));
    h.push_str("end\n");

    let mut out = h.into_bytes();
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn save(file: &ModelFile, path: &Path) -> Result<()> {
    atomic_write(path, &to_bytes(file)?)
}

pub fn load(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    from_bytes(&bytes).map_err(|msg| AppError::format(path, msg))
}

struct Header<'a> {
    lines: Vec<(&'a str, Vec<&'a str>)>,
}

impl<'a> Header<'a> {
    fn get(&self, key: &str) -> Result<&[&'a str], String> {
        self.lines.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_slice()).ok_or_else(|| format!("header is missing `{key}`"))
    }

    fn one(&self, key: &str) -> Result<&'a str, String> {
        match self.get(key)? {
            [v] => Ok(v),
            _ => Err(format!("`{key}` takes exactly one value")),
        }
    }
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what}: `{s}`"))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelFile, String> {
    const END: &[u8] = b"\nend\n";
    let split = bytes.windows(END.len()).position(|w| w == END).ok_or("truncated or corrupt file: header terminator not found")?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|_| "header is not UTF-8")?;
    let blob = &bytes[split + END.len()..];

    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err("not a SPAR model file".into());
    }
    let header = Header {
        lines: lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let mut it = l.split_whitespace();
                (it.next().unwrap_or(""), it.collect())
            })
            .collect(),
    };
    let version: u32 = num(header.one("version")?, "version")?;
    if version != VERSION {
        return Err(format!("unsupported model file version {version} (this build reads version {VERSION})"));
    }
    let expected_sha = header.one("blob_sha256")?;

    let mut arrays = Vec::new();
    let mut offset = 0usize;
    for (k, v) in &header.lines {
        if *k != "array" {
            continue;
        }
        let [name, rows, cols] = v.as_slice() else {
            return Err("array lines need a name, rows and columns".into());
        };
        let rows: usize = num(rows, "array rows")?;
        let cols: usize = num(cols, "array columns")?;
        let len = rows.checked_mul(cols).ok_or("array too large")?;
        let end = offset + len * 8;
        if end > blob.len() {
            return Err(format!("truncated file: array `{name}` extends past the end of the data"));
        }
        let values: Vec<f64> = blob[offset..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push((*name, rows, cols, values));
        offset = end;
    }
    if offset != blob.len() {
        return Err(format!("data length {} does not match the declared arrays ({offset} bytes)", blob.len()));
    }
    if sha256_hex(blob) != expected_sha {
        return Err("checksum mismatch: data is corrupt".into());
    }
    let mut take = |name: &str| -> Result<(usize, usize, Vec<f64>), String> {
        let i = arrays.iter().position(|a| a.0 == name).ok_or_else(|| format!("missing array `{name}`"))?;
        let (_, r, c, v) = arrays.swap_remove(i);
        Ok((r, c, v))
    };

    let zeta: f64 = num(header.one("zeta")?, "zeta")?;
    let kappa: f64 = num(header.one("kappa")?, "kappa")?;
    let n_observations: usize = num(header.one("n_observations")?, "n_observations")?;
    let widths = |key: &str| -> Result<Vec<usize>, String> { header.get(key)?.iter().map(|w| num(w, key)).collect() };
    let err = |e: spar_core::Error| e.to_string();

    let (r, c, v) = take("kde_centers")?;
    let kde = KdeModel::new(Matrix::from_vec(r, c, v).map_err(err)?, kappa).map_err(err)?;
    let d = kde.dim();

    let t_arch = MlpArchitecture::new(d, widths("threshold_hidden")?, 1).map_err(err)?.with_transform(OutputTransform::Threshold);
    let (_, _, v) = take("threshold_params")?;
    let t_params = MlpParams::from_shapes(t_arch.layer_shapes(), Some(v)).map_err(err)?;
    let threshold = ThresholdModel::new(t_arch, t_params, zeta).map_err(err)?;

    let g_arch = MlpArchitecture::new(d, widths("gp_hidden")?, 2).map_err(err)?.with_transform(OutputTransform::GpParams);
    let (_, _, v) = take("gp_params")?;
    let g_params = MlpParams::from_shapes(g_arch.layer_shapes(), Some(v)).map_err(err)?;
    let gp = GpModel::new(g_arch, g_params).map_err(err)?;

    let (r, c, v) = take("body_pool")?;
    let body_pool = Matrix::from_vec(r, c, v).map_err(err)?;

    let preprocess = match header.one("preprocess")? {
        "none" => None,
        kind @ ("metocean" | "generic") => {
            let mut columns = Vec::new();
            for (k, v) in &header.lines {
                if *k != "column" {
                    continue;
                }
                let [name, role, scale, offset] = v.as_slice() else {
                    return Err("column lines need a name, role, scale and offset".into());
                };
                columns.push(ColumnSpec {
                    name: name.to_string(),
                    role: Role::parse(role).ok_or_else(|| format!("unknown role `{role}`"))?,
                    scale: num(scale, "scale")?,
                    offset: num(offset, "offset")?,
                });
            }
            Some(PreprocessSpec { columns, metocean: kind == "metocean" })
        }
        other => return Err(format!("unknown preprocess kind `{other}`")),
    };

    let model = SparModel::new(zeta, kde, threshold, gp, body_pool, preprocess).map_err(err)?;
    Ok(ModelFile { model, n_observations })
}
