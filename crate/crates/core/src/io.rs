//! Field files, CSV dumps and stored principal maps.
//!
//! A field file is a 24-byte little-endian header (`b"CFLD"`, `u32 n`, `f64 L`,
//! `u32 version`, `u32 flags`) followed by `n²` row-major `(re, im)` pairs of `f64`.
//! Flag bit 0 marks a field with a removed singularity.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::beltrami::{BeltramiCoefficient, PrincipalMap};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, GridSpec};

pub const MAGIC: &[u8; 4] = b"CFLD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
const FLAG_SINGULAR: u32 = 1;

pub fn write_field<W: Write>(field: &ComplexField, mut w: W) -> Result<()> {
    let spec = field.spec();
    let n = u32::try_from(spec.n()).map_err(|_| Error::Format("grid too large for the field format".into()))?;
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&n.to_le_bytes());
    header.extend_from_slice(&spec.half_width().to_le_bytes());
    header.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if field.is_singular() { FLAG_SINGULAR } else { 0 };
    header.extend_from_slice(&flags.to_le_bytes());
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(field.values().len() * 16);
    for v in field.values() {
        body.extend_from_slice(&v.re.to_le_bytes());
        body.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<ComplexField> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated field header: {e}")))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("not a field file (bad magic)".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let n = u32_at(4) as usize;
    let half_width = f64::from_le_bytes(header[8..16].try_into().unwrap());
    let version = u32_at(16);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported field version {version}")));
    }
    let flags = u32_at(20);
    let spec = GridSpec::new(n, half_width)?;
    let mut body = vec![0u8; n * n * 16];
    r.read_exact(&mut body)
        .map_err(|e| Error::Format(format!("truncated field body: {e}")))?;
    let values = body
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    if flags & FLAG_SINGULAR != 0 {
        ComplexField::with_singularity(spec, values)
    } else {
        ComplexField::new(spec, values)
    }
}

pub fn save_field(field: &ComplexField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<ComplexField> {
    read_field(BufReader::new(File::open(path)?))
}

/// CSV dump with columns `j, k, re, im`.
pub fn write_field_csv<W: Write>(field: &ComplexField, mut w: W) -> Result<()> {
    let n = field.spec().n();
    writeln!(w, "j,k,re,im")?;
    for (idx, v) in field.values().iter().enumerate() {
        writeln!(w, "{},{},{:e},{:e}", idx / n, idx % n, v.re, v.im)?;
    }
    Ok(())
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn write_metadata<W: Write>(entries: &BTreeMap<String, String>, mut w: W) -> Result<()> {
    for (k, v) in entries {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}

pub fn read_metadata<R: BufRead>(r: R) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("metadata line without '=': {line}")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn map_metadata(map: &PrincipalMap) -> BTreeMap<String, String> {
    let d = &map.diagnostics;
    let spec = map.spec();
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("n", spec.n().to_string());
    put("L", spec.half_width().to_string());
    put("k", map.mu.k().to_string());
    put("K", map.mu.distortion().to_string());
    put("residual", format!("{:e}", map.residual));
    put("iterations", map.iterations.to_string());
    put("tolerance", format!("{:e}", map.tolerance));
    put("origin_value", format!("{:e}", d.origin_value));
    put("origin_allowance", format!("{:e}", d.origin_allowance));
    put("normalization_ok", d.normalization_ok.to_string());
    put("offset_at_infinity_re", format!("{:e}", d.offset_at_infinity.re));
    put("offset_at_infinity_im", format!("{:e}", d.offset_at_infinity.im));
    put("tail_bound", format!("{:e}", d.tail_bound));
    put("tail_slope", format!("{:e}", d.tail_slope));
    put("decay_ok", d.decay_ok.to_string());
    put("beltrami_residual", format!("{:e}", d.beltrami_residual));
    put("beltrami_allowance", format!("{:e}", d.beltrami_allowance));
    put("beltrami_ok", d.beltrami_ok.to_string());
    put("support_tail_fraction", format!("{:e}", d.support_tail_fraction));
    m
}

/// Writes `phi.cfld`, `h.cfld`, `mu.cfld` and `map.meta` into `dir`.
pub fn save_principal_map(map: &PrincipalMap, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_field(&map.phi, &dir.join("phi.cfld"))?;
    save_field(&map.h, &dir.join("h.cfld"))?;
    save_field(map.mu.field(), &dir.join("mu.cfld"))?;
    let mut w = BufWriter::new(File::create(dir.join("map.meta"))?);
    write_metadata(&map_metadata(map), &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_principal_map(dir: &Path) -> Result<PrincipalMap> {
    let phi = load_field(&dir.join("phi.cfld"))?;
    let h = load_field(&dir.join("h.cfld"))?;
    let mu_field = load_field(&dir.join("mu.cfld"))?;
    let meta = read_metadata(BufReader::new(File::open(dir.join("map.meta"))?))?;
    let get = |k: &str| -> Result<f64> {
        meta.get(k)
            .ok_or_else(|| Error::Format(format!("metadata is missing '{k}'")))?
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("metadata '{k}': {e}")))
    };
    let mu = BeltramiCoefficient::new(mu_field, get("k")?)?;
    PrincipalMap::from_parts(phi, h, mu, get("residual")?, get("iterations")? as usize, get("tolerance")?)
}
