//! Embedding matrices on disk and cosine-distance costs.
//!
//! `.suse` layout, all little-endian:
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0 | 4 | magic `b"SUSE"` |
//! | 4 | 4 | u32 version, currently 1 |
//! | 8 | 4 | u32 rows |
//! | 12 | 4 | u32 dims |
//! | 16 | 4·rows·dims | f32 payload, row-major |
//!
//! Row ids live in a sibling file with the `.ids` extension, one per line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::exec::Execution;

pub const MAGIC: [u8; 4] = *b"SUSE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dims: usize,
    data: Vec<f32>,
    ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dims: usize, data: Vec<f32>, ids: Vec<String>) -> Result<Self> {
        if data.len() != rows * dims {
            return Err(Error::Shape(format!(
                "payload has {} values, expected {rows}x{dims}",
                data.len()
            )));
        }
        if ids.len() != rows {
            return Err(Error::Shape(format!("{} ids for {rows} rows", ids.len())));
        }
        check_finite(&data, dims)?;
        let mut seen = HashSet::with_capacity(rows);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingMatrix {
            rows,
            dims,
            data,
            ids,
        })
    }

    /// Build from f64 rows, rounding to f32 storage.
    pub fn from_rows(rows: &[Vec<f64>], ids: Vec<String>) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().map(|&x| x as f32).collect();
        Self::new(rows.len(), dims, data, ids)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    /// Rows selected by id, in the order given.
    pub fn select(&self, ids: &[&str]) -> Result<EmbeddingMatrix> {
        let pos: std::collections::HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(ids.len() * self.dims);
        for id in ids {
            let i = *pos
                .get(id)
                .ok_or_else(|| Error::MissingEmbedding((*id).to_string()))?;
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix::new(
            ids.len(),
            self.dims,
            data,
            ids.iter().map(|s| s.to_string()).collect(),
        )
    }

    /// Stack `self` over `other`.
    pub fn concat(&self, other: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(self.dims, other.dims));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut ids = self.ids.clone();
        ids.extend(other.ids.iter().cloned());
        EmbeddingMatrix::new(self.rows + other.rows, self.dims, data, ids)
    }

    /// Row-normalized copy in f64.
    pub fn unit_rows_f64(&self) -> Result<Array2<f64>> {
        let mut out = Array2::<f64>::zeros((self.rows, self.dims));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let src = self.row(i);
            let norm = src
                .iter()
                .map(|&x| f64::from(x) * f64::from(x))
                .sum::<f64>()
                .sqrt();
            if norm <= 1e-12 {
                return Err(Error::ZeroNorm(self.ids[i].clone()));
            }
            for (o, &x) in row.iter_mut().zip(src) {
                *o = f64::from(x) / norm;
            }
        }
        Ok(out)
    }
}

fn check_finite(data: &[f32], dims: usize) -> Result<()> {
    if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
        let (row, col) = if dims == 0 { (0, 0) } else { (pos / dims, pos % dims) };
        return Err(Error::NonFinite { row, col });
    }
    Ok(())
}

pub fn ids_path(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

/// Write a bare `.suse` block without ids.
pub fn write_block(path: impl AsRef<Path>, rows: usize, dims: usize, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    if data.len() != rows * dims {
        return Err(Error::Shape(format!(
            "payload has {} values, expected {rows}x{dims}",
            data.len()
        )));
    }
    check_finite(data, dims)?;
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} exceeds u32")))
    };
    let (r, d) = (as_u32(rows, "rows")?, as_u32(dims, "dims")?);
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&r.to_le_bytes());
    buf.extend_from_slice(&d.to_le_bytes());
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a bare `.suse` block: `(rows, dims, data)`.
pub fn read_block(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let rows = word(8) as usize;
    let dims = word(12) as usize;
    let expected = rows * dims * 4;
    let found = bytes.len() - HEADER_LEN;
    if found != expected {
        return Err(Error::Truncated { expected, found });
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_finite(&data, dims)?;
    Ok((rows, dims, data))
}

/// Write the matrix and its sibling `.ids` file. Nothing is written if the
/// data contains NaN or infinities.
pub fn write_matrix(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_finite(&matrix.data, matrix.dims)?;
    if let Some(id) = matrix.ids.iter().find(|id| id.contains(['\n', '\r'])) {
        return Err(Error::Data(format!("id {id:?} contains a newline")));
    }
    write_block(path, matrix.rows, matrix.dims, &matrix.data)?;
    let ids = ids_path(path);
    let file = File::create(&ids).map_err(|e| Error::io(&ids, e))?;
    let mut w = BufWriter::new(file);
    for id in &matrix.ids {
        writeln!(w, "{id}").map_err(|e| Error::io(&ids, e))?;
    }
    w.flush().map_err(|e| Error::io(&ids, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let (rows, dims, data) = read_block(path)?;
    let ids_file = ids_path(path);
    let file = File::open(&ids_file).map_err(|e| Error::io(&ids_file, e))?;
    let ids = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(&ids_file, e))?;
    EmbeddingMatrix::new(rows, dims, data, ids)
}

/// Scale every row to unit Euclidean norm.
pub fn normalize_rows(matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let unit = matrix.unit_rows_f64()?;
    let data = unit.iter().map(|&x| x as f32).collect();
    EmbeddingMatrix::new(matrix.rows, matrix.dims, data, matrix.ids.clone())
}

/// Dense nonnegative `m x n` transport cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), _)) = entries.indexed_iter().find(|(_, c)| !c.is_finite()) {
            return Err(Error::NonFinite { row: i, col: j });
        }
        if entries.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidArgument("cost entries must be nonnegative".into()));
        }
        Ok(CostMatrix(entries))
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn n(&self) -> usize {
        self.0.ncols()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn transposed(&self) -> CostMatrix {
        CostMatrix(self.0.t().to_owned())
    }

    pub fn mean(&self) -> f64 {
        self.0.mean().unwrap_or(0.0)
    }
}

/// `C_ij = 1 - cos(u_i, v_j)`, computed in f64 and clamped to `[0, 2]`.
pub fn cosine_cost(u: &EmbeddingMatrix, v: &EmbeddingMatrix) -> Result<CostMatrix> {
    cosine_cost_with(u, v, Execution::default())
}

pub fn cosine_cost_with(
    u: &EmbeddingMatrix,
    v: &EmbeddingMatrix,
    exec: Execution,
) -> Result<CostMatrix> {
    if u.dims != v.dims {
        return Err(Error::DimensionMismatch(u.dims, v.dims));
    }
    let uu = u.unit_rows_f64()?;
    let vv = v.unit_rows_f64()?;
    let (m, n) = (u.rows, v.rows);
    let mut out = vec![0.0f64; m * n];
    exec.for_each_chunk_mut(&mut out, n, |i, row| {
        let ui = uu.row(i);
        for (j, c) in row.iter_mut().enumerate() {
            let cos = ui.dot(&vv.row(j)).clamp(-1.0, 1.0);
            *c = 1.0 - cos;
        }
    });
    let entries = Array2::from_shape_vec((m, n), out).expect("shape matches");
    Ok(CostMatrix(entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> EmbeddingMatrix {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingMatrix::from_rows(&rows, ids).unwrap()
    }

    #[test]
    fn write_size_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.suse");
        let m = mat(&[&[1.0, 2.0, 3.0], &[-0.1, 1e-30, 7.5]]);
        write_matrix(&m, &p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 24);
        let back = read_matrix(&p).unwrap();
        assert_eq!(back.rows(), 2);
        let bits = |m: &EmbeddingMatrix| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back.ids(), m.ids());
        assert_eq!(
            std::fs::read_to_string(dir.path().join("m.ids")).unwrap(),
            "r0\nr1\n"
        );
    }

    #[test]
    fn nan_refused_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.suse");
        let m = EmbeddingMatrix {
            rows: 1,
            dims: 2,
            data: vec![1.0, f32::NAN],
            ids: vec!["a".into()],
        };
        assert!(matches!(write_matrix(&m, &p), Err(Error::NonFinite { row: 0, col: 1 })));
        assert!(!p.exists());
        assert!(EmbeddingMatrix::new(1, 2, vec![1.0, f32::NAN], vec!["a".into()]).is_err());
    }

    #[test]
    fn read_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.suse");
        std::fs::write(&p, b"NOPE\x01\0\0\0").unwrap();
        let e = read_block(&p).unwrap_err();
        assert_eq!(e.to_string(), "not an embedding matrix file");

        let mut bytes = b"SUSE".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0; 8]);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_block(&p), Err(Error::VersionMismatch(2))));

        let mut bytes = b"SUSE".to_vec();
        for v in [1u32, 2, 3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0; 20]);
        std::fs::write(&p, &bytes).unwrap();
        let e = read_block(&p).unwrap_err();
        assert_eq!(e.to_string(), "truncated matrix payload: expected 24 bytes, found 20");
    }

    #[test]
    fn reads_wide_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.suse");
        let data: Vec<f32> = (0..100 * 1024).map(|i| (i % 97) as f32 * 0.01).collect();
        let ids = (0..100).map(|i| format!("id{i}")).collect();
        write_matrix(&EmbeddingMatrix::new(100, 1024, data, ids).unwrap(), &p).unwrap();
        let m = read_matrix(&p).unwrap();
        assert_eq!((m.rows(), m.dims()), (100, 1024));
    }

    #[test]
    fn normalize() {
        let n = normalize_rows(&mat(&[&[3.0, 4.0]])).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7 && (n.row(0)[1] - 0.8).abs() < 1e-7);
        let again = normalize_rows(&n).unwrap();
        for (a, b) in again.data().iter().zip(n.data()) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(matches!(normalize_rows(&mat(&[&[0.0, 0.0]])), Err(Error::ZeroNorm(id)) if id == "r0"));
    }

    #[test]
    fn cosine_cost_cases() {
        let u = mat(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let v = mat(&[&[3.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]);
        let c = cosine_cost(&u, &v).unwrap();
        let e = c.entries();
        assert_eq!(e.dim(), (2, 3));
        assert!(e[[0, 0]].abs() < 1e-12);
        assert!((e[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((e[[1, 2]] - 2.0).abs() < 1e-12);
        let w = mat(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(cosine_cost(&u, &w), Err(Error::DimensionMismatch(2, 3))));
        assert!(cosine_cost(&u, &mat(&[&[0.0, 0.0]])).is_err());
    }
}
