use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::synth::standard_normal;
use crate::error::{Error, Result};
use crate::io::ByteCursor;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"VG4DEMB1";

/// Loaded vectors may deviate from unit norm by at most this much.
pub const LOAD_NORM_TOLERANCE: f64 = 1e-3;

pub const TEXT_INDEX_FILE: &str = "text.index.jsonl";
pub const TEXT_MATRIX_FILE: &str = "text.emb";
pub const VIDEO_INDEX_FILE: &str = "video.index.jsonl";
pub const VIDEO_MATRIX_FILE: &str = "video.emb";

/// Rows of unit-norm vectors, each keyed by a string id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    id: String,
    row: usize,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != ids.len() * dim {
            return Err(Error::Dimension(format!(
                "{} ids with dim {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (r, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), r).is_some() {
                return Err(Error::format(0, format!("duplicate embedding id {id}")));
            }
        }
        Ok(Self { ids, dim, data, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&r| self.row(r))
    }

    pub fn matrix(&self) -> &[f32] {
        &self.data
    }

    /// Largest `|‖row‖ - 1|` over all rows.
    pub fn max_norm_deviation(&self) -> f64 {
        self.data
            .chunks(self.dim)
            .map(|r| (r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn encode_matrix(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn encode_index(&self) -> String {
        let mut s = String::new();
        for (row, id) in self.ids.iter().enumerate() {
            s.push_str(&serde_json::to_string(&IndexRow { id: id.clone(), row }).expect("index row serializes"));
            s.push('\n');
        }
        s
    }

    pub fn save(&self, index_path: &Path, matrix_path: &Path) -> Result<()> {
        crate::io::write_file(matrix_path, &self.encode_matrix())?;
        let mut f = std::fs::File::create(index_path).map_err(|e| Error::io(index_path, e))?;
        f.write_all(self.encode_index().as_bytes())
            .map_err(|e| Error::io(index_path, e))
    }

    /// Parses a JSON-lines index and a `VG4DEMB1` matrix.
    pub fn decode(index: &str, matrix: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(matrix);
        if cur.take(8)? != EMBEDDING_MAGIC {
            return Err(Error::format(0, "bad embedding magic"));
        }
        let rows = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        if dim == 0 {
            return Err(Error::format(12, "embedding dim is zero"));
        }
        let mut data = Vec::with_capacity(rows * dim);
        for _ in 0..rows * dim {
            data.push(cur.f32()?);
        }
        if !cur.is_empty() {
            return Err(Error::format(cur.offset(), "trailing bytes after embedding matrix"));
        }
        let mut ids: Vec<Option<String>> = vec![None; rows];
        let mut offset = 0u64;
        for line in index.lines() {
            if !line.trim().is_empty() {
                let r: IndexRow = serde_json::from_str(line)
                    .map_err(|e| Error::format(offset, format!("embedding index: {e}")))?;
                let slot = ids.get_mut(r.row).ok_or_else(|| {
                    Error::format(offset, format!("index row {} beyond {rows} matrix rows", r.row))
                })?;
                if slot.is_some() {
                    return Err(Error::format(offset, format!("matrix row {} indexed twice", r.row)));
                }
                *slot = Some(r.id);
            }
            offset += line.len() as u64 + 1;
        }
        let ids = ids
            .into_iter()
            .enumerate()
            .map(|(r, id)| id.ok_or_else(|| Error::format(offset, format!("matrix row {r} has no index entry"))))
            .collect::<Result<Vec<_>>>()?;
        let table = Self::new(ids, dim, data)?;
        for (r, row) in table.data.chunks(dim).enumerate() {
            let n = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > LOAD_NORM_TOLERANCE {
                return Err(Error::format(
                    16 + (r * dim * 4) as u64,
                    format!("row {r} ({}) has norm {n}", table.ids[r]),
                ));
            }
        }
        Ok(table)
    }
}

/// Reads one embedding table from its index and matrix files.
pub fn load_embeddings(index_path: &Path, matrix_path: &Path) -> Result<EmbeddingTable> {
    let index = std::fs::read_to_string(index_path).map_err(|e| Error::io(index_path, e))?;
    let matrix = crate::io::read_file(matrix_path)?;
    EmbeddingTable::decode(&index, &matrix).map_err(|e| match e {
        Error::Format { offset, msg } => Error::format(offset, format!("{}: {msg}", matrix_path.display())),
        other => other,
    })
}

/// Frozen class-text (`K × C`) and per-sample video (`id → C`) embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub text: EmbeddingTable,
    pub video: EmbeddingTable,
}

impl EmbeddingStore {
    pub fn new(text: EmbeddingTable, video: EmbeddingTable) -> Result<Self> {
        if text.dim() != video.dim() {
            return Err(Error::Dimension(format!(
                "text dim {} != video dim {}",
                text.dim(),
                video.dim()
            )));
        }
        Ok(Self { text, video })
    }

    pub fn dim(&self) -> usize {
        self.text.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.text.len()
    }

    pub fn video_embedding(&self, sample_id: &str) -> Option<&[f32]> {
        self.video.get(sample_id)
    }

    /// Fails with a data error naming the first id without a video embedding.
    pub fn ensure_covers<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for id in ids {
            if self.video.get(id).is_none() {
                return Err(Error::Data(format!("no video embedding for sample {id}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.text.save(&dir.join(TEXT_INDEX_FILE), &dir.join(TEXT_MATRIX_FILE))?;
        self.video.save(&dir.join(VIDEO_INDEX_FILE), &dir.join(VIDEO_MATRIX_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = load_embeddings(&dir.join(TEXT_INDEX_FILE), &dir.join(TEXT_MATRIX_FILE))?;
        let video = load_embeddings(&dir.join(VIDEO_INDEX_FILE), &dir.join(VIDEO_MATRIX_FILE))?;
        Self::new(text, video)
    }
}

fn default_sigma_emb() -> f64 {
    0.1
}

/// Parameters of a synthetic embedding store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSpec {
    pub dim: usize,
    #[serde(default = "default_sigma_emb")]
    pub sigma_emb: f64,
}

impl Default for EmbedSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            sigma_emb: default_sigma_emb(),
        }
    }
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < crate::tensor::NORM_EPSILON {
        return Err(Error::Degenerate("cannot normalize a zero vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Class vectors are Gaussian draws made orthonormal by Gram-Schmidt when
/// `dim >= K` (merely normalized otherwise). Each sample's video vector is
/// `normalize(class + sigma·noise)`.
pub fn synth_embeddings(
    spec: &EmbedSpec,
    class_names: &[String],
    samples: &[(String, usize)],
    rng_seed: u64,
) -> Result<EmbeddingStore> {
    if spec.dim == 0 || class_names.is_empty() {
        return Err(Error::Argument("embedding dim and class count must be >= 1".into()));
    }
    if !(spec.sigma_emb >= 0.0) {
        return Err(Error::Argument(format!("sigma_emb must be >= 0, got {}", spec.sigma_emb)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (k, c) = (class_names.len(), spec.dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..c).map(|_| standard_normal(&mut rng)).collect();
        if c >= k {
            // two passes keep the rows orthogonal to ~1e-16
            for _ in 0..2 {
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
        }
        normalize(&mut v)?;
        basis.push(v);
    }
    let text_data: Vec<f32> = basis.iter().flatten().map(|&v| v as f32).collect();
    let text = EmbeddingTable::new(class_names.to_vec(), c, text_data)?;

    let mut video_data = Vec::with_capacity(samples.len() * c);
    for (id, label) in samples {
        let class = basis
            .get(*label)
            .ok_or_else(|| Error::Argument(format!("sample {id} has label {label} >= {k}")))?;
        if spec.sigma_emb == 0.0 {
            video_data.extend(text.row(*label));
            continue;
        }
        let mut v: Vec<f64> = class
            .iter()
            .map(|&x| x + spec.sigma_emb * standard_normal(&mut rng))
            .collect();
        normalize(&mut v)?;
        video_data.extend(v.iter().map(|&x| x as f32));
    }
    let video = EmbeddingTable::new(samples.iter().map(|(id, _)| id.clone()).collect(), c, video_data)?;
    EmbeddingStore::new(text, video)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("class {i}")).collect()
    }

    fn samples(n: usize, k: usize) -> Vec<(String, usize)> {
        (0..n).map(|i| (format!("s{i}"), i % k)).collect()
    }

    #[test]
    fn zero_sigma_copies_class_vectors() {
        let s = synth_embeddings(&EmbedSpec { dim: 8, sigma_emb: 0.0 }, &classes(3), &samples(7, 3), 1).unwrap();
        for (i, id) in s.video.ids().iter().enumerate() {
            assert_eq!(s.video.get(id).unwrap(), s.text.row(i % 3));
        }
    }

    #[test]
    fn gram_schmidt_rows_orthonormal() {
        let s = synth_embeddings(&EmbedSpec { dim: 16, sigma_emb: 0.1 }, &classes(8), &samples(4, 8), 2).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let d: f64 = s.text.row(i).iter().zip(s.text.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-6, "{i},{j}: {d}");
            }
        }
        assert!(s.video.max_norm_deviation() < 1e-5);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let spec = EmbedSpec { dim: 6, sigma_emb: 0.2 };
        let a = synth_embeddings(&spec, &classes(4), &samples(9, 4), 5).unwrap();
        assert_eq!(a, synth_embeddings(&spec, &classes(4), &samples(9, 4), 5).unwrap());
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let b = EmbeddingStore::load(dir.path()).unwrap();
        assert_eq!(a, b);
        let bytes = std::fs::read(dir.path().join(VIDEO_MATRIX_FILE)).unwrap();
        assert_eq!(bytes, b.video.encode_matrix());
    }

    #[test]
    fn non_unit_rows_rejected_on_load() {
        let t = EmbeddingTable::new(vec!["a".into()], 2, vec![0.6, 0.81]).unwrap();
        let err = EmbeddingTable::decode(&t.encode_index(), &t.encode_matrix()).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 16, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let t = EmbeddingTable::new(vec!["a".into(), "b".into()], 1, vec![1.0, 1.0]).unwrap();
        let index = "{\"id\":\"a\",\"row\":0}\n{\"id\":\"a\",\"row\":1}\n";
        assert!(matches!(EmbeddingTable::decode(index, &t.encode_matrix()), Err(Error::Format { .. })));
    }

    #[test]
    fn coverage_check_names_missing_id() {
        let s = synth_embeddings(&EmbedSpec::default(), &classes(2), &samples(2, 2), 0).unwrap();
        let err = s.ensure_covers(["s0", "nope"]).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }
}
