//! Frozen test vectors pinning the coded byte format.
//!
//! [`generate_suite`] rebuilds every input deterministically; the expected
//! bytes live in `tests/vectors/reference_v1.json` and are checked against
//! any backend with [`verify_backend`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_cdf, check_backend, CdfBatch, CoderBackend, ReferenceCoder, FORMAT_VERSION};
use crate::entropy::laplace_pmf_table;
use crate::error::{NvcError, Result};

pub const SUITE_FILE: &str = "reference_v1.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVector {
    pub name: String,
    pub symbols: Vec<i32>,
    pub table_index: Vec<u32>,
    pub tables: CdfBatch,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorSuite {
    pub format_version: u32,
    pub vectors: Vec<TestVector>,
}

struct Spec {
    name: &'static str,
    tables: CdfBatch,
    symbols: Vec<i32>,
    table_index: Vec<u32>,
}

fn draw(rng: &mut ChaCha8Rng, batch: &CdfBatch, k: u32) -> i32 {
    let t = batch.table(k as usize).expect("suite tables are valid");
    let u = rng.random_range(0..super::TOTAL);
    t.min_symbol + t.find(u) as i32
}

fn specs() -> Vec<Spec> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4e56_4331);

    out.push(Spec { name: "empty", tables: CdfBatch::new(), symbols: vec![], table_index: vec![] });

    let mut single = CdfBatch::new();
    single.push(&build_cdf(&[1.0], 3).unwrap());
    out.push(Spec { name: "single_symbol", tables: single, symbols: vec![3; 50], table_index: vec![0; 50] });

    let mut coin = CdfBatch::new();
    coin.push(&build_cdf(&[0.5, 0.5], 0).unwrap());
    let symbols = (0..2000).map(|_| rng.random_range(0..2)).collect();
    out.push(Spec { name: "fair_coin", tables: coin, symbols, table_index: vec![0; 2000] });

    let mut skew = CdfBatch::new();
    skew.push(&build_cdf(&[1e-9, 1.0], 0).unwrap());
    let symbols = (0..5000).map(|i| if i % 331 == 0 { 0 } else { 1 }).collect();
    out.push(Spec { name: "carry_runs", tables: skew, symbols, table_index: vec![0; 5000] });

    let mut laplace = CdfBatch::new();
    let sigmas = [0.011, 0.05, 0.3, 1.0, 2.5, 7.0, 20.0];
    for s in sigmas {
        let (r, pmf) = laplace_pmf_table(s);
        laplace.push(&build_cdf(&pmf, -r).unwrap());
    }
    let table_index: Vec<u32> = (0..3000).map(|_| rng.random_range(0..sigmas.len() as u32)).collect();
    let symbols = table_index.iter().map(|&k| draw(&mut rng, &laplace, k)).collect();
    out.push(Spec { name: "laplace_mixture", tables: laplace, symbols, table_index });

    let mut random = CdfBatch::new();
    for _ in 0..24 {
        let n = rng.random_range(1..64);
        let pmf: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random::<f64>().powi(3) })
            .collect();
        random.push(&build_cdf(&pmf, rng.random_range(-40..10)).unwrap());
    }
    let table_index: Vec<u32> = (0..4000).map(|_| rng.random_range(0..24)).collect();
    let symbols = table_index
        .iter()
        .map(|&k| {
            let t = random.table(k as usize).unwrap();
            t.min_symbol + rng.random_range(0..t.symbol_count() as i32)
        })
        .collect();
    out.push(Spec { name: "random_tables_uniform_symbols", tables: random, symbols, table_index });

    out
}

/// Inputs of every vector, with bytes produced by the reference coder.
pub fn generate_suite() -> Result<VectorSuite> {
    let vectors = specs()
        .into_iter()
        .map(|s| {
            let chunk = ReferenceCoder.encode(&s.symbols, &s.table_index, &s.tables)?;
            Ok(TestVector {
                name: s.name.to_string(),
                symbols: s.symbols,
                table_index: s.table_index,
                tables: s.tables,
                bytes: chunk.bytes,
            })
        })
        .collect::<Result<_>>()?;
    Ok(VectorSuite { format_version: FORMAT_VERSION, vectors })
}

impl VectorSuite {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

/// Checks that `backend` encodes every vector to the frozen bytes and decodes
/// them back. Returns the names of the vectors that passed.
pub fn verify_backend(backend: &dyn CoderBackend, suite: &VectorSuite) -> Result<Vec<String>> {
    check_backend(backend)?;
    if suite.format_version != backend.format_version() {
        return Err(NvcError::BackendVersion { expected: suite.format_version, found: backend.format_version() });
    }
    let mut passed = Vec::new();
    for v in &suite.vectors {
        let chunk = backend.encode(&v.symbols, &v.table_index, &v.tables)?;
        if chunk.bytes != v.bytes {
            return Err(NvcError::MalformedStream(format!("vector `{}`: encoded bytes differ", v.name)));
        }
        if backend.decode(&chunk, &v.table_index, &v.tables)? != v.symbols {
            return Err(NvcError::MalformedStream(format!("vector `{}`: decoded symbols differ", v.name)));
        }
        passed.push(v.name.clone());
    }
    Ok(passed)
}
