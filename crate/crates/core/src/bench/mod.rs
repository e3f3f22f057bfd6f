//! Timing and storage measurements over a corpus, with a CSV report.
//!
//! Encryption time covers ownership resolution and region encryption.
//! Decryption time at level `k` covers the descending key scan for a user
//! holding only the level-`k` role plus restoration of every region that
//! user may see. Each figure is the median of several timed runs after one
//! untimed warm-up run.

mod synth;

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use flate2::write::DeflateEncoder;
use flate2::Compression;

pub use synth::SyntheticSpec;

use crate::error::{Error, Result};
use crate::image::PixelBuffer;
use crate::keycore::{recover_max_group, setup, UserSecretKey, WrappedKeyStore};
use crate::metadata::ImageMetadata;
use crate::regioncrypt::{protect_image, unlock_image};
use crate::repository::encode_container;

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// 1 when the response has zero variance.
    pub r_squared: f64,
}

pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::validation("fit input contains a non-finite value"));
    }
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::validation("a linear fit needs at least two points"));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::validation("a linear fit needs at least two distinct x values"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = points.iter().map(|p| (p.1 - (slope * p.0 + intercept)).powi(2)).sum();
        1.0 - ss_res / syy
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Measurements for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub image_id: String,
    /// Pixels encrypted (owned by some object).
    pub encrypted_pixels: u64,
    /// Ciphertext bytes across all blobs.
    pub encrypted_bytes: u64,
    pub encrypt_seconds: f64,
    /// Index `k - 1` holds the time for key level `k`.
    pub decrypt_seconds: Vec<f64>,
    /// Deflate size of the unprotected pixels.
    pub clean_bytes: u64,
    pub container_bytes: u64,
}

impl BenchRecord {
    pub fn overhead_bytes(&self) -> i64 {
        self.container_bytes as i64 - self.clean_bytes as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    /// Timed runs per measurement; the median is reported.
    pub repetitions: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { repetitions: 3 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub group_count: u16,
    pub records: Vec<BenchRecord>,
    /// `(image_id, reason)` for images that could not be measured.
    pub failures: Vec<(String, String)>,
}

impl BenchReport {
    pub fn encrypt_median(&self) -> Option<f64> {
        median(&self.records.iter().map(|r| r.encrypt_seconds).collect::<Vec<_>>())
    }

    /// Median decryption time per key level, index `k - 1`.
    pub fn decrypt_medians(&self) -> Vec<f64> {
        (0..self.group_count as usize)
            .filter_map(|k| median(&self.records.iter().map(|r| r.decrypt_seconds[k]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn time_fit(&self) -> Result<LinearFit> {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .map(|r| (r.encrypted_pixels as f64, r.encrypt_seconds))
            .collect();
        fit_linear(&pts)
    }

    pub fn overhead_fit(&self) -> Result<LinearFit> {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .map(|r| (r.encrypted_bytes as f64, r.overhead_bytes() as f64))
            .collect();
        fit_linear(&pts)
    }

    pub fn csv_header(group_count: u16) -> Vec<String> {
        let mut h = vec!["image_id".to_string(), "pixels".into(), "encrypt_s".into()];
        h.extend((1..=group_count).map(|k| format!("decrypt_s_{k}")));
        h.extend(["clean_bytes".to_string(), "container_bytes".into()]);
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::validation(format!("CSV: {e}"));
        w.write_record(Self::csv_header(self.group_count)).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.image_id.clone(),
                r.encrypted_pixels.to_string(),
                format!("{:.9}", r.encrypt_seconds),
            ];
            row.extend(r.decrypt_seconds.iter().map(|s| format!("{s:.9}")));
            row.extend([r.clean_bytes.to_string(), r.container_bytes.to_string()]);
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::validation(format!("CSV: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }
}

/// A row of the CSV report, as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub image_id: String,
    pub pixels: u64,
    pub encrypt_s: f64,
    pub decrypt_s: Vec<f64>,
    pub clean_bytes: u64,
    pub container_bytes: u64,
}

pub fn read_bench_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let bad = |m: String| Error::validation(format!("bench CSV: {m}"));
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let levels = header
        .len()
        .checked_sub(5)
        .ok_or_else(|| bad("too few columns".into()))?;
    let expected = BenchReport::csv_header(levels as u16);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num =
                |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(format!("bad number {:?}", &rec[i]))) };
            let int =
                |i: usize| -> Result<u64> { rec[i].parse().map_err(|_| bad(format!("bad integer {:?}", &rec[i]))) };
            Ok(CsvRow {
                image_id: rec[0].to_string(),
                pixels: int(1)?,
                encrypt_s: num(2)?,
                decrypt_s: (0..levels).map(|k| num(3 + k)).collect::<Result<_>>()?,
                clean_bytes: int(3 + levels)?,
                container_bytes: int(4 + levels)?,
            })
        })
        .collect()
}

fn time<T>(f: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let start = Instant::now();
    let out = f()?;
    Ok((start.elapsed().as_secs_f64(), out))
}

struct Keys {
    store: WrappedKeyStore,
    users: Vec<UserSecretKey>,
    top: crate::keycore::GroupKeyChain,
}

fn level_keys(group_count: u16) -> Result<Keys> {
    let roles: BTreeMap<String, u16> = (1..=group_count).map(|k| (format!("level{k}"), k)).collect();
    let s = setup(&roles, group_count)?;
    let users = (1..=group_count)
        .map(|k| {
            s.state
                .register(&format!("user{k}"), &BTreeSet::from([format!("level{k}")]))
        })
        .collect::<Result<_>>()?;
    Ok(Keys {
        store: s.store,
        users,
        top: s.state.top_chain,
    })
}

fn measure(image: &PixelBuffer, meta: &ImageMetadata, keys: &Keys, reps: usize) -> Result<BenchRecord> {
    let levels = keys.users.len();
    let decrypt_once = |protected: &crate::regioncrypt::ProtectedImage, k: usize| {
        time(|| {
            let chain = recover_max_group(&keys.users[k], &keys.store)?.map(|r| r.chain);
            unlock_image(protected, chain.as_ref())
        })
    };

    // warm-up
    let protected = protect_image(image, meta, &keys.top)?;
    for k in 0..levels {
        decrypt_once(&protected, k)?;
    }

    let mut enc = Vec::with_capacity(reps);
    let mut dec = vec![Vec::with_capacity(reps); levels];
    let mut last = protected;
    for _ in 0..reps {
        let (t, p) = time(|| protect_image(image, meta, &keys.top))?;
        enc.push(t);
        last = p;
        // levels interleaved so drift hits all of them alike
        for (k, times) in dec.iter_mut().enumerate() {
            times.push(decrypt_once(&last, k)?.0);
        }
    }

    let mut clean = DeflateEncoder::new(Vec::new(), Compression::default());
    clean.write_all(image.as_bytes())?;
    let clean_bytes = clean.finish()?.len() as u64;
    let container_bytes = encode_container(&last)?.len() as u64;

    Ok(BenchRecord {
        image_id: meta.image_id.clone(),
        encrypted_pixels: last.ownership.owned_total(),
        encrypted_bytes: last.encrypted_bytes(),
        encrypt_seconds: median(&enc).unwrap_or(0.0),
        decrypt_seconds: dec.iter().map(|t| median(t).unwrap_or(0.0)).collect(),
        clean_bytes,
        container_bytes,
    })
}

/// Runs the benchmark sequentially over `corpus`.
///
/// Every image must use a table with `group_count` groups. Per-image errors
/// are collected in the report instead of aborting the run.
pub fn run_bench(
    corpus: impl IntoIterator<Item = (PixelBuffer, ImageMetadata)>,
    group_count: u16,
    options: &BenchOptions,
) -> Result<BenchReport> {
    if options.repetitions == 0 {
        return Err(Error::validation("at least one repetition is required"));
    }
    let keys = level_keys(group_count)?;
    let mut report = BenchReport {
        group_count,
        ..Default::default()
    };
    for (image, meta) in corpus {
        if meta.group_count() != group_count {
            report.failures.push((
                meta.image_id.clone(),
                format!("table has {} groups, bench runs {group_count}", meta.group_count()),
            ));
            continue;
        }
        match measure(&image, &meta, &keys, options.repetitions) {
            Ok(r) => report.records.push(r),
            Err(e) => report.failures.push((meta.image_id.clone(), e.to_string())),
        }
    }
    Ok(report)
}

/// Convenience wrapper: generate and measure a synthetic corpus.
pub fn run_synthetic(spec: &SyntheticSpec, options: &BenchOptions) -> Result<BenchReport> {
    run_bench(spec.generate()?, spec.table.group_count(), options)
}
