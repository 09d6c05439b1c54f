//! Per-image dictionary learning and sparse coding.
//!
//! A dictionary is learned from the query latent's own patches by online
//! dictionary learning (alternating sparse coding / dictionary update with a
//! mini-batch of one), and patches are coded against it with orthogonal
//! matching pursuit. The sparsity-constrained form is used for both training
//! and inference so the coefficients seen by segmentation are produced by the
//! same coder used during learning.
//!
//! All dictionary math is f64: Gram matrices of coherent atoms are too
//! ill-conditioned for f32.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::PatchVector;

/// Ridge-valley label attached to a dictionary atom by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomLabel {
    Unlabeled,
    RidgeValley,
    NonRidgeValley,
}

impl AtomLabel {
    fn to_byte(self) -> u8 {
        match self {
            AtomLabel::NonRidgeValley => 0,
            AtomLabel::RidgeValley => 1,
            AtomLabel::Unlabeled => 0xFF,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(AtomLabel::NonRidgeValley),
            1 => Ok(AtomLabel::RidgeValley),
            0xFF => Ok(AtomLabel::Unlabeled),
            other => Err(Error::InvalidArgument(format!(
                "unknown atom label byte {other:#04x}"
            ))),
        }
    }
}

/// Learned dictionary: unit-norm atom columns plus per-atom labels.
#[derive(Debug, Clone)]
pub struct Dictionary {
    atom_dim: usize,
    atom_count: usize,
    /// Column-major, `atom_dim * atom_count` entries.
    atoms: Vec<f64>,
    labels: Vec<AtomLabel>,
    trained_on: String,
}

impl Dictionary {
    /// Build from explicit columns; each column is normalized to unit norm.
    pub fn from_atoms(columns: &[Vec<f64>], trained_on: impl Into<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidArgument("dictionary needs at least one atom".into()));
        }
        let atom_dim = columns[0].len();
        if atom_dim == 0 {
            return Err(Error::InvalidArgument("atom dimension must be positive".into()));
        }
        let mut atoms = Vec::with_capacity(atom_dim * columns.len());
        for (k, col) in columns.iter().enumerate() {
            if col.len() != atom_dim {
                return Err(Error::InvalidArgument(format!(
                    "atom {k} has dimension {}, expected {atom_dim}",
                    col.len()
                )));
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::DegenerateData(format!("atom {k} has zero norm")));
            }
            atoms.extend(col.iter().map(|v| v / norm));
        }
        let atom_count = columns.len();
        Ok(Self {
            atom_dim,
            atom_count,
            atoms,
            labels: vec![AtomLabel::Unlabeled; atom_count],
            trained_on: trained_on.into(),
        })
    }

    pub fn atom_dim(&self) -> usize {
        self.atom_dim
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k * self.atom_dim..(k + 1) * self.atom_dim]
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn labels(&self) -> &[AtomLabel] {
        &self.labels
    }

    pub fn set_labels(&mut self, labels: Vec<AtomLabel>) -> Result<()> {
        if labels.len() != self.atom_count {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} atoms",
                labels.len(),
                self.atom_count
            )));
        }
        self.labels = labels;
        Ok(())
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(|&l| l != AtomLabel::Unlabeled)
    }

    pub fn is_ridge_valley(&self, k: usize) -> bool {
        self.labels[k] == AtomLabel::RidgeValley
    }

    fn atom_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.atoms[k * self.atom_dim..(k + 1) * self.atom_dim]
    }
}

/// Sparse coefficient vector: at most K nonzeros over `dim` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    /// Strictly increasing atom indices.
    pub indices: Vec<usize>,
    /// Coefficients aligned with `indices`.
    pub values: Vec<f64>,
    /// Total atom count of the dictionary this code refers to.
    pub dim: usize,
}

impl SparseCode {
    pub fn empty(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Index of the coefficient with the largest absolute value, if any.
    pub fn dominant_atom(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (&idx, &val) in self.indices.iter().zip(&self.values) {
            let mag = val.abs();
            match best {
                Some((_, m)) if mag <= m => {}
                _ => best = Some((idx, mag)),
            }
        }
        best.map(|(idx, _)| idx)
    }
}

/// Dictionary training parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Number of atoms N_a.
    pub atom_count: usize,
    /// Sparsity bound K.
    pub sparsity: usize,
    /// Full passes over the training set.
    pub epochs: usize,
    /// Lagrange weight for the l1 relaxation; unused by the OMP coding path
    /// and kept for configuration compatibility.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            atom_count: 100,
            sparsity: 2,
            epochs: 5,
            lambda: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sparsity < 1 || self.atom_count < self.sparsity {
            return Err(Error::Config(format!(
                "need atom_count >= sparsity >= 1, got {} and {}",
                self.atom_count, self.sparsity
            )));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config("lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Mean K-sparse reconstruction error, tracked per epoch during training.
#[derive(Debug, Clone)]
pub struct TrainStats {
    /// Error of the seeded initial dictionary before any update.
    pub initial_error: f64,
    /// Error after each completed epoch.
    pub epoch_errors: Vec<f64>,
}

/// Sample `atom_count` distinct non-zero patches (seeded, without
/// replacement) and normalize them as the initial atoms.
pub fn init_dictionary(patches: &[PatchVector], atom_count: usize, seed: u64) -> Result<Dictionary> {
    if patches.len() < atom_count {
        return Err(Error::InsufficientData(format!(
            "{} patches for {} atoms",
            patches.len(),
            atom_count
        )));
    }
    let dim = patches[0].dim();
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut columns = Vec::with_capacity(atom_count);
    for &i in &order {
        if columns.len() == atom_count {
            break;
        }
        let p = &patches[i];
        if p.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "patch {i} has dimension {}, expected {dim}",
                p.dim()
            )));
        }
        let norm = p.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            columns.push(p.values.clone());
        }
    }
    if columns.is_empty() {
        return Err(Error::DegenerateData(
            "training set has zero variance: no non-zero patch to seed atoms".into(),
        ));
    }
    if columns.len() < atom_count {
        return Err(Error::InsufficientData(format!(
            "only {} non-zero patches for {} atoms",
            columns.len(),
            atom_count
        )));
    }
    Dictionary::from_atoms(&columns, "")
}

/// Online dictionary learning with OMP coding.
///
/// Per sample: code with OMP, fold the sample into the sufficient statistics
/// A += g g^T and B += s g^T, then refresh the atoms on the code's support by
/// block coordinate descent. Each epoch ends with a full coordinate pass over
/// all atoms and re-seeds any atom that no patch selected.
pub fn learn_dictionary(
    patches: &[PatchVector],
    cfg: &TrainConfig,
) -> Result<(Dictionary, TrainStats)> {
    cfg.validate()?;
    let mut dict = init_dictionary(patches, cfg.atom_count, cfg.seed)?;
    let dim = dict.atom_dim();
    for (i, p) in patches.iter().enumerate() {
        if p.dim() != dim {
            return Err(Error::InvalidArgument(format!(
                "patch {i} has dimension {}, expected {dim}",
                p.dim()
            )));
        }
    }

    let na = cfg.atom_count;
    let mut stat_a = vec![0.0f64; na * na]; // column-major, symmetric
    let mut stat_b = vec![0.0f64; dim * na]; // column-major like the atoms

    let initial_error = mean_reconstruction_error(&dict, patches, cfg.sparsity);
    let mut epoch_errors = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..patches.len()).collect();

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut used = vec![false; na];
        let mut sample_err = vec![0.0f64; patches.len()];

        for &i in &order {
            let s = &patches[i];
            let code = omp_encode(&dict, s, cfg.sparsity)?;
            sample_err[i] = code_error(&dict, s, &code);
            if code.nnz() == 0 {
                continue;
            }
            for (&j, &gj) in code.indices.iter().zip(&code.values) {
                used[j] = true;
                for (&k, &gk) in code.indices.iter().zip(&code.values) {
                    stat_a[j * na + k] += gj * gk;
                }
                let col = &mut stat_b[j * dim..(j + 1) * dim];
                for (b, &sv) in col.iter_mut().zip(&s.values) {
                    *b += gj * sv;
                }
            }
            for &j in &code.indices {
                update_atom(&mut dict, &stat_a, &stat_b, j);
            }
        }

        // Full block-coordinate pass, then re-seed atoms nothing selected.
        for j in 0..na {
            update_atom(&mut dict, &stat_a, &stat_b, j);
        }
        reseed_unused_atoms(&mut dict, &mut stat_a, &mut stat_b, &used, patches, &sample_err);

        epoch_errors.push(mean_reconstruction_error(&dict, patches, cfg.sparsity));
    }

    Ok((
        dict,
        TrainStats {
            initial_error,
            epoch_errors,
        },
    ))
}

/// One block-coordinate step on atom `j`: d_j <- normalize(d_j + (b_j - D a_j) / A_jj).
fn update_atom(dict: &mut Dictionary, stat_a: &[f64], stat_b: &[f64], j: usize) {
    let na = dict.atom_count();
    let dim = dict.atom_dim();
    let ajj = stat_a[j * na + j];
    if ajj < 1e-10 {
        return;
    }
    let mut u = vec![0.0f64; dim];
    // D a_j
    for k in 0..na {
        let akj = stat_a[j * na + k];
        if akj == 0.0 {
            continue;
        }
        let atom = dict.atom(k);
        for (uv, &av) in u.iter_mut().zip(atom) {
            *uv += akj * av;
        }
    }
    let bcol = &stat_b[j * dim..(j + 1) * dim];
    let dcol = dict.atom(j).to_vec();
    for i in 0..dim {
        u[i] = dcol[i] + (bcol[i] - u[i]) / ajj;
    }
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return;
    }
    let col = dict.atom_mut(j);
    for (c, &uv) in col.iter_mut().zip(&u) {
        *c = uv / norm;
    }
}

/// Replace atoms no patch selected this epoch with the worst-reconstructed
/// patches, and clear their accumulated statistics.
fn reseed_unused_atoms(
    dict: &mut Dictionary,
    stat_a: &mut [f64],
    stat_b: &mut [f64],
    used: &[bool],
    patches: &[PatchVector],
    sample_err: &[f64],
) {
    let unused: Vec<usize> = (0..dict.atom_count()).filter(|&j| !used[j]).collect();
    if unused.is_empty() {
        return;
    }
    let mut ranked: Vec<usize> = (0..patches.len()).collect();
    ranked.sort_by(|&a, &b| sample_err[b].total_cmp(&sample_err[a]).then(a.cmp(&b)));

    let na = dict.atom_count();
    let dim = dict.atom_dim();
    let mut next = ranked.into_iter();
    for j in unused {
        let replacement = next.by_ref().find(|&i| {
            patches[i].values.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-12
        });
        let Some(i) = replacement else { break };
        let p = &patches[i].values;
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let col = dict.atom_mut(j);
        for (c, &pv) in col.iter_mut().zip(p) {
            *c = pv / norm;
        }
        for k in 0..na {
            stat_a[j * na + k] = 0.0;
            stat_a[k * na + j] = 0.0;
        }
        stat_b[j * dim..(j + 1) * dim].fill(0.0);
    }
}

/// Greedy orthogonal matching pursuit.
///
/// Per iteration the atom with maximal absolute correlation with the residual
/// is selected, then the coefficients on the selected set are re-solved by
/// least squares. Stops after K atoms, when no correlation is left, or when
/// the residual norm drops below 1e-10.
pub fn omp_encode(dict: &Dictionary, s: &PatchVector, k: usize) -> Result<SparseCode> {
    if s.dim() != dict.atom_dim() {
        return Err(Error::InvalidArgument(format!(
            "signal dimension {} does not match atom dimension {}",
            s.dim(),
            dict.atom_dim()
        )));
    }
    if k < 1 || k > dict.atom_count() {
        return Err(Error::InvalidArgument(format!(
            "sparsity {k} outside [1, {}]",
            dict.atom_count()
        )));
    }

    let dim = dict.atom_dim();
    let na = dict.atom_count();
    let mut residual = s.values.clone();
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut coeffs: Vec<f64> = Vec::new();

    for _ in 0..k {
        let mut best = usize::MAX;
        let mut best_mag = 1e-12;
        for j in 0..na {
            if selected.contains(&j) {
                continue;
            }
            let c: f64 = dict.atom(j).iter().zip(&residual).map(|(a, r)| a * r).sum();
            if c.abs() > best_mag {
                best_mag = c.abs();
                best = j;
            }
        }
        if best == usize::MAX {
            break;
        }
        selected.push(best);

        match least_squares_on(dict, &selected, &s.values) {
            Some(c) => coeffs = c,
            None => {
                // New atom is linearly dependent on the selected set.
                selected.pop();
                break;
            }
        }

        residual.copy_from_slice(&s.values);
        for (&j, &c) in selected.iter().zip(&coeffs) {
            for (r, &a) in residual.iter_mut().zip(dict.atom(j)) {
                *r -= c * a;
            }
        }
        let rnorm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm < 1e-10 {
            break;
        }
        let _ = dim;
    }

    let mut pairs: Vec<(usize, f64)> = selected.into_iter().zip(coeffs).collect();
    pairs.sort_by_key(|&(j, _)| j);
    Ok(SparseCode {
        indices: pairs.iter().map(|&(j, _)| j).collect(),
        values: pairs.iter().map(|&(_, v)| v).collect(),
        dim: na,
    })
}

/// Solve min_c ||s - D_sel c|| by normal equations with Cholesky.
/// Returns None when the Gram matrix is numerically singular.
fn least_squares_on(dict: &Dictionary, selected: &[usize], s: &[f64]) -> Option<Vec<f64>> {
    let n = selected.len();
    let mut gram = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n];
    for (a, &ja) in selected.iter().enumerate() {
        let atom_a = dict.atom(ja);
        rhs[a] = atom_a.iter().zip(s).map(|(x, y)| x * y).sum();
        for (b, &jb) in selected.iter().enumerate().take(a + 1) {
            let g: f64 = atom_a.iter().zip(dict.atom(jb)).map(|(x, y)| x * y).sum();
            gram[a * n + b] = g;
            gram[b * n + a] = g;
        }
    }
    cholesky_solve(&gram, &rhs, n)
}

/// In-place Cholesky factorization and solve for a small SPD system.
fn cholesky_solve(gram: &[f64], rhs: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = gram[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 1e-12 {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // forward then backward substitution
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

/// Dense reconstruction D code as a plain vector.
pub fn reconstruct(dict: &Dictionary, code: &SparseCode) -> Result<Vec<f64>> {
    if code.dim != dict.atom_count() {
        return Err(Error::InvalidArgument(format!(
            "code dimension {} does not match atom count {}",
            code.dim,
            dict.atom_count()
        )));
    }
    let mut out = vec![0.0f64; dict.atom_dim()];
    for (&j, &c) in code.indices.iter().zip(&code.values) {
        if j >= dict.atom_count() {
            return Err(Error::InvalidArgument(format!(
                "atom index {j} out of range for {} atoms",
                dict.atom_count()
            )));
        }
        for (o, &a) in out.iter_mut().zip(dict.atom(j)) {
            *o += c * a;
        }
    }
    Ok(out)
}

fn code_error(dict: &Dictionary, s: &PatchVector, code: &SparseCode) -> f64 {
    let mut err = 0.0;
    let mut approx = vec![0.0f64; dict.atom_dim()];
    for (&j, &c) in code.indices.iter().zip(&code.values) {
        for (o, &a) in approx.iter_mut().zip(dict.atom(j)) {
            *o += c * a;
        }
    }
    for (a, &sv) in approx.iter().zip(&s.values) {
        let d = sv - a;
        err += d * d;
    }
    err
}

/// Mean squared K-sparse OMP reconstruction error over a patch set.
pub fn mean_reconstruction_error(dict: &Dictionary, patches: &[PatchVector], k: usize) -> f64 {
    if patches.is_empty() {
        return 0.0;
    }
    let errs: Vec<f64> = patches
        .par_iter()
        .map(|p| {
            let code = omp_encode(dict, p, k).expect("validated dimensions");
            code_error(dict, p, &code)
        })
        .collect();
    errs.iter().sum::<f64>() / patches.len() as f64
}

const DICT_MAGIC: &[u8; 8] = b"LMDICT1\0";

/// Persist the dictionary container: magic, u32 dims, f64 column-major atom
/// data, one label byte per atom (0xFF = unlabeled). All little-endian.
pub fn save_dictionary(dict: &Dictionary, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + dict.atoms.len() * 8 + dict.atom_count);
    out.extend_from_slice(DICT_MAGIC);
    out.extend_from_slice(&(dict.atom_dim as u32).to_le_bytes());
    out.extend_from_slice(&(dict.atom_count as u32).to_le_bytes());
    for v in &dict.atoms {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &dict.labels {
        out.push(l.to_byte());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    file.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;

    if data.len() < 16 || &data[..8] != DICT_MAGIC {
        return Err(Error::format("dictionary", path, "bad magic"));
    }
    let atom_dim = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let atom_count = u32::from_le_bytes(data[12..16].try_into().unwrap()) as usize;
    if atom_dim == 0 || atom_count == 0 {
        return Err(Error::format("dictionary", path, "zero dimensions"));
    }
    let expected = 16 + atom_dim * atom_count * 8 + atom_count;
    if data.len() != expected {
        return Err(Error::format(
            "dictionary",
            path,
            format!("file holds {} bytes, expected {expected}", data.len()),
        ));
    }
    let mut atoms = Vec::with_capacity(atom_dim * atom_count);
    let mut off = 16;
    for _ in 0..atom_dim * atom_count {
        atoms.push(f64::from_le_bytes(data[off..off + 8].try_into().unwrap()));
        off += 8;
    }
    let mut labels = Vec::with_capacity(atom_count);
    for _ in 0..atom_count {
        labels.push(AtomLabel::from_byte(data[off])?);
        off += 1;
    }
    Ok(Dictionary {
        atom_dim,
        atom_count,
        atoms,
        labels,
        trained_on: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    })
}
