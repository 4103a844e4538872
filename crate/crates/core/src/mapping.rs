//! The linear map `W` from source to target space.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embeddings::WordVector;
use crate::error::{Error, Result};
pub use crate::linalg::{svd, SvdResult};
use crate::linalg::{orthogonality_error, orthonormalize_rows};

/// Largest orthogonalization coefficient that is known to behave well.
pub const BETA_WARN_ABOVE: f64 = 0.01;

/// A square `d × d` mapping; `W · v_s` lands in target space.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingMatrix {
    w: Array2<f64>,
}

impl MappingMatrix {
    pub fn from_array(w: Array2<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::DimensionMismatch {
                expected: w.nrows(),
                found: w.ncols(),
            });
        }
        if w.nrows() == 0 {
            return Err(Error::InvalidArgument("mapping dimension must be >= 1".into()));
        }
        Ok(MappingMatrix { w })
    }

    pub fn identity(d: usize) -> Self {
        MappingMatrix {
            w: Array2::eye(d.max(1)),
        }
    }

    /// Random orthogonal matrix: Gram–Schmidt on a seeded Gaussian matrix.
    pub fn init_orthogonal(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("mapping dimension must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let mut w = Array2::from_shape_fn((d, d), |_| StandardNormal.sample(&mut rng));
            // a singular Gaussian draw has probability zero; redraw if it happens
            if orthonormalize_rows(&mut w).is_ok() {
                return Ok(MappingMatrix { w });
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub(crate) fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w
    }

    pub fn into_array(self) -> Array2<f64> {
        self.w
    }

    /// `W · v`.
    pub fn apply(&self, v: ArrayView1<'_, f64>) -> Result<WordVector> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(self.w.dot(&v))
    }

    /// Maps every row: returns `rows · Wᵀ`.
    pub fn apply_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: rows.ncols(),
            });
        }
        Ok(rows.dot(&self.w.t()))
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(self.w.view())
    }

    /// `W ← (1 + β) W − β (W Wᵀ) W`, pulling `W` toward the orthogonal manifold.
    pub fn orthogonalize_step(&self, beta: f64) -> Result<MappingMatrix> {
        let mut out = self.clone();
        out.orthogonalize_in_place(beta)?;
        Ok(out)
    }

    pub(crate) fn orthogonalize_in_place(&mut self, beta: f64) -> Result<()> {
        check_beta(beta)?;
        let wwt_w = self.w.dot(&self.w.t()).dot(&self.w);
        self.w *= 1.0 + beta;
        self.w.scaled_add(-beta, &wwt_w);
        Ok(())
    }

    /// Writes the text checkpoint: the dimension, then one row per line with 17
    /// significant digits per value.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.dim())?;
        for row in self.w.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str, context: &str) -> Result<Self> {
        let mut lines = text.lines();
        let d: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::format(context, 1, "expected the matrix dimension"))?;
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(context, i + 2, "missing row"))?;
            let start = data.len();
            for f in line.split_ascii_whitespace() {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::format(context, i + 2, format!("bad number {f:?}")))?;
                if !v.is_finite() {
                    return Err(Error::format(context, i + 2, "non-finite value"));
                }
                data.push(v);
            }
            if data.len() - start != d {
                return Err(Error::format(
                    context,
                    i + 2,
                    format!("expected {d} values, found {}", data.len() - start),
                ));
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::format(context, d + 2, "trailing data after matrix"));
        }
        Ok(MappingMatrix {
            w: Array2::from_shape_vec((d, d), data).expect("shape checked"),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, &path.display().to_string())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    if beta > BETA_WARN_ABOVE {
        log::warn!("orthogonalization beta {beta} exceeds {BETA_WARN_ABOVE}");
    }
    Ok(())
}

/// JSON sidecar stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub criterion: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn save_checkpoint(path: impl AsRef<Path>, w: &MappingMatrix, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    w.save(path)?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(&side, json + "\n").map_err(|e| Error::io(side, e))
}

/// Orthogonal `W` minimizing `Σ ‖W·src_i − tgt_i‖²`: `W = Z Uᵀ` where
/// `U Σ Zᵀ = SVD(srcᵀ · tgt)`.
pub fn procrustes_fit(src_rows: ArrayView2<'_, f64>, tgt_rows: ArrayView2<'_, f64>) -> Result<MappingMatrix> {
    if src_rows.dim() != tgt_rows.dim() {
        return Err(Error::InvalidArgument(format!(
            "source rows {:?} and target rows {:?} differ in shape",
            src_rows.dim(),
            tgt_rows.dim()
        )));
    }
    if src_rows.nrows() == 0 || src_rows.ncols() == 0 {
        return Err(Error::InvalidArgument("procrustes needs at least one pair".into()));
    }
    let cross = src_rows.t().dot(&tgt_rows);
    let SvdResult { u, z, .. } = svd(cross.view())?;
    Ok(MappingMatrix { w: z.dot(&u.t()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn init_orthogonal_examples() {
        let w = MappingMatrix::init_orthogonal(1, 123).unwrap();
        assert_eq!(w.as_array()[[0, 0]].abs(), 1.0);
        let a = MappingMatrix::init_orthogonal(4, 7).unwrap();
        let b = MappingMatrix::init_orthogonal(4, 7).unwrap();
        assert_eq!(a, b);
        assert!(MappingMatrix::init_orthogonal(50, 1).unwrap().orthogonality_error() < 1e-8);
        assert!(MappingMatrix::init_orthogonal(0, 1).is_err());
        assert_ne!(a, MappingMatrix::init_orthogonal(4, 8).unwrap());
    }

    #[test]
    fn apply_examples() {
        let id = MappingMatrix::identity(2);
        assert_eq!(id.apply(array![2.0, 3.0].view()).unwrap().to_vec(), vec![2.0, 3.0]);
        let rot = MappingMatrix::from_array(array![[0.0, -1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(rot.apply(array![1.0, 0.0].view()).unwrap().to_vec(), vec![0.0, 1.0]);
        assert!(rot.apply(array![1.0, 0.0, 0.0].view()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = MappingMatrix::from_array(w.clone()).unwrap().apply(ArrayView1::from(&v)).unwrap();
        for i in 0..8 {
            let mut naive = 0.0;
            for j in 0..8 {
                naive += w[[i, j]] * v[j];
            }
            assert!((got[i] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonalize_fixed_point_and_scalar_case() {
        let id = MappingMatrix::identity(3);
        assert_eq!(id.orthogonalize_step(0.01).unwrap(), id);
        let two = MappingMatrix::from_array(Array2::eye(2) * 2.0).unwrap();
        let out = two.orthogonalize_step(0.01).unwrap();
        assert!(max_abs_diff(out.as_array(), &(Array2::eye(2) * 1.94)) < 1e-14);
        assert!(id.orthogonalize_step(0.0).is_err());
        assert!(id.orthogonalize_step(-1e-3).is_err());
    }

    /// Orthogonal matrix with `‖WWᵀ − I‖_F` rescaled to exactly `target` by
    /// scaling a symmetric perturbation of the identity.
    fn perturbed(d: usize, target: f64, seed: u64) -> MappingMatrix {
        let q = MappingMatrix::init_orthogonal(d, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let p = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
        let sym = &p + &p.t();
        let at = |t: f64| {
            let m = (Array2::<f64>::eye(d) + &sym * t).dot(q.as_array());
            MappingMatrix::from_array(m).unwrap()
        };
        // bisection on the scale of the perturbation
        let (mut lo, mut hi) = (0.0, 1.0);
        while at(hi).orthogonality_error() < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid).orthogonality_error() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    }

    #[test]
    fn orthogonalize_hundred_steps_follow_linear_rate() {
        // Near the manifold each singular value obeys σ ← σ(1 + β − βσ²), whose
        // derivative at σ = 1 is 1 − 2β. Iterating the scalar map on the exact
        // singular values gives the expected end error independently.
        let beta = 0.01;
        let w0 = perturbed(6, 0.1, 4);
        assert!((w0.orthogonality_error() - 0.1).abs() < 1e-12);

        let sv = svd(w0.view()).unwrap().singular_values;
        let mut sigma = sv.to_vec();
        for _ in 0..100 {
            for s in &mut sigma {
                *s *= 1.0 + beta - beta * *s * *s;
            }
        }
        let oracle = sigma.iter().map(|s| (s * s - 1.0).powi(2)).sum::<f64>().sqrt();

        let mut w = w0.clone();
        let mut prev = w.orthogonality_error();
        for _ in 0..100 {
            w = w.orthogonalize_step(beta).unwrap();
            let e = w.orthogonality_error();
            assert!(e <= prev);
            prev = e;
        }
        assert!((prev - oracle).abs() < 1e-12, "{prev} vs scalar oracle {oracle}");
        assert!((0.012..0.015).contains(&prev));
    }

    #[test]
    fn procrustes_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src = Array2::from_shape_fn((30, 6), |_| rng.random_range(-1.0..1.0));
        let w = procrustes_fit(src.view(), src.view()).unwrap();
        assert!(max_abs_diff(w.as_array(), &Array2::eye(6)) < 1e-10);

        let src = array![[1.0, 0.0], [0.0, 1.0]];
        let tgt = array![[0.0, 1.0], [-1.0, 0.0]];
        let w = procrustes_fit(src.view(), tgt.view()).unwrap();
        assert!(max_abs_diff(w.as_array(), &array![[0.0, -1.0], [1.0, 0.0]]) < 1e-12);

        let r = MappingMatrix::init_orthogonal(20, 77).unwrap();
        let src = Array2::from_shape_fn((200, 20), |_| rng.random_range(-1.0..1.0));
        let tgt = src.dot(&r.as_array().t());
        let w = procrustes_fit(src.view(), tgt.view()).unwrap();
        assert!(max_abs_diff(w.as_array(), r.as_array()) < 1e-8);
        assert!(w.orthogonality_error() < 1e-8);

        assert!(procrustes_fit(src.view(), tgt.slice(ndarray::s![..10, ..])).is_err());
    }

    #[test]
    fn procrustes_beats_random_rotations_on_noisy_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 5;
        let r = MappingMatrix::init_orthogonal(d, 3).unwrap();
        let src = Array2::from_shape_fn((40, d), |_| rng.random_range(-1.0..1.0));
        let noise = Array2::from_shape_fn((40, d), |_| rng.random_range(-0.3..0.3));
        let tgt = src.dot(&r.as_array().t()) + noise;
        let objective = |w: &MappingMatrix| frobenius((&src.dot(&w.as_array().t()) - &tgt).view()).powi(2);
        let best = objective(&procrustes_fit(src.view(), tgt.view()).unwrap());
        for seed in 0..1000 {
            let q = MappingMatrix::init_orthogonal(d, 10_000 + seed).unwrap();
            assert!(best <= objective(&q) + 1e-12);
        }
    }

    #[test]
    fn checkpoint_text_round_trips_exactly() {
        let w = MappingMatrix::init_orthogonal(7, 2).unwrap();
        let mut buf = Vec::new();
        w.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("7\n"));
        let back = MappingMatrix::parse_text(&text, "mem").unwrap();
        assert_eq!(back, w);
        let mut again = Vec::new();
        back.write_text(&mut again).unwrap();
        assert_eq!(again, buf);

        assert!(MappingMatrix::parse_text("2\n1 0\n", "mem").is_err());
        assert!(MappingMatrix::parse_text("2\n1 0\n0 1 2\n", "mem").is_err());
        assert!(MappingMatrix::parse_text("x\n", "mem").is_err());
    }

    #[test]
    fn checkpoint_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.txt");
        let meta = CheckpointMeta {
            step: 12,
            criterion: Some(0.5),
            seed: 3,
            config_hash: "abc".into(),
        };
        save_checkpoint(&path, &MappingMatrix::identity(3), &meta).unwrap();
        assert_eq!(MappingMatrix::load(&path).unwrap(), MappingMatrix::identity(3));
        let side: CheckpointMeta =
            serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side, meta);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn orthogonalize_strictly_decreases_error(seed in any::<u64>(), target in 1e-3f64..0.5, d in 2usize..7) {
            let w = perturbed(d, target, seed);
            let before = w.orthogonality_error();
            let after = w.orthogonalize_step(0.01).unwrap().orthogonality_error();
            prop_assert!(after < before, "{} -> {}", before, after);
        }
    }
}
