//! Piecewise-linear lower envelopes: the pointwise max of supporting
//! hyperplanes of a convex cost-to-go function, plus file persistence.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{all_finite, dot};

/// A supporting affine minorant: touches the function at `base` with slope
/// `grad`, and lies below it everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    #[serde(rename = "x")]
    pub base: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Hyperplane {
    pub fn new(base: Vec<f64>, value: f64, grad: Vec<f64>) -> Self {
        Hyperplane { base, value, grad }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.value;
        for i in 0..self.base.len() {
            v += self.grad[i] * (x[i] - self.base[i]);
        }
        v
    }

    /// Offset form: `eval(x) = offset() + grad . x`.
    pub fn offset(&self) -> f64 {
        self.value - dot(&self.grad, &self.base)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && all_finite(&self.base) && all_finite(&self.grad)
    }
}

/// Stage approximation: max over stored hyperplanes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub t: usize,
    pub p: usize,
    pub planes: Vec<Hyperplane>,
}

impl Envelope {
    pub fn empty(t: usize, p: usize) -> Self {
        Envelope {
            t,
            p,
            planes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    /// Max over planes; errors on an empty envelope.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if self.planes.is_empty() {
            return Err(Error::EmptyEnvelope);
        }
        assert_eq!(x.len(), self.p, "state dimension mismatch");
        Ok(self
            .planes
            .iter()
            .map(|h| h.eval(x))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Appends a plane. Evaluation can only increase afterwards.
    pub fn add_plane(&mut self, h: Hyperplane) -> Result<()> {
        if h.base.len() != self.p || h.grad.len() != self.p {
            return Err(Error::DimensionMismatch {
                what: "hyperplane",
                expected: self.p,
                got: h.base.len().max(h.grad.len()),
            });
        }
        self.planes.push(h);
        Ok(())
    }

    pub fn file_name(t: usize) -> String {
        format!("J_{t}.jsonl")
    }

    /// Writes the envelope as a single JSON line (atomically via rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = tmp_path(path);
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Envelope> {
        let text = fs::read_to_string(path)?;
        let env: Envelope =
            serde_json::from_str(text.trim()).map_err(|e| Error::MalformedFile {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        for h in &env.planes {
            if h.base.len() != env.p || h.grad.len() != env.p {
                return Err(Error::MalformedFile {
                    path: path.to_path_buf(),
                    detail: format!(
                        "plane dimension {} does not match p={}",
                        h.base.len().max(h.grad.len()),
                        env.p
                    ),
                });
            }
            if !h.is_finite() {
                return Err(Error::MalformedFile {
                    path: path.to_path_buf(),
                    detail: "non-finite plane coefficient".into(),
                });
            }
        }
        Ok(env)
    }
}

pub(crate) fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(base: f64, value: f64, grad: f64) -> Hyperplane {
        Hyperplane::new(vec![base], value, vec![grad])
    }

    #[test]
    fn single_plane_eval() {
        let mut env = Envelope::empty(1, 1);
        env.add_plane(plane(0.0, 1.0, 2.0)).unwrap();
        assert_eq!(env.eval(&[3.0]).unwrap(), 7.0);
    }

    #[test]
    fn max_of_two_planes_is_abs() {
        let mut env = Envelope::empty(1, 1);
        env.add_plane(plane(0.0, 0.0, -1.0)).unwrap();
        env.add_plane(plane(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(env.eval(&[-2.0]).unwrap(), 2.0);
    }

    #[test]
    fn tangents_of_square() {
        // tangents of x^2 at -0.3 and 0.1 both give -0.03 at x = -0.1
        let mut env = Envelope::empty(1, 1);
        env.add_plane(plane(-0.3, 0.09, -0.6)).unwrap();
        env.add_plane(plane(0.1, 0.01, 0.2)).unwrap();
        let v = env.eval(&[-0.1]).unwrap();
        assert!((v - (-0.03)).abs() < 1e-15, "{v}");
    }

    #[test]
    fn empty_envelope_errors() {
        let env = Envelope::empty(1, 1);
        assert!(matches!(env.eval(&[0.0]), Err(Error::EmptyEnvelope)));
    }

    #[test]
    fn add_plane_monotone_and_idempotent() {
        let mut env = Envelope::empty(1, 1);
        env.add_plane(plane(-1.0, 1.0, -2.0)).unwrap();
        env.add_plane(plane(1.0, 1.0, 2.0)).unwrap();
        let xs: Vec<f64> = (-10..=10).map(|i| i as f64 / 5.0).collect();
        let before: Vec<f64> = xs.iter().map(|&x| env.eval(&[x]).unwrap()).collect();
        // duplicate plane leaves evaluation unchanged
        let mut dup = env.clone();
        dup.add_plane(plane(1.0, 1.0, 2.0)).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            assert_eq!(dup.eval(&[x]).unwrap(), before[i]);
        }
        // tangent of x^2 at 0 raises eval(0) from -1 to 0
        assert_eq!(env.eval(&[0.0]).unwrap(), -1.0);
        env.add_plane(plane(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(env.eval(&[0.0]).unwrap(), 0.0);
        for (i, &x) in xs.iter().enumerate() {
            assert!(env.eval(&[x]).unwrap() >= before[i] - 1e-12);
        }
    }

    #[test]
    fn eval_is_convex_along_segments() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut env = Envelope::empty(1, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..12 {
            let base = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let grad = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            env.add_plane(Hyperplane::new(base, rng.random_range(-1.0..1.0), grad))
                .unwrap();
        }
        for _ in 0..1000 {
            let x = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let y = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let theta: f64 = rng.random_range(0.0..1.0);
            let mid = vec![
                theta * x[0] + (1.0 - theta) * y[0],
                theta * x[1] + (1.0 - theta) * y[1],
            ];
            let lhs = env.eval(&mid).unwrap();
            let rhs = theta * env.eval(&x).unwrap() + (1.0 - theta) * env.eval(&y).unwrap();
            assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut env = Envelope::empty(1, 2);
        let err = env.add_plane(plane(0.0, 0.0, 0.0));
        assert!(err.is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(Envelope::file_name(3));
        let mut env = Envelope::empty(3, 2);
        env.add_plane(Hyperplane::new(vec![0.1, -0.7], 1.0 / 3.0, vec![2.5e-17, 1.41]))
            .unwrap();
        env.save(&path).unwrap();
        let back = Envelope::load(&path).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn load_rejects_bad_grad_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("J_1.jsonl");
        std::fs::write(
            &path,
            "{\"t\":1,\"p\":2,\"planes\":[{\"x\":[0.0,0.0],\"value\":0.0,\"grad\":[1.0]}]}\n",
        )
        .unwrap();
        assert!(matches!(
            Envelope::load(&path),
            Err(Error::MalformedFile { .. })
        ));
    }
}
