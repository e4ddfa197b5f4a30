//! Shared numerical kernels.

pub mod linalg;
pub mod rng;
pub mod special;

pub use linalg::{
    inv_sqrt_psd, log_sum_exp, select_columns, ColumnProjector, InvSqrt, Mat,
    SpectralDecomposition, Vector,
};
pub use rng::SeededRng;
pub use special::{chi2_cdf, chi2_quantile, chi2_sf, normal_cdf, truncated_normal_cdf};

/// Serde adapter writing an `nalgebra` column vector as a plain JSON list.
pub mod serde_vector {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        let data = Vec::<f64>::deserialize(d)?;
        Ok(Vector::from_vec(data))
    }
}

/// Serde adapter for an optional vector.
pub mod serde_opt_vector {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vector>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|v| v.as_slice().to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vector>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(Vector::from_vec))
    }
}

/// Serde adapter writing a matrix as a list of rows.
pub mod serde_matrix {
    use super::Mat;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(Mat::from_fn(n, m, |i, j| rows[i][j]))
    }
}
