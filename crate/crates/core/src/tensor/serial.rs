use serde::{Deserialize, Serialize};

use super::{LabeledOperator, SpaceLabel};
use crate::error::{Error, Result};
use crate::{CMatrix, C64};

/// JSON layout shared by every persisted matrix: a `labels` header and the
/// entries as row-major rows of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorJson {
    pub labels: Vec<SpaceLabel>,
    pub entries: Vec<Vec<[f64; 2]>>,
}

pub(crate) fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::ShapeMismatch("ragged matrix rows".into()));
    }
    Ok(CMatrix::from_fn(n, m, |r, c| C64::new(rows[r][c][0], rows[r][c][1])))
}

impl From<&LabeledOperator> for OperatorJson {
    fn from(op: &LabeledOperator) -> Self {
        Self {
            labels: op.labels().to_vec(),
            entries: matrix_to_rows(op.matrix()),
        }
    }
}

impl TryFrom<OperatorJson> for LabeledOperator {
    type Error = Error;

    fn try_from(j: OperatorJson) -> Result<Self> {
        LabeledOperator::new(j.labels, rows_to_matrix(&j.entries)?)
    }
}

impl Serialize for LabeledOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OperatorJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabeledOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = OperatorJson::deserialize(d)?;
        LabeledOperator::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// Plain complex matrix as rows of `[re, im]` pairs, for fields without labels.
pub mod matrix_rows {
    use super::*;

    pub fn serialize<S: serde::Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<CMatrix, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        rows_to_matrix(&rows).map_err(serde::de::Error::custom)
    }
}

/// A list of plain complex matrices, each as rows of `[re, im]` pairs.
pub mod matrix_list {
    use super::*;

    pub fn serialize<S: serde::Serializer>(ms: &[CMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
        ms.iter().map(matrix_to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<CMatrix>, D::Error> {
        let all = Vec::<Vec<Vec<[f64; 2]>>>::deserialize(d)?;
        all.iter()
            .map(|rows| rows_to_matrix(rows).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Role;
    use crate::testutil::{random_matrix, rng};

    #[test]
    fn json_layout() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.5),
                C64::new(0.0, 0.0),
                C64::new(0.0, -1.0),
                C64::new(2.0, 0.0),
            ],
        );
        let op = LabeledOperator::new(vec![SpaceLabel::new(1, Role::Input, 2)], m).unwrap();
        let s = serde_json::to_string(&op).unwrap();
        assert_eq!(
            s,
            r#"{"labels":[{"lab":1,"role":"Input","dim":2}],"entries":[[[1.0,0.5],[0.0,0.0]],[[0.0,-1.0],[2.0,0.0]]]}"#
        );
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut r = rng(9);
        let labels = vec![SpaceLabel::input(1, 2), SpaceLabel::output(1, 3)];
        let op = LabeledOperator::new(labels, random_matrix(&mut r, 6)).unwrap();
        let s = serde_json::to_string(&op).unwrap();
        let back: LabeledOperator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, op);
    }

    #[test]
    fn rejects_wrong_shape() {
        let s = r#"{"labels":[{"lab":1,"role":"Input","dim":3}],"entries":[[[1.0,0.0]]]}"#;
        assert!(serde_json::from_str::<LabeledOperator>(s).is_err());
    }
}
