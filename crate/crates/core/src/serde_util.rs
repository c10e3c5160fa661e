//! JSON has no infinities; non-finite floats are written as `null` and read back as `+inf`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub mod nullable_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        v.is_finite().then_some(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub mod nullable_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let items: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        items.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let items = Vec::<Option<f64>>::deserialize(d)?;
        Ok(items.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

pub mod nullable_nested {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let items: Vec<Vec<Option<f64>>> = v
            .iter()
            .map(|row| row.iter().map(|x| x.is_finite().then_some(*x)).collect())
            .collect();
        items.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let items = Vec::<Vec<Option<f64>>>::deserialize(d)?;
        Ok(items
            .into_iter()
            .map(|row| row.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
            .collect())
    }
}
