//! JSON model file.
//!
//! Reals are written in shortest round-trip form, so a saved model reloads
//! bit-identically. Marginal tables are written for inspection and recomputed
//! on load.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::emissions::{EmissionKind, EmissionParams};
use crate::error::{PohmmError, Result};
use crate::event_chain::{check_distribution, EventAlphabet, EventChain};
use crate::model::{Marginals, PohmmParams};

pub const FORMAT: &str = "pohmm";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Emission {
    loc: Vec<f64>,
    scale: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    n_states: usize,
    n_features: usize,
    emission: EmissionKind,
    alphabet: Vec<String>,
    /// m rows of π[j|ω].
    startp: Vec<Vec<f64>>,
    /// mM rows of a[i,j|ψ,ω], row (ψ,i), column (ω,j).
    trans: Vec<Vec<f64>>,
    /// m rows of M emission cells.
    emissions: Vec<Vec<Emission>>,
    event_chain: EventChain,
    state_stationary: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marginals: Option<Marginals>,
}

fn invalid(msg: impl Into<String>) -> PohmmError {
    PohmmError::InvalidParams(msg.into())
}

impl ModelFile {
    fn from_params(p: &PohmmParams) -> Self {
        let (m, big_m) = (p.n_events(), p.n_states());
        let width = m * big_m;
        Self {
            format: FORMAT.into(),
            version: VERSION,
            n_states: big_m,
            n_features: p.n_features(),
            emission: p.kind(),
            alphabet: p.alphabet().symbols().to_vec(),
            startp: p.startp.chunks(big_m).map(<[f64]>::to_vec).collect(),
            trans: p.trans.chunks(width).map(<[f64]>::to_vec).collect(),
            emissions: p
                .emit
                .chunks(big_m)
                .map(|row| row.iter().map(|e| Emission { loc: e.loc.clone(), scale: e.scale.clone() }).collect())
                .collect(),
            event_chain: p.event_chain.clone(),
            state_stationary: p.state_stationary.clone(),
            marginals: Some(p.marginals.clone()),
        }
    }

    /// Checks every dimension against the header before building flat tables.
    fn into_params(self) -> Result<PohmmParams> {
        if self.format != FORMAT {
            return Err(invalid(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(invalid(format!("unsupported version {}", self.version)));
        }
        let (m, big_m, k) = (self.alphabet.len(), self.n_states, self.n_features);
        if m == 0 || big_m == 0 || k == 0 {
            return Err(invalid("empty alphabet, state set or feature set"));
        }
        let width = m.checked_mul(big_m).ok_or_else(|| invalid("model too large"))?;
        if self.startp.len() != m || self.startp.iter().any(|r| r.len() != big_m) {
            return Err(invalid("startp must be m rows of M"));
        }
        if self.trans.len() != width || self.trans.iter().any(|r| r.len() != width) {
            return Err(invalid("trans must be mM rows of mM"));
        }
        if self.emissions.len() != m
            || self.emissions.iter().any(|r| r.len() != big_m || r.iter().any(|e| e.loc.len() != k || e.scale.len() != k))
        {
            return Err(invalid("emissions must be m rows of M cells with n_features entries"));
        }
        if self.state_stationary.len() != big_m {
            return Err(invalid("state_stationary must have M entries"));
        }
        check_distribution(&self.state_stationary, "state stationary")?;

        let alphabet = EventAlphabet::new(self.alphabet)?;
        let kind = self.emission;
        let emit = self.emissions.into_iter().flatten().map(|e| EmissionParams::new(kind, e.loc, e.scale)).collect::<Result<Vec<_>>>()?;
        let mut p = PohmmParams::new(big_m, alphabet, self.startp.concat(), self.trans.concat(), emit, self.event_chain)?;
        p.state_stationary = self.state_stationary;
        Ok(p)
    }
}

pub fn to_json(params: &PohmmParams) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from_params(params))?)
}

pub fn from_json(s: &str) -> Result<PohmmParams> {
    serde_json::from_str::<ModelFile>(s)?.into_params()
}

pub fn read_model<R: Read>(reader: R) -> Result<PohmmParams> {
    serde_json::from_reader::<_, ModelFile>(reader)?.into_params()
}

pub fn write_model<W: Write>(params: &PohmmParams, mut writer: W) -> Result<()> {
    writer.write_all(to_json(params)?.as_bytes())?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<PohmmParams> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save(params: &PohmmParams, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(params, &mut f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::random_params;
    use crate::rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut r = rng::seeded(11);
        for (big_m, m, k) in [(1, 1, 1), (2, 3, 2), (3, 2, 1)] {
            let mut p = random_params(big_m, m, EmissionKind::Lognormal, k, &mut r);
            p.state_stationary = crate::model::testutil::random_dist(big_m, &mut r);
            let back = from_json(&to_json(&p).unwrap()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn saves_and_loads_files() {
        let mut r = rng::seeded(12);
        let p = random_params(2, 2, EmissionKind::Normal, 2, &mut r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save(&p, &path).unwrap();
        assert_eq!(load(&path).unwrap(), p);
    }

    #[test]
    fn rejects_malformed_models() {
        let mut r = rng::seeded(13);
        let p = random_params(2, 2, EmissionKind::Normal, 1, &mut r);
        let good: serde_json::Value = serde_json::from_str(&to_json(&p).unwrap()).unwrap();
        let mutate = |f: &dyn Fn(&mut serde_json::Value)| {
            let mut v = good.clone();
            f(&mut v);
            from_json(&v.to_string())
        };
        assert!(mutate(&|_| {}).is_ok());
        assert!(mutate(&|v| v["n_states"] = 3.into()).is_err());
        assert!(mutate(&|v| v["version"] = 2.into()).is_err());
        assert!(mutate(&|v| v["startp"][0][0] = 0.9.into()).is_err());
        assert!(mutate(&|v| v["emissions"][1][0]["scale"][0] = (-1.0).into()).is_err());
        assert!(mutate(&|v| {
            let first = v["alphabet"][0].clone();
            v["alphabet"][1] = first;
        })
        .is_err());
        assert!(mutate(&|v| v["trans"].as_array_mut().unwrap().pop().map(|_| ()).unwrap()).is_err());
        assert!(mutate(&|v| v["state_stationary"] = serde_json::json!([0.5, 0.6])).is_err());
        assert!(from_json("{").is_err());
        assert!(from_json("[]").is_err());
    }
}
