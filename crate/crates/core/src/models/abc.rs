use rand::Rng as _;

use super::{check_len, GenerativeModel, ParamBlock, Period};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Site archetypes of the nine-site ranking demo. Each is a two-point pmf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbcSiteType {
    /// Always 7.
    A,
    /// 0 w.p. 0.35, 10 w.p. 0.65.
    B,
    /// 0 w.p. 0.9, 80 w.p. 0.1.
    C,
}

impl AbcSiteType {
    /// `(value, probability)` pairs with positive probability.
    pub fn support(self) -> &'static [(f64, f64)] {
        match self {
            AbcSiteType::A => &[(7.0, 1.0)],
            AbcSiteType::B => &[(0.0, 0.35), (10.0, 0.65)],
            AbcSiteType::C => &[(0.0, 0.9), (80.0, 0.1)],
        }
    }

    pub fn mean(self) -> f64 {
        self.support().iter().map(|(v, p)| v * p).sum()
    }

    pub fn label(self) -> char {
        match self {
            AbcSiteType::A => 'A',
            AbcSiteType::B => 'B',
            AbcSiteType::C => 'C',
        }
    }
}

/// Nine independent sites: three of each type, in order A, A, A, B, B, B, C, C, C.
#[derive(Debug, Clone, Copy, Default)]
pub struct AbcDemoModel;

impl AbcDemoModel {
    pub const SITES: [AbcSiteType; 9] = [
        AbcSiteType::A,
        AbcSiteType::A,
        AbcSiteType::A,
        AbcSiteType::B,
        AbcSiteType::B,
        AbcSiteType::B,
        AbcSiteType::C,
        AbcSiteType::C,
        AbcSiteType::C,
    ];
}

impl GenerativeModel for AbcDemoModel {
    fn family(&self) -> &'static str {
        "abc_demo"
    }

    fn n_sites(&self) -> usize {
        9
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn set_params(&mut self, phi: &[f64]) -> Result<()> {
        check_len("abc parameters", phi.len(), 0)
    }

    fn param_blocks(&self) -> Vec<ParamBlock> {
        Vec::new()
    }

    fn sample_into(&self, _period: &Period<'_>, rng: &mut Rng, out: &mut [f64]) {
        for (slot, site) in out.iter_mut().zip(Self::SITES) {
            *slot = match site {
                AbcSiteType::A => 7.0,
                AbcSiteType::B => {
                    if rng.random::<f64>() < 0.35 {
                        0.0
                    } else {
                        10.0
                    }
                }
                AbcSiteType::C => {
                    if rng.random::<f64>() < 0.9 {
                        0.0
                    } else {
                        80.0
                    }
                }
            };
        }
    }

    fn logpdf(&self, _period: &Period<'_>, y: &[f64]) -> Result<f64> {
        check_len("outcome", y.len(), 9)?;
        let mut total = 0.0;
        for (s, (&v, site)) in y.iter().zip(Self::SITES).enumerate() {
            let p = site
                .support()
                .iter()
                .find(|(value, _)| *value == v)
                .map(|(_, p)| *p)
                .ok_or_else(|| Error::Domain(format!("site {s} cannot produce {v}")))?;
            total += p.ln();
        }
        Ok(total)
    }

    fn accumulate_grad_logpdf(
        &self,
        period: &Period<'_>,
        y: &[f64],
        _weight: f64,
        _grad: &mut [f64],
    ) -> Result<f64> {
        self.logpdf(period, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn type_means() {
        assert_eq!(AbcSiteType::A.mean(), 7.0);
        assert_eq!(AbcSiteType::B.mean(), 6.5);
        assert_eq!(AbcSiteType::C.mean(), 8.0);
    }

    #[test]
    fn samples_score_finitely() {
        let m = AbcDemoModel;
        let mut rng = StreamKey::new(0).rng();
        let batch = m.sample(&Period::bare(0), &mut rng, 200).unwrap();
        for row in batch.view().rows() {
            assert!(m.logpdf(&Period::bare(0), row.as_slice().unwrap()).unwrap().is_finite());
        }
        assert!(m.logpdf(&Period::bare(0), &[1.0; 9]).is_err());
    }
}
