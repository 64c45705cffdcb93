use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{
    mixture_ensemble, planetz_like_ensemble, private_token, softmax_with_temperature, special_token,
    uniform_k_ensemble, MixtureSpec, PrivateMode,
};
use crate::types::{read_ensemble_jsonl, TeacherDistribution, TokenId};

fn disjoint_default() -> PrivateMode {
    PrivateMode::DisjointSingletons
}

fn one() -> usize {
    1
}

/// A named ensemble construction, as it appears in JSON configs:
/// `{"kind": "mixture", "n": 400, "alpha": 0.5, "k": 4}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuiteSpec {
    /// `n` identical teachers uniform over special tokens `1..=k`.
    Uniform { n: usize, k: usize },
    /// `alpha` on a uniform common part over `k` special tokens, the rest private.
    Mixture {
        n: usize,
        alpha: f64,
        k: usize,
        #[serde(default = "disjoint_default")]
        private_mode: PrivateMode,
    },
    /// Special tokens with the given weights plus one private token per teacher.
    Planetz {
        n: usize,
        weights: Vec<f64>,
        private_weight: f64,
    },
    /// Every teacher a point mass on its own private token.
    Disjoint { n: usize },
    /// Every teacher a point mass on special token 1.
    PointMass { n: usize },
    /// `groups` groups of `group_size` identical teachers, each group uniform
    /// over its own `tokens_per_group` special tokens.
    Groups {
        groups: usize,
        group_size: usize,
        #[serde(default = "one")]
        tokens_per_group: usize,
    },
    /// The five fixed heterogeneous test distributions, one per teacher.
    TestDistributions,
    /// Ensemble stored as JSON Lines.
    File { path: PathBuf },
}

impl SuiteSpec {
    /// Built-in suites addressable by name on the command line.
    pub fn preset(name: &str) -> Result<SuiteSpec> {
        Ok(match name {
            "uniform4" => SuiteSpec::Uniform { n: 100, k: 4 },
            "uniform16" => SuiteSpec::Uniform { n: 1000, k: 16 },
            "uniform64" => SuiteSpec::Uniform { n: 1000, k: 64 },
            "mixture0.1" => SuiteSpec::Mixture {
                n: 400,
                alpha: 0.1,
                k: 4,
                private_mode: PrivateMode::DisjointSingletons,
            },
            "mixture0.5" => SuiteSpec::Mixture {
                n: 400,
                alpha: 0.5,
                k: 4,
                private_mode: PrivateMode::DisjointSingletons,
            },
            "planetz" => SuiteSpec::Planetz {
                n: 100,
                weights: vec![0.4, 0.3, 0.2, 0.1],
                private_weight: 0.5,
            },
            "disjoint" => SuiteSpec::Disjoint { n: 200 },
            "point_mass" => SuiteSpec::PointMass { n: 100 },
            "groups10" => SuiteSpec::Groups {
                groups: 10,
                group_size: 40,
                tokens_per_group: 1,
            },
            "test_distributions" => SuiteSpec::TestDistributions,
            other => {
                return Err(Error::Config(format!(
                    "unknown suite {other:?}; known: {}",
                    SuiteSpec::PRESETS.join(", ")
                )))
            }
        })
    }

    pub const PRESETS: &'static [&'static str] = &[
        "uniform4",
        "uniform16",
        "uniform64",
        "mixture0.1",
        "mixture0.5",
        "planetz",
        "disjoint",
        "point_mass",
        "groups10",
        "test_distributions",
    ];

    pub fn build(&self) -> Result<Vec<TeacherDistribution>> {
        let ensemble = match self {
            SuiteSpec::Uniform { n, k } => {
                if *n == 0 || *k == 0 {
                    return Err(Error::Config("uniform suite needs n, k >= 1".into()));
                }
                uniform_k_ensemble(*n, *k)
            }
            SuiteSpec::Mixture {
                n,
                alpha,
                k,
                private_mode,
            } => {
                if *k == 0 {
                    return Err(Error::Config("mixture suite needs k >= 1".into()));
                }
                mixture_ensemble(&MixtureSpec::uniform_common(*alpha, *k, *private_mode), *n)?
            }
            SuiteSpec::Planetz {
                n,
                weights,
                private_weight,
            } => {
                let special: Vec<TokenId> = (1..=weights.len() as u64).map(special_token).collect();
                planetz_like_ensemble(*n, &special, weights, *private_weight)?
            }
            SuiteSpec::Disjoint { n } => (0..*n)
                .map(|i| TeacherDistribution::point_mass(i, private_token(i)))
                .collect(),
            SuiteSpec::PointMass { n } => (0..*n)
                .map(|i| TeacherDistribution::point_mass(i, special_token(1)))
                .collect(),
            SuiteSpec::Groups {
                groups,
                group_size,
                tokens_per_group,
            } => {
                if *tokens_per_group == 0 {
                    return Err(Error::Config("groups suite needs tokens_per_group >= 1".into()));
                }
                let mut out = Vec::with_capacity(groups * group_size);
                for g in 0..*groups {
                    let first = (g * tokens_per_group) as u64 + 1;
                    let p = 1.0 / *tokens_per_group as f64;
                    let base = TeacherDistribution::new(
                        0,
                        (first..first + *tokens_per_group as u64).map(|t| (special_token(t), p)),
                    )?;
                    for _ in 0..*group_size {
                        out.push(base.clone().with_teacher(out.len()));
                    }
                }
                out
            }
            SuiteSpec::TestDistributions => test_distributions(),
            SuiteSpec::File { path } => {
                let file = File::open(path)?;
                read_ensemble_jsonl(BufReader::new(file))?
            }
        };
        if ensemble.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        Ok(ensemble)
    }

    /// Law of the winning special token under coordinated sampling, when the
    /// suite fixes one: the normalized common weights.
    pub fn special_weights(&self) -> Option<Vec<(TokenId, f64)>> {
        match self {
            SuiteSpec::Uniform { k, .. } | SuiteSpec::Mixture { k, .. } => Some(
                (1..=*k as u64)
                    .map(|j| (special_token(j), 1.0 / *k as f64))
                    .collect(),
            ),
            SuiteSpec::Planetz { weights, .. } => {
                let total: f64 = weights.iter().sum();
                Some(
                    weights
                        .iter()
                        .enumerate()
                        .map(|(j, w)| (special_token(j as u64 + 1), w / total))
                        .collect(),
                )
            }
            SuiteSpec::PointMass { .. } => Some(vec![(special_token(1), 1.0)]),
            _ => None,
        }
    }
}

/// Five fixed distributions of different shapes over tokens `1..=10`.
pub fn test_distributions() -> Vec<TeacherDistribution> {
    let t = TokenId;
    let geometric: Vec<(TokenId, f64)> = {
        let raw: Vec<f64> = (1..=8).map(|j| 0.5f64.powi(j)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter()
            .enumerate()
            .map(|(j, w)| (t(j as u64 + 1), w / total))
            .collect()
    };
    let soft = softmax_with_temperature(&[3.0, 2.5, 2.0, 1.0, 0.5, 0.0, -0.5, -1.0, -2.0, -3.0], 1.5)
        .expect("finite weights");
    vec![
        TeacherDistribution::new(0, (1..=4).map(|j| (t(j), 0.25))).expect("valid"),
        TeacherDistribution::new(1, [(t(1), 0.9), (t(5), 0.1)]).expect("valid"),
        TeacherDistribution::new(2, geometric).expect("valid"),
        soft.with_teacher(3),
        TeacherDistribution::new(4, [(t(2), 0.5), (t(6), 0.3), (t(7), 0.2)]).expect("valid"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        for name in SuiteSpec::PRESETS {
            let suite = SuiteSpec::preset(name).unwrap();
            let ensemble = suite.build().unwrap();
            assert!(!ensemble.is_empty(), "{name}");
            for (i, d) in ensemble.iter().enumerate() {
                assert_eq!(d.teacher(), i, "{name}");
            }
        }
        assert!(matches!(SuiteSpec::preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let json = r#"{"kind":"mixture","n":400,"alpha":0.5,"k":4}"#;
        let suite: SuiteSpec = serde_json::from_str(json).unwrap();
        assert_eq!(suite, SuiteSpec::preset("mixture0.5").unwrap());
        let back = serde_json::to_string(&suite).unwrap();
        assert_eq!(serde_json::from_str::<SuiteSpec>(&back).unwrap(), suite);
    }

    #[test]
    fn groups_layout() {
        let ensemble = SuiteSpec::Groups {
            groups: 3,
            group_size: 2,
            tokens_per_group: 2,
        }
        .build()
        .unwrap();
        assert_eq!(ensemble.len(), 6);
        assert_eq!(ensemble[0].entries(), &[(TokenId(1), 0.5), (TokenId(2), 0.5)]);
        assert_eq!(ensemble[5].entries(), &[(TokenId(5), 0.5), (TokenId(6), 0.5)]);
    }

    #[test]
    fn planetz_weights_normalize() {
        let w = SuiteSpec::preset("planetz").unwrap().special_weights().unwrap();
        let total: f64 = w.iter().map(|&(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(w[0].0, TokenId(1));
        assert!((w[0].1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn file_suite_reads_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        crate::types::write_ensemble_jsonl(File::create(&path).unwrap(), &test_distributions()).unwrap();
        let suite = SuiteSpec::File { path };
        assert_eq!(suite.build().unwrap(), test_distributions());
    }
}
