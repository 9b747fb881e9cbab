//! Construction of mechanisms from an id and an optional JSON config.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::rational::int;

use super::{
    AffineMinimizer2x2, AffineMinimizerConfig, Bundle, Constant2x2, Direct2x2, Embedded2x2,
    MaxCost, Mechanism, Mechanism2x2, MechanismError, OneDimVariant, OneDimensional2x2, PiTable,
    PiecewiseLinear, RelaxedAffineMinimizer2x2, RelaxedAffineMinimizerConfig,
    TaskIndependent2x2, Vcg, WeightedVcg,
};

pub const MECHANISM_IDS: [&str; 8] = [
    "vcg",
    "wvcg",
    "maxcost",
    "affmin2",
    "relaxed-affmin2",
    "taskind2",
    "onedim2",
    "const2",
];

/// Where to plant a 2x2 rule inside a larger instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedSpec {
    pub s_player: usize,
    pub p: usize,
    pub p_prime: usize,
}

/// The `"mechanism"` block of instance and config files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<EmbedSpec>,
}

impl MechanismSpec {
    pub fn new(id: &str) -> Self {
        MechanismSpec {
            id: id.to_string(),
            config: None,
            embed: None,
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(id: &str, v: &Value) -> Result<T, MechanismError> {
    serde_json::from_value(v.clone())
        .map_err(|e| MechanismError::Config(format!("bad config for {id}: {e}")))
}

#[derive(Deserialize)]
struct OneDimConfig {
    variant: OneDimVariant,
    boundary: PiecewiseLinear,
}

#[derive(Deserialize)]
struct ConstConfig {
    label: String,
}

/// Default affine minimizer: unit weights, `pi_none = -1`.
pub fn default_affine_config() -> AffineMinimizerConfig {
    AffineMinimizerConfig {
        lambda_prime: int(1),
        lambda: int(1),
        pi: PiTable::finite(int(0), int(0), int(0), int(-1)),
    }
}

pub fn build_2x2(id: &str, config: Option<&Value>) -> Result<Box<dyn Mechanism2x2>, MechanismError> {
    Ok(match id {
        "affmin2" => {
            let cfg = match config {
                Some(v) => parse(id, v)?,
                None => default_affine_config(),
            };
            Box::new(AffineMinimizer2x2::new(cfg)?)
        }
        "relaxed-affmin2" => {
            let cfg: RelaxedAffineMinimizerConfig = match config {
                Some(v) => parse(id, v)?,
                None => RelaxedAffineMinimizerConfig {
                    base: AffineMinimizerConfig {
                        lambda_prime: int(1),
                        lambda: int(1),
                        pi: PiTable::finite(int(0), int(1), int(1), crate::rational::rat(-1, 2)),
                    },
                    d_s: int(1),
                    d_t: int(1),
                    zeta: PiecewiseLinear::new(vec![
                        (int(0), int(0)),
                        (int(1), crate::rational::rat(1, 2)),
                    ])?,
                },
            };
            Box::new(RelaxedAffineMinimizer2x2::new(cfg)?)
        }
        "taskind2" => match config {
            Some(v) => Box::new(parse::<TaskIndependent2x2>(id, v).and_then(|t| {
                TaskIndependent2x2::new(t.psi1, t.psi2)
            })?),
            None => Box::new(TaskIndependent2x2::new(
                PiecewiseLinear::identity(),
                PiecewiseLinear::identity(),
            )?),
        },
        "onedim2" => match config {
            Some(v) => {
                let c: OneDimConfig = parse(id, v)?;
                Box::new(OneDimensional2x2::new(c.variant, c.boundary)?)
            }
            None => Box::new(OneDimensional2x2::new(
                OneDimVariant::Bundling,
                PiecewiseLinear::identity(),
            )?),
        },
        "const2" => {
            let label = match config {
                Some(v) => {
                    let c: ConstConfig = parse(id, v)?;
                    Bundle::parse(&c.label).ok_or_else(|| {
                        MechanismError::Config(format!("unknown outcome label {:?}", c.label))
                    })?
                }
                None => Bundle::Both,
            };
            Box::new(Constant2x2 { label })
        }
        other => return Err(MechanismError::UnknownId(other.to_string())),
    })
}

pub fn build_mechanism(spec: &MechanismSpec) -> Result<Box<dyn Mechanism>, MechanismError> {
    let plain = |m: Box<dyn Mechanism>| -> Result<Box<dyn Mechanism>, MechanismError> {
        if spec.embed.is_some() {
            return Err(MechanismError::Config(format!(
                "{} is not a 2x2 rule and cannot be embedded",
                spec.id
            )));
        }
        Ok(m)
    };
    match spec.id.as_str() {
        "vcg" => plain(Box::new(Vcg)),
        "wvcg" => plain(Box::new(WeightedVcg)),
        "maxcost" => plain(Box::new(MaxCost)),
        id => {
            let inner = build_2x2(id, spec.config.as_ref())?;
            Ok(match &spec.embed {
                Some(e) => Box::new(Embedded2x2::new(inner, (e.p, e.p_prime), e.s_player)?),
                None => Box::new(Direct2x2::new(inner)),
            })
        }
    }
}
