//! Plain-text checkpoints.
//!
//! ```text
//! SDAC-CKPT v1
//! array <name> <rank> <dim>...
//! <values, space separated, 17 significant digits>
//! ...
//! config
//! <training configuration as TOML>
//! end-config
//! rng <generator id>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::codec::{Model, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, ParamSet, RNG_ALGORITHM};

pub const MAGIC: &str = "SDAC-CKPT v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub config: TrainConfig,
    pub rng_algorithm: String,
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &TrainConfig) -> Self {
        Self {
            params: model.params(),
            config: config.clone(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::init(&self.config)?;
        model.load_params(&self.params)?;
        Ok(model)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{MAGIC}\n");
        for (name, t) in self.params.iter() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(out, "array {name} {} {}", t.shape().len(), dims.join(" ")).expect("string write");
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", values.join(" ")).expect("string write");
        }
        let config = toml::to_string(&self.config).map_err(|e| Error::invalid(format!("config echo: {e}")))?;
        write!(out, "config\n{config}end-config\nrng {}\n", self.rng_algorithm).expect("string write");
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::parse(format!("checkpoint line {line}"), msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MAGIC)) => {}
            other => return Err(bad(1, format!("expected `{MAGIC}`, found {:?}", other.map(|l| l.1)))),
        }
        let mut params = ParamSet::new();
        let config_text = loop {
            let (n, line) = lines.next().ok_or_else(|| bad(0, "missing config block".into()))?;
            if line == "config" {
                let mut body = String::new();
                loop {
                    let (_, l) = lines.next().ok_or_else(|| bad(n, "unterminated config block".into()))?;
                    if l == "end-config" {
                        break;
                    }
                    body.push_str(l);
                    body.push('\n');
                }
                break body;
            }
            let fields: Vec<&str> = line.split_ascii_whitespace().collect();
            let (name, rank) = match fields.as_slice() {
                ["array", name, rank, ..] => (*name, rank.parse::<usize>().map_err(|e| bad(n, e.to_string()))?),
                _ => return Err(bad(n, format!("expected an array record, found `{line}`"))),
            };
            if fields.len() != 3 + rank {
                return Err(bad(n, format!("rank {rank} with {} dimensions", fields.len() - 3)));
            }
            let shape = fields[3..]
                .iter()
                .map(|d| d.parse::<usize>().map_err(|e| bad(n, format!("dimension `{d}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let (vn, values) = lines.next().ok_or_else(|| bad(n, format!("values of `{name}` missing")))?;
            let data = values
                .split_ascii_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| bad(vn, format!("value `{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let tensor = DenseTensor::new(shape, data).map_err(|e| bad(vn, e.to_string()))?;
            if params.contains(name) {
                return Err(bad(n, format!("duplicate array `{name}`")));
            }
            params.insert(name, tensor);
        };
        let config: TrainConfig =
            toml::from_str(&config_text).map_err(|e| Error::parse("checkpoint config", e.to_string()))?;
        let rng_algorithm = match lines.next() {
            Some((_, l)) if l.starts_with("rng ") => l["rng ".len()..].to_string(),
            other => return Err(bad(0, format!("expected rng line, found {:?}", other.map(|l| l.1)))),
        };
        if rng_algorithm != RNG_ALGORITHM {
            return Err(Error::invalid(format!(
                "checkpoint uses generator `{rng_algorithm}`, this build provides `{RNG_ALGORITHM}`"
            )));
        }
        if let Some((n, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(bad(n, format!("trailing content `{l}`")));
        }
        Ok(Self {
            params,
            config,
            rng_algorithm,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
