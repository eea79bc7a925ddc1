use std::path::Path;

use serde::{Deserialize, Serialize};

use super::read_json;
use crate::cluster::ClusterParams;
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::matching::LossWeights;
use crate::merge::MergeConfig;
use crate::metrics::MetricSettings;
use crate::taxonomy::ClassTaxonomy;

/// Every tunable of a run. Absent sections take their defaults; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub taxonomy: ClassTaxonomy,
    pub merge: MergeConfig,
    pub cluster: ClusterParams,
    pub loss: LossWeights,
    pub metrics: MetricSettings,
    pub decoder: DecoderConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path)?;
        cfg.validate().map_err(|e| match e {
            Error::InvalidInput(reason) => Error::format(path, reason),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.merge.validate()?;
        self.cluster.validate()?;
        for c in &self.cluster.classes {
            if !self.taxonomy.is_thing(c.class_id) {
                return Err(Error::invalid(format!(
                    "cluster parameters given for {}, which is not a thing class",
                    c.class_id
                )));
            }
        }
        self.decoder.validate()?;
        for &c in &self.metrics.categories {
            if !self.taxonomy.is_thing(c) && !self.taxonomy.is_stuff(c) {
                return Err(Error::invalid(format!(
                    "evaluated category {c} is not a thing or stuff class"
                )));
            }
        }
        let things = self.taxonomy.thing_ids().len();
        if self.decoder.num_classes != things {
            return Err(Error::invalid(format!(
                "decoder scores {} classes but the taxonomy has {things} thing classes",
                self.decoder.num_classes
            )));
        }
        Ok(())
    }
}
