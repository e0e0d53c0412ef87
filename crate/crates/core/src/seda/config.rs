use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{parse_flag, parse_key_values, parse_value};

/// Maps a document's token count to the largest text block a sample may
/// carry. A length falls in the first row whose bound exceeds it; lengths
/// past every bound get `beyond`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSizeTable {
    pub rows: Vec<(usize, usize)>,
    pub beyond: usize,
}

impl Default for GridSizeTable {
    fn default() -> Self {
        Self {
            rows: vec![
                (200, 7),
                (350, 9),
                (500, 11),
                (1000, 13),
                (1350, 15),
                (1500, 16),
                (2000, 17),
            ],
            beyond: 19,
        }
    }
}

impl GridSizeTable {
    pub fn validate(&self) -> Result<()> {
        if self.rows.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "grid size table bounds must be strictly increasing".into(),
            ));
        }
        if self.rows.iter().any(|r| r.1 == 0) || self.beyond == 0 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        Ok(())
    }

    /// Written as `bound:size,...,*:size`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut beyond = None;
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (bound, size) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("grid size row {item:?} is not bound:size")))?;
            let size = parse_value("grid_size_table", size.trim())?;
            match bound.trim() {
                "*" => beyond = Some(size),
                b => rows.push((parse_value("grid_size_table", b)?, size)),
            }
        }
        let table = Self {
            rows,
            beyond: beyond.ok_or_else(|| Error::Config("grid size table needs a final *:size row".into()))?,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn render(&self) -> String {
        let mut parts: Vec<String> = self.rows.iter().map(|(b, s)| format!("{b}:{s}")).collect();
        parts.push(format!("*:{}", self.beyond));
        parts.join(",")
    }

    pub fn size_for(&self, doc_length: usize) -> usize {
        self.rows
            .iter()
            .find(|(bound, _)| doc_length < *bound)
            .map_or(self.beyond, |r| r.1)
    }
}

/// How successive prediction sets are merged across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    /// Keep entities predicted in both sets.
    #[default]
    Intersection,
    /// Keep the newest set.
    Replace,
}

impl std::str::FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersection" => Ok(Self::Intersection),
            "replace" => Ok(Self::Replace),
            other => Err(Error::Config(format!("unknown combiner {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SedaConfig {
    /// Supplement samples that contain an anchoring prediction.
    pub es: bool,
    /// Supplement samples without one.
    pub nes: bool,
    pub look_forward: usize,
    pub look_backward: usize,
    pub max_iterations: usize,
    pub combiner: Combiner,
    pub grid_size_table: GridSizeTable,
    /// Stop iterating once dev EBF no longer improves.
    pub stop_on_plateau: bool,
}

impl Default for SedaConfig {
    fn default() -> Self {
        Self::cadec()
    }
}

impl SedaConfig {
    /// Settings for the adverse-drug-event corpus.
    pub fn cadec() -> Self {
        Self {
            es: true,
            nes: true,
            look_forward: 4,
            look_backward: 4,
            max_iterations: 3,
            combiner: Combiner::Intersection,
            grid_size_table: GridSizeTable::default(),
            stop_on_plateau: true,
        }
    }

    /// Settings for the clinical-notes corpora.
    pub fn share() -> Self {
        Self {
            nes: false,
            look_forward: 2,
            look_backward: 2,
            ..Self::cadec()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        self.grid_size_table.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::cadec();
        for (key, value) in parse_key_values(text)? {
            let v = value.as_str();
            match key.as_str() {
                "preset" => {
                    c = match v {
                        "cadec" => Self::cadec(),
                        "share" => Self::share(),
                        _ => return Err(Error::Config(format!("unknown preset {v:?}"))),
                    }
                }
                "es" => c.es = parse_flag(&key, v)?,
                "nes" => c.nes = parse_flag(&key, v)?,
                "look_forward" => c.look_forward = parse_value(&key, v)?,
                "look_backward" => c.look_backward = parse_value(&key, v)?,
                "max_iterations" => c.max_iterations = parse_value(&key, v)?,
                "combiner" => c.combiner = v.parse()?,
                "grid_size_table" => c.grid_size_table = GridSizeTable::parse(v)?,
                "stop_on_plateau" => c.stop_on_plateau = parse_flag(&key, v)?,
                _ => return Err(Error::Config(format!("unknown augmentation config key {key:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn render(&self) -> String {
        format!(
            "es={}\nnes={}\nlook_forward={}\nlook_backward={}\nmax_iterations={}\ncombiner={}\ngrid_size_table={}\nstop_on_plateau={}\n",
            u8::from(self.es),
            u8::from(self.nes),
            self.look_forward,
            self.look_backward,
            self.max_iterations,
            match self.combiner {
                Combiner::Intersection => "intersection",
                Combiner::Replace => "replace",
            },
            self.grid_size_table.render(),
            u8::from(self.stop_on_plateau),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_lookup() {
        let t = GridSizeTable::default();
        assert_eq!(
            [t.size_for(150), t.size_for(300), t.size_for(1600), t.size_for(2500)],
            [7, 9, 17, 19]
        );
        let bounds = [200, 350, 500, 1000, 1350, 1500, 2000];
        let sizes: Vec<usize> = bounds.iter().map(|&b| t.size_for(b)).collect();
        assert_eq!(sizes, [9, 11, 13, 15, 16, 17, 19]);
        assert_eq!(t.size_for(199), 7);
        assert_eq!(t.size_for(0), 7);
    }

    #[test]
    fn presets_and_round_trip() {
        let c = SedaConfig::share();
        assert!(c.es && !c.nes);
        assert_eq!((c.look_forward, c.look_backward), (2, 2));
        assert_eq!(SedaConfig::parse(&c.render()).unwrap(), c);
        let d = SedaConfig::parse("preset=share\nnes=1\ngrid_size_table=10:3,*:5").unwrap();
        assert!(d.nes);
        assert_eq!(d.grid_size_table.size_for(12), 5);
    }

    #[test]
    fn malformed_configs() {
        assert!(SedaConfig::parse("es=2").is_err());
        assert!(SedaConfig::parse("grid_size_table=10:3,5:4,*:5").is_err());
        assert!(SedaConfig::parse("grid_size_table=10:3").is_err());
        assert!(SedaConfig::parse("max_iterations=0").is_err());
        assert!(SedaConfig::parse("look_forward=-1").is_err());
    }
}
