use std::fmt;

use crate::error::{Error, Result};

/// The twelve USDA texture classes, in the order of the soil feature columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TextureClass {
    Clay,
    SiltyClay,
    SandyClay,
    ClayLoam,
    SiltyClayLoam,
    SandyClayLoam,
    Loam,
    SiltLoam,
    SandyLoam,
    Silt,
    LoamySand,
    Sand,
}

impl TextureClass {
    pub const ALL: [TextureClass; 12] = [
        TextureClass::Clay,
        TextureClass::SiltyClay,
        TextureClass::SandyClay,
        TextureClass::ClayLoam,
        TextureClass::SiltyClayLoam,
        TextureClass::SandyClayLoam,
        TextureClass::Loam,
        TextureClass::SiltLoam,
        TextureClass::SandyLoam,
        TextureClass::Silt,
        TextureClass::LoamySand,
        TextureClass::Sand,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TextureClass::Clay => "clay",
            TextureClass::SiltyClay => "silty clay",
            TextureClass::SandyClay => "sandy clay",
            TextureClass::ClayLoam => "clay loam",
            TextureClass::SiltyClayLoam => "silty clay loam",
            TextureClass::SandyClayLoam => "sandy clay loam",
            TextureClass::Loam => "loam",
            TextureClass::SiltLoam => "silt loam",
            TextureClass::SandyLoam => "sandy loam",
            TextureClass::Silt => "silt",
            TextureClass::LoamySand => "loamy sand",
            TextureClass::Sand => "sand",
        }
    }

    /// The class's defining inequalities (NRCS texture calculator).
    pub fn contains(self, p: &TexturePoint) -> bool {
        let (sand, silt, clay) = (p.sand, p.silt, p.clay);
        match self {
            TextureClass::Sand => silt + 1.5 * clay < 15.0,
            TextureClass::LoamySand => silt + 1.5 * clay >= 15.0 && silt + 2.0 * clay < 30.0,
            TextureClass::SandyLoam => {
                (clay >= 7.0 && clay < 20.0 && sand > 52.0 && silt + 2.0 * clay >= 30.0)
                    || (clay < 7.0 && silt < 50.0 && silt + 2.0 * clay >= 30.0)
            }
            TextureClass::Loam => clay >= 7.0 && clay < 27.0 && silt >= 28.0 && silt < 50.0 && sand <= 52.0,
            TextureClass::SiltLoam => {
                (silt >= 50.0 && clay >= 12.0 && clay < 27.0) || (silt >= 50.0 && silt < 80.0 && clay < 12.0)
            }
            TextureClass::Silt => silt >= 80.0 && clay < 12.0,
            TextureClass::SandyClayLoam => clay >= 20.0 && clay < 35.0 && silt < 28.0 && sand > 45.0,
            TextureClass::ClayLoam => clay >= 27.0 && clay < 40.0 && sand > 20.0 && sand <= 45.0,
            TextureClass::SiltyClayLoam => clay >= 27.0 && clay < 40.0 && sand <= 20.0,
            TextureClass::SandyClay => clay >= 35.0 && sand > 45.0,
            TextureClass::SiltyClay => clay >= 40.0 && silt >= 40.0,
            TextureClass::Clay => clay >= 40.0 && sand <= 45.0 && silt < 40.0,
        }
    }
}

impl fmt::Display for TextureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sand/silt/clay percentages summing to 100.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TexturePoint {
    pub sand: f64,
    pub silt: f64,
    pub clay: f64,
}

impl TexturePoint {
    /// Accepts rounded inputs summing to 100 ± 0.5 and rescales them to 100.
    pub fn new(sand: f64, silt: f64, clay: f64) -> Result<Self> {
        for (name, v) in [("sand", sand), ("silt", silt), ("clay", clay)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Domain {
                    op: "texture point",
                    detail: format!("{name} = {v} outside [0, 100]"),
                });
            }
        }
        let total = sand + silt + clay;
        if (total - 100.0).abs() > 0.5 {
            return Err(Error::Domain {
                op: "texture point",
                detail: format!("percentages sum to {total}, expected 100 ± 0.5"),
            });
        }
        if total == 100.0 {
            return Ok(TexturePoint { sand, silt, clay });
        }
        let s = 100.0 / total;
        Ok(TexturePoint {
            sand: sand * s,
            silt: silt * s,
            clay: clay * s,
        })
    }
}

pub fn classify_texture(p: &TexturePoint) -> TextureClass {
    TextureClass::ALL
        .into_iter()
        .find(|c| c.contains(p))
        .expect("texture classes cover the simplex")
}

/// Weight-normalized class histogram in [`TextureClass::ALL`] order; `None`
/// for an empty set or zero total weight.
pub fn county_texture_fractions(points: &[(TexturePoint, f64)]) -> Option<[f64; 12]> {
    let total: f64 = points.iter().map(|(_, w)| w.max(0.0)).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut out = [0.0; 12];
    for (p, w) in points {
        if *w > 0.0 {
            out[classify_texture(p).index()] += w / total;
        }
    }
    Some(out)
}
