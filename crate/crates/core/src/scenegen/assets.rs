use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SceneGenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    /// 2:1:1 cuboid whose long side equals the nominal diameter.
    Block,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Large,
    Small,
}

/// The eight CLEVR colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Gray,
    Red,
    Blue,
    Green,
    Brown,
    Purple,
    Cyan,
    Yellow,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Cube, Shape::Block, Shape::Sphere];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Block => "block",
            Shape::Sphere => "sphere",
        }
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Large, Size::Small];

    /// Nominal diameter in meters.
    pub fn diameter(self) -> f64 {
        match self {
            Size::Large => 0.07,
            Size::Small => 0.035,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Size::Large => "large",
            Size::Small => "small",
        }
    }
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Gray,
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Brown,
        Color::Purple,
        Color::Cyan,
        Color::Yellow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Gray => "gray",
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Brown => "brown",
            Color::Purple => "purple",
            Color::Cyan => "cyan",
            Color::Yellow => "yellow",
        }
    }

    /// sRGB values of the CLEVR palette.
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Gray => [87, 87, 87],
            Color::Red => [173, 35, 35],
            Color::Blue => [42, 75, 215],
            Color::Green => [29, 105, 20],
            Color::Brown => [129, 74, 25],
            Color::Purple => [129, 38, 192],
            Color::Cyan => [41, 208, 208],
            Color::Yellow => [255, 238, 51],
        }
    }
}

/// One CLEVR-style object type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetSpec {
    pub shape: Shape,
    pub size: Size,
    pub color: Color,
}

impl AssetSpec {
    pub fn new(shape: Shape, size: Size, color: Color) -> Self {
        Self { shape, size, color }
    }

    /// Full extents along the object's local axes, in meters. Blocks are long
    /// along local x.
    pub fn extents(&self) -> Vector3<f64> {
        let d = self.size.diameter();
        match self.shape {
            Shape::Cube | Shape::Sphere => Vector3::new(d, d, d),
            Shape::Block => Vector3::new(d, d / 2.0, d / 2.0),
        }
    }

    pub fn height(&self) -> f64 {
        self.extents().z
    }

    /// Radius of the smallest vertical cylinder around the object's center
    /// that contains its footprint.
    pub fn footprint_radius(&self) -> f64 {
        let e = self.extents();
        match self.shape {
            Shape::Sphere => e.x / 2.0,
            Shape::Cube | Shape::Block => (e.x * e.x + e.y * e.y).sqrt() / 2.0,
        }
    }

    /// Every asset in a fixed order: shape, then size, then color.
    pub fn all() -> Vec<AssetSpec> {
        let mut out = Vec::with_capacity(48);
        for shape in Shape::ALL {
            for size in Size::ALL {
                for color in Color::ALL {
                    out.push(AssetSpec::new(shape, size, color));
                }
            }
        }
        out
    }
}

/// Renders as `"<size> <color> <shape>"`, e.g. `"large yellow sphere"`.
impl fmt::Display for AssetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.size.name(), self.color.name(), self.shape.name())
    }
}

impl FromStr for AssetSpec {
    type Err = SceneGenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        let bad = || SceneGenError::UnknownAsset(s.to_string());
        let [size, color, shape] = words.as_slice() else {
            return Err(bad());
        };
        let size = Size::ALL.into_iter().find(|v| v.name() == *size).ok_or_else(bad)?;
        let color = Color::ALL.into_iter().find(|v| v.name() == *color).ok_or_else(bad)?;
        let shape = Shape::ALL.into_iter().find(|v| v.name() == *shape).ok_or_else(bad)?;
        Ok(AssetSpec::new(shape, size, color))
    }
}
