use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;

/// The four monitored rooms of the house.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomId {
    LivingRoom,
    Kitchen,
    Porch,
    TerraceGarden,
}

impl RoomId {
    pub const ALL: [RoomId; 4] = [RoomId::LivingRoom, RoomId::Kitchen, RoomId::Porch, RoomId::TerraceGarden];

    pub fn as_str(self) -> &'static str {
        match self {
            RoomId::LivingRoom => "living_room",
            RoomId::Kitchen => "kitchen",
            RoomId::Porch => "porch",
            RoomId::TerraceGarden => "terrace_garden",
        }
    }

    /// Sensor fields in the order they appear on the wire.
    pub fn fields(self) -> &'static [Field] {
        use Field::*;
        match self {
            RoomId::LivingRoom => &[Temperature, Humidity, Sound, Light],
            RoomId::Kitchen => &[Flame, Gas],
            RoomId::Porch => &[Distance, Motion, Shock],
            RoomId::TerraceGarden => &[Temperature, Humidity, SoilMoisture, WaterLevel],
        }
    }

    pub fn has_field(self, field: Field) -> bool {
        self.fields().contains(&field)
    }
}

impl fmt::Display for RoomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownName(pub String);

impl fmt::Display for UnknownName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown name {:?}", self.0)
    }
}

impl std::error::Error for UnknownName {}

impl FromStr for RoomId {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoomId::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// Measurement unit and its admissible range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    /// 10-bit ADC reading.
    AdcCounts,
    Celsius,
    PercentRh,
    Centimeters,
    Boolean,
}

impl Unit {
    /// Inclusive range of valid values.
    pub fn range(self) -> (Fixed, Fixed) {
        match self {
            Unit::AdcCounts => (Fixed::ZERO, Fixed::from_int(1023)),
            Unit::Celsius => (Fixed::from_int(-40), Fixed::from_int(85)),
            Unit::PercentRh => (Fixed::ZERO, Fixed::from_int(100)),
            Unit::Centimeters => (Fixed::ZERO, Fixed::from_int(400)),
            Unit::Boolean => (Fixed::ZERO, Fixed::from_int(1)),
        }
    }

    /// Celsius and relative humidity carry two decimals; everything else is integral.
    pub fn is_decimal(self) -> bool {
        matches!(self, Unit::Celsius | Unit::PercentRh)
    }

    pub fn contains(self, v: Fixed) -> bool {
        let (lo, hi) = self.range();
        lo <= v && v <= hi && (self.is_decimal() || v.is_integral())
    }

    /// Clamps into range and rounds integral units to whole numbers.
    pub fn quantize(self, v: Fixed) -> Fixed {
        let (lo, hi) = self.range();
        let v = if self.is_decimal() { v } else { v.round_to_integer() };
        v.clamp_to(lo, hi)
    }

    pub fn render(self, v: Fixed) -> String {
        if self.is_decimal() {
            v.to_decimal_string()
        } else {
            v.to_integer_string()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Temperature,
    Humidity,
    Sound,
    Light,
    Flame,
    Gas,
    Distance,
    Motion,
    Shock,
    SoilMoisture,
    WaterLevel,
}

impl Field {
    pub const ALL: [Field; 11] = [
        Field::Temperature,
        Field::Humidity,
        Field::Sound,
        Field::Light,
        Field::Flame,
        Field::Gas,
        Field::Distance,
        Field::Motion,
        Field::Shock,
        Field::SoilMoisture,
        Field::WaterLevel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Temperature => "temperature",
            Field::Humidity => "humidity",
            Field::Sound => "sound",
            Field::Light => "light",
            Field::Flame => "flame",
            Field::Gas => "gas",
            Field::Distance => "distance",
            Field::Motion => "motion",
            Field::Shock => "shock",
            Field::SoilMoisture => "soil_moisture",
            Field::WaterLevel => "water_level",
        }
    }

    pub fn unit(self) -> Unit {
        match self {
            Field::Temperature => Unit::Celsius,
            Field::Humidity => Unit::PercentRh,
            Field::Distance => Unit::Centimeters,
            Field::Motion | Field::Shock => Unit::Boolean,
            Field::Sound | Field::Light | Field::Flame | Field::Gas | Field::SoilMoisture | Field::WaterLevel => {
                Unit::AdcCounts
            }
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Field {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// One reading of one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSample {
    pub field: Field,
    pub value: Fixed,
}

impl SensorSample {
    pub fn new(field: Field, value: Fixed) -> Self {
        Self { field, value }
    }

    pub fn unit(&self) -> Unit {
        self.field.unit()
    }

    pub fn is_valid(&self) -> bool {
        self.field.unit().contains(self.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for r in RoomId::ALL {
            assert_eq!(r.as_str().parse::<RoomId>().unwrap(), r);
        }
        for f in Field::ALL {
            assert_eq!(f.as_str().parse::<Field>().unwrap(), f);
        }
        assert!("bathroom".parse::<RoomId>().is_err());
    }

    #[test]
    fn room_field_sets() {
        use Field::*;
        assert_eq!(RoomId::LivingRoom.fields(), &[Temperature, Humidity, Sound, Light]);
        assert_eq!(RoomId::Kitchen.fields(), &[Flame, Gas]);
        assert_eq!(RoomId::Porch.fields(), &[Distance, Motion, Shock]);
        assert_eq!(RoomId::TerraceGarden.fields(), &[Temperature, Humidity, SoilMoisture, WaterLevel]);
    }

    #[test]
    fn unit_ranges() {
        assert!(Unit::AdcCounts.contains(Fixed::from_int(1023)));
        assert!(!Unit::AdcCounts.contains(Fixed::from_int(1024)));
        assert!(!Unit::AdcCounts.contains(Fixed::from_hundredths(150)));
        assert!(!Unit::Boolean.contains(Fixed::from_int(2)));
        assert!(!Unit::PercentRh.contains(Fixed::from_hundredths(10001)));
        assert_eq!(Unit::AdcCounts.quantize(Fixed::from_hundredths(-300)), Fixed::ZERO);
        assert_eq!(Unit::Boolean.quantize(Fixed::from_hundredths(70)), Fixed::from_int(1));
    }
}
