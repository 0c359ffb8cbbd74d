//! Unit conversion table and the small vocabulary used to turn terse CAN
//! naming into prose (abbreviation expansion, unit spelling).

/// Shortest round-trip decimal rendering (`250`, `0.01`, `655.35`).
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v}")
}

/// Linear conversion `to = factor * from + offset`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Conversion {
    pub factor: f64,
    pub offset: f64,
}

const CONVERSIONS: &[(&str, &str, f64, f64)] = &[
    ("m/s", "km/h", 3.6, 0.0),
    ("km/h", "m/s", 1.0 / 3.6, 0.0),
    ("m/s", "mph", 2.236_936_292_054_402, 0.0),
    ("km/h", "mph", 0.621_371_192_237_334, 0.0),
    ("degC", "degF", 1.8, 32.0),
    ("degF", "degC", 5.0 / 9.0, -160.0 / 9.0),
    ("m", "km", 0.001, 0.0),
    ("km", "m", 1000.0, 0.0),
    ("s", "min", 1.0 / 60.0, 0.0),
    ("min", "s", 60.0, 0.0),
    ("min", "h", 1.0 / 60.0, 0.0),
    ("h", "min", 60.0, 0.0),
    ("s", "ms", 1000.0, 0.0),
    ("ms", "s", 0.001, 0.0),
    ("kPa", "bar", 0.01, 0.0),
    ("bar", "kPa", 100.0, 0.0),
    ("Wh", "kWh", 0.001, 0.0),
    ("kWh", "Wh", 1000.0, 0.0),
    ("l", "ml", 1000.0, 0.0),
    ("ratio", "%", 100.0, 0.0),
    ("%", "ratio", 0.01, 0.0),
];

fn canonical(unit: &str) -> &str {
    match unit.trim() {
        "°C" | "C" | "celsius" => "degC",
        "°F" | "F" | "fahrenheit" => "degF",
        "kph" | "kmh" | "km/hr" => "km/h",
        "sec" => "s",
        "L" => "l",
        other => other,
    }
}

/// Conversion from `from` to `to`; identity when the units agree.
pub fn conversion(from: &str, to: &str) -> Option<Conversion> {
    let (from, to) = (canonical(from), canonical(to));
    if from == to {
        return Some(Conversion {
            factor: 1.0,
            offset: 0.0,
        });
    }
    CONVERSIONS
        .iter()
        .find(|(f, t, _, _)| *f == from && *t == to)
        .map(|&(_, _, factor, offset)| Conversion { factor, offset })
}

pub fn same_unit(a: &str, b: &str) -> bool {
    canonical(a) == canonical(b)
}

/// Words describing a unit, used to enrich embedding text.
pub fn unit_words(unit: &str) -> &'static str {
    match canonical(unit) {
        "m/s" => "meters per second speed",
        "km/h" => "kilometers per hour speed",
        "mph" => "miles per hour speed",
        "degC" => "degrees celsius temperature",
        "degF" => "degrees fahrenheit temperature",
        "m" => "meters distance",
        "km" => "kilometers distance",
        "s" => "seconds time duration",
        "min" => "minutes time duration",
        "h" => "hours time duration",
        "ms" => "milliseconds time",
        "kPa" => "kilopascal pressure",
        "bar" => "bar pressure",
        "%" => "percent level",
        "ratio" => "ratio level",
        "V" => "volts voltage",
        "A" => "amperes current",
        "W" => "watts power",
        "kW" => "kilowatts power",
        "Wh" | "kWh" => "energy",
        "rpm" => "revolutions per minute rotation speed",
        "l" => "liters volume",
        "deg" => "degrees angle",
        "Nm" => "newton meters torque",
        _ => "",
    }
}

/// CAN naming abbreviations and their spelled-out words.
const ABBREVIATIONS: &[(&str, &str)] = &[
    ("accr", "accelerator"),
    ("act", "active"),
    ("actv", "active"),
    ("amb", "ambient"),
    ("avl", "available"),
    ("batt", "battery"),
    ("brk", "brake"),
    ("cab", "cabin"),
    ("chrg", "charging charge"),
    ("clima", "climate"),
    ("cnsmp", "consumption"),
    ("ctrl", "control"),
    ("cur", "current"),
    ("dist", "distance"),
    ("drvr", "driver"),
    ("drv", "drive driving"),
    ("engy", "energy"),
    ("eng", "engine"),
    ("flt", "fault"),
    ("frnt", "front"),
    ("fu", "fuel"),
    ("hd", "head"),
    ("hdl", "headlight headlights"),
    ("htr", "heater heating"),
    ("ind", "indicator"),
    ("lamp", "lamp light lights"),
    ("lgt", "longitudinal"),
    ("lvl", "level"),
    ("lck", "lock locked"),
    ("min", "minute minutes"),
    ("mod", "mode"),
    ("odo", "odometer"),
    ("pass", "passenger"),
    ("pos", "position"),
    ("prk", "parking park"),
    ("pwr", "power"),
    ("re", "rear"),
    ("req", "request"),
    ("rng", "range"),
    ("sec", "second seconds"),
    ("seat", "seat"),
    ("soc", "state of charge battery"),
    ("spd", "speed"),
    ("st", "state"),
    ("sts", "status state"),
    ("tar", "target"),
    ("temp", "temperature"),
    ("tmr", "timer"),
    ("trp", "trip"),
    ("tyr", "tyre tire"),
    ("prs", "pressure"),
    ("veh", "vehicle"),
    ("win", "window"),
    ("wipr", "wiper wipers"),
    ("wndw", "window"),
    ("wshr", "washer"),
    ("le", "left"),
    ("ri", "right"),
    ("dr", "door"),
    ("hmi", "display"),
    ("mil", "mileage"),
    ("volt", "voltage"),
    ("hv", "high voltage"),
    ("lv", "low voltage"),
    ("ac", "air conditioning"),
    ("fan", "fan blower"),
    ("sun", "sun"),
    ("roof", "roof"),
    ("trnk", "trunk tailgate"),
    ("hrn", "horn"),
    ("alrm", "alarm"),
    ("cruis", "cruise"),
];

/// Expand a single lowercase token through the abbreviation table.
pub fn expand_token(token: &str) -> Option<&'static str> {
    ABBREVIATIONS
        .iter()
        .find(|(abbr, _)| *abbr == token)
        .map(|(_, words)| *words)
}

/// Split an identifier into lowercase words: `VehSpdLgt` → `veh spd lgt`,
/// `tripTimeSeconds` → `trip time seconds`, `wiper_state` → `wiper state`.
pub fn split_identifier(ident: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = ident.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            continue;
        }
        let boundary = if let Some(&prev) = i.checked_sub(1).and_then(|j| chars.get(j)) {
            (c.is_uppercase() && prev.is_lowercase())
                || (c.is_uppercase()
                    && prev.is_uppercase()
                    && chars.get(i + 1).is_some_and(|n| n.is_lowercase()))
                || (c.is_ascii_digit() != prev.is_ascii_digit() && prev.is_alphanumeric())
        } else {
            false
        };
        if boundary && !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Identifier words with abbreviations spelled out.
pub fn expanded_identifier(ident: &str) -> String {
    split_identifier(ident)
        .iter()
        .map(|w| expand_token(w).map(str::to_string).unwrap_or_else(|| w.clone()))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speed_conversion_is_3_6() {
        let c = conversion("m/s", "km/h").unwrap();
        assert_eq!(c.factor, 3.6);
        assert_eq!(c.offset, 0.0);
        assert!(conversion("m/s", "degC").is_none());
        assert_eq!(conversion("°C", "degC").unwrap().factor, 1.0);
    }

    #[test]
    fn fahrenheit_round_trip() {
        let there = conversion("degC", "degF").unwrap();
        let back = conversion("degF", "degC").unwrap();
        let f = there.factor * 21.5 + there.offset;
        let c = back.factor * f + back.offset;
        assert!((c - 21.5).abs() < 1e-12);
    }

    #[test]
    fn identifier_splitting() {
        assert_eq!(split_identifier("VehSpdLgt"), ["veh", "spd", "lgt"]);
        assert_eq!(split_identifier("tripTimeSeconds"), ["trip", "time", "seconds"]);
        assert_eq!(split_identifier("HVBattSOC"), ["hv", "batt", "soc"]);
        assert_eq!(split_identifier("wiper_state"), ["wiper", "state"]);
        assert_eq!(expanded_identifier("WiprFrntSts"), "wiper wipers front status state");
    }

    #[test]
    fn numbers_render_short() {
        assert_eq!(format_number(655.35), "655.35");
        assert_eq!(format_number(250.0), "250");
        assert_eq!(format_number(-0.0), "0");
    }
}
