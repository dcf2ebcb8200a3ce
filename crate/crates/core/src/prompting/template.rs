use std::fmt::Write as _;

use chrono::NaiveDate;

use crate::features::{CalendarFeatures, Mask};
use crate::ingest::{Location, Poi};

pub const MISSING_TOKEN: &str = "[MISSING]";
pub const NO_POIS: &str = "No nearby points of interest.";

const WEEKDAYS: [&str; 7] = [
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
];
const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

/// Built-in template, version 1.
pub const DEFAULT_TEMPLATE: &str = "\
# version: 1
EV charging station {station}.
Daily charging demand in kWh over the last {window} days, oldest first: {demand}
Missing-day indicator over the same days (1 = missing): {mask}
Calendar: {weekday}, day {day} of {month}.
Location: latitude {lat}, longitude {lon}.
Nearby points of interest:
{pois}";

#[derive(Debug, Clone, PartialEq)]
pub struct PromptInputs<'a> {
    pub station_id: &'a str,
    /// Raw-scale demand; values at masked steps are never rendered.
    pub demand: &'a [f64],
    pub mask: &'a Mask,
    pub calendar: CalendarFeatures,
    pub location: Location,
    pub pois: &'a [Poi],
}

impl<'a> PromptInputs<'a> {
    pub fn for_date(
        station_id: &'a str,
        demand: &'a [f64],
        mask: &'a Mask,
        anchor: NaiveDate,
        location: Location,
        pois: &'a [Poi],
    ) -> Self {
        PromptInputs {
            station_id,
            demand,
            mask,
            calendar: CalendarFeatures::from_date(anchor),
            location,
            pois,
        }
    }
}

/// Text template with `{placeholder}` fields. Leading `#` lines are comments;
/// a `# version: N` comment sets the version.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub version: u32,
    pub max_pois: usize,
    body: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::parse(DEFAULT_TEMPLATE, 10)
    }
}

impl PromptTemplate {
    pub fn parse(text: &str, max_pois: usize) -> Self {
        let mut version = 0;
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.starts_with('#') {
                break;
            }
            if let Some(v) = trimmed.trim_start_matches('#').trim().strip_prefix("version:") {
                version = v.trim().parse().unwrap_or(0);
            }
            body_start += line.len();
        }
        PromptTemplate {
            version,
            max_pois,
            body: text[body_start..].to_string(),
        }
    }

    pub fn render(&self, inputs: &PromptInputs<'_>) -> String {
        let demand = inputs
            .demand
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if inputs.mask.is_masked(i) {
                    MISSING_TOKEN.to_string()
                } else {
                    format!("{v:.2}")
                }
            })
            .collect::<Vec<_>>()
            .join(", ");
        let mask = inputs
            .mask
            .bits()
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(", ");
        let pois = if inputs.pois.is_empty() {
            NO_POIS.to_string()
        } else {
            let mut s = String::new();
            for (i, p) in inputs.pois.iter().take(self.max_pois).enumerate() {
                if i > 0 {
                    s.push('\n');
                }
                let _ = write!(s, "{}: {} ({:.2} km)", p.category, p.name, p.distance_km);
            }
            s
        };
        let c = inputs.calendar;
        let fields: [(&str, String); 10] = [
            ("{station}", inputs.station_id.to_string()),
            ("{window}", inputs.demand.len().to_string()),
            ("{demand}", demand),
            ("{mask}", mask),
            ("{weekday}", WEEKDAYS[c.day_of_week as usize % 7].to_string()),
            ("{day}", c.day_of_month.to_string()),
            ("{month}", MONTHS[(c.month as usize + 11) % 12].to_string()),
            ("{lat}", format!("{:.5}", inputs.location.lat)),
            ("{lon}", format!("{:.5}", inputs.location.lon)),
            ("{pois}", pois),
        ];
        // Single left-to-right pass so substituted text is never re-scanned.
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            match fields.iter().find(|(name, _)| tail.starts_with(name)) {
                Some((name, value)) => {
                    out.push_str(value);
                    rest = &tail[name.len()..];
                }
                None => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// Renders with the built-in template.
pub fn build_prompt(inputs: &PromptInputs<'_>, template: &PromptTemplate) -> String {
    template.render(inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pois() -> Vec<Poi> {
        vec![Poi {
            name: "Town Library".into(),
            category: "library".into(),
            distance_km: 0.42,
        }]
    }

    fn inputs<'a>(demand: &'a [f64], mask: &'a Mask, pois: &'a [Poi]) -> PromptInputs<'a> {
        PromptInputs::for_date(
            "S1",
            demand,
            mask,
            "2019-03-02".parse().unwrap(),
            Location { lat: 37.444_573, lon: -122.160_6 },
            pois,
        )
    }

    #[test]
    fn renders_all_fields_in_order() {
        let demand = [1.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.25];
        let mask = Mask::from_indices(7, &[2]);
        let p = pois();
        let text = build_prompt(&inputs(&demand, &mask, &p), &PromptTemplate::default());
        let order = [
            "S1",
            "1.00, 2.50, [MISSING], 4.00",
            "0, 0, 1, 0, 0, 0, 0",
            "Saturday, day 2 of March",
            "37.44457",
            "-122.16060",
            "library: Town Library (0.42 km)",
        ];
        let mut last = 0;
        for needle in order {
            let at = text[last..].find(needle).unwrap_or_else(|| panic!("`{needle}` missing in\n{text}"));
            last += at;
        }
        assert!(!text.contains("3.00"));
        assert!(!text.starts_with('#'));
    }

    #[test]
    fn deterministic_and_fallback() {
        let demand = [1.0; 7];
        let mask = Mask::observed(7);
        let a = build_prompt(&inputs(&demand, &mask, &[]), &PromptTemplate::default());
        let b = build_prompt(&inputs(&demand, &mask, &[]), &PromptTemplate::default());
        assert_eq!(a, b);
        assert!(a.lines().any(|l| l == NO_POIS));
    }

    #[test]
    fn custom_template_version_and_poi_cap() {
        let t = PromptTemplate::parse("# version: 7\n# note\n{station}|{pois}|{unknown}", 1);
        assert_eq!(t.version, 7);
        let mut many = pois();
        many.push(Poi { name: "Gym".into(), category: "sport".into(), distance_km: 1.0 });
        let demand = [1.0, 2.0];
        let mask = Mask::observed(2);
        let text = t.render(&inputs(&demand, &mask, &many));
        assert_eq!(text, "S1|library: Town Library (0.42 km)|{unknown}");
    }

    proptest! {
        #[test]
        fn masked_values_never_leak(
            observed in proptest::collection::vec(0.0f64..50.0, 7),
            hidden in proptest::collection::vec(500.0f64..900.0, 7),
            bits in proptest::collection::vec(any::<bool>(), 7),
        ) {
            let mask = Mask::new(bits.clone());
            let demand: Vec<f64> = (0..7).map(|i| if bits[i] { hidden[i] } else { observed[i] }).collect();
            let text = build_prompt(&inputs(&demand, &mask, &[]), &PromptTemplate::default());
            for i in mask.indices() {
                let rendered = format!("{:.2}", demand[i]);
                prop_assert!(!text.contains(&rendered));
            }
            prop_assert_eq!(text.matches(MISSING_TOKEN).count(), mask.count());
        }
    }
}
