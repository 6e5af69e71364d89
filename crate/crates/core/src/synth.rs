//! Synthetic payslip-like pages with known label counts.
//!
//! A page is a header block of filler words followed by key/value rows, one
//! per field, with an optional year-to-date column of amounts tagged O.
//! Templates fix the field order, key phrasing and column positions; pages
//! draw values per page unless `fixed_values` is set. The generator tallies
//! the words it emits per label, independently of [`crate::corpus::label_stats`].

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Page, RawBox, Word, PAYSLIPS_LABELS};
use crate::rng::{self, StreamRng};

pub const PAGE_WIDTH: u32 = 850;
pub const PAGE_HEIGHT: u32 = 1100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub pages: usize,
    pub seed: u64,
    pub templates: usize,
    /// Reuse each template's values on every page built from it.
    pub fixed_values: bool,
    /// Maximum pixel offset applied to every box.
    pub jitter: u32,
    /// Add a year-to-date column of amounts next to the period values.
    pub distractors: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { pages: 20, seed: 0, templates: 4, fixed_values: false, jitter: 2, distractors: true }
    }
}

/// Word counts per label as emitted by the generator.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub pages: usize,
    pub labels: BTreeMap<String, usize>,
    pub outside: usize,
    pub total: usize,
}

const KEYS: [[&str; 3]; 9] = [
    ["Period Start", "Period From", "Pay Period Begin"],
    ["Period End", "Period To", "Pay Period End"],
    ["Pay Date", "Payment Date", "Date Paid"],
    ["Gross Pay", "Total Gross", "Gross Earnings"],
    ["Taxable Gross", "Taxable Earnings", "Gross Taxable"],
    ["Net Pay", "Net Amount", "Take Home Pay"],
    ["PAYG Tax", "Tax Withheld", "PAYG Withholding"],
    ["Pre-Tax Deductions", "Salary Sacrifice", "Before Tax Deductions"],
    ["Post-Tax Deductions", "After Tax Deductions", "Other Deductions"],
];

// fields 0..3 hold dates, the rest amounts
const DATE_FIELDS: usize = 3;

const COMPANIES: [&str; 6] = [
    "Acme Logistics Pty Ltd",
    "Northwind Health Services",
    "Blue Harbour Cafe",
    "Summit Engineering Group",
    "Riverside Council",
    "Kestrel Retail Co",
];
const STREETS: [&str; 5] = ["George Street", "Collins Avenue", "Hill Road", "Market Lane", "Park Parade"];
const CITIES: [&str; 5] = ["Sydney NSW", "Melbourne VIC", "Perth WA", "Hobart TAS", "Darwin NT"];
const NAMES: [&str; 8] = ["Jordan", "Casey", "Morgan", "Riley", "Taylor", "Avery", "Quinn", "Rowan"];
const SURNAMES: [&str; 8] = ["Nguyen", "Smith", "Patel", "Brown", "Garcia", "Kelly", "Wilson", "Chen"];
const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

#[derive(Clone, Debug)]
struct Template {
    company: usize,
    order: Vec<usize>,
    key_variant: [usize; 9],
    /// Dates as `dd/mm/yyyy` when true, `dd Mon yyyy` otherwise.
    numeric_dates: bool,
    /// Amounts carry a separate `$` word.
    dollar_sign: bool,
    key_x: u32,
    value_x: u32,
    ytd_x: u32,
    top: u32,
    row_gap: u32,
}

impl Template {
    fn draw(r: &mut StreamRng) -> Self {
        let mut order: Vec<usize> = (0..9).collect();
        order.shuffle(r);
        let mut key_variant = [0; 9];
        for v in &mut key_variant {
            *v = r.random_range(0..3);
        }
        Self {
            company: r.random_range(0..COMPANIES.len()),
            order,
            key_variant,
            numeric_dates: r.random_bool(0.5),
            dollar_sign: r.random_bool(0.5),
            key_x: r.random_range(40..90),
            value_x: r.random_range(330..420),
            ytd_x: r.random_range(560..640),
            top: r.random_range(220..300),
            row_gap: r.random_range(26..36),
        }
    }
}

#[derive(Clone, Debug)]
struct Values {
    employee: (usize, usize),
    employee_id: u32,
    street: (u32, usize),
    city: usize,
    /// Rendered words of each field's value.
    fields: Vec<Vec<String>>,
    ytd: Vec<Vec<String>>,
}

fn date_words(r: &mut StreamRng, numeric: bool) -> Vec<String> {
    let (d, m, y) = (r.random_range(1..=28u32), r.random_range(1..=12usize), r.random_range(2015..=2023u32));
    if numeric {
        vec![format!("{d:02}/{m:02}/{y}")]
    } else {
        vec![d.to_string(), MONTHS[m - 1].to_string(), y.to_string()]
    }
}

fn amount_words(r: &mut StreamRng, dollar: bool, scale: u32) -> Vec<String> {
    let cents = r.random_range(1_000..=900_000u32) * scale;
    let (whole, frac) = (cents / 100, cents % 100);
    let whole = if whole >= 1000 { format!("{},{:03}", whole / 1000, whole % 1000) } else { whole.to_string() };
    let amount = format!("{whole}.{frac:02}");
    if dollar {
        vec!["$".to_string(), amount]
    } else {
        vec![amount]
    }
}

impl Values {
    fn draw(r: &mut StreamRng, t: &Template) -> Self {
        let fields = (0..9)
            .map(|f| if f < DATE_FIELDS { date_words(r, t.numeric_dates) } else { amount_words(r, t.dollar_sign, 1) })
            .collect();
        let ytd = (0..9).map(|_| amount_words(r, t.dollar_sign, 12)).collect();
        Self {
            employee: (r.random_range(0..NAMES.len()), r.random_range(0..SURNAMES.len())),
            employee_id: r.random_range(10_000..99_999),
            street: (r.random_range(1..400), r.random_range(0..STREETS.len())),
            city: r.random_range(0..CITIES.len()),
            fields,
            ytd,
        }
    }
}

struct PageBuilder<'a> {
    words: Vec<Word>,
    tags: Vec<String>,
    manifest: &'a mut Manifest,
    jitter: &'a mut StreamRng,
    max_jitter: u32,
}

impl PageBuilder<'_> {
    /// Lay words left to right from `x` on the line at `y`. Returns the x
    /// after the last word.
    fn line(&mut self, x: u32, y: u32, text: &[String], label: Option<&str>) -> u32 {
        let mut x = x;
        for (i, w) in text.iter().enumerate() {
            let j = self.max_jitter;
            let (dx, dy) = if j == 0 { (0, 0) } else { (self.jitter.random_range(0..=j), self.jitter.random_range(0..=j)) };
            let width = 8 * w.chars().count() as u32;
            let x0 = (x + dx).min(PAGE_WIDTH - 1 - width.min(PAGE_WIDTH - 1));
            let y0 = (y + dy).min(PAGE_HEIGHT - 15);
            self.words.push(Word::new(w.clone(), RawBox::new(x0, y0, x0 + width, y0 + 14)));
            let tag = match label {
                None => {
                    self.manifest.outside += 1;
                    "O".to_string()
                }
                Some(l) => {
                    *self.manifest.labels.entry(l.to_string()).or_default() += 1;
                    format!("{}-{l}", if i == 0 { "B" } else { "I" })
                }
            };
            self.tags.push(tag);
            self.manifest.total += 1;
            x = x0 + width + 8;
        }
        x
    }
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Generate labeled pages and the tally of what was emitted.
pub fn synth_pages(cfg: &SynthConfig) -> (Vec<Page>, Manifest) {
    let templates: Vec<(Template, Values)> = (0..cfg.templates.max(1))
        .map(|i| {
            let mut r = rng::stream(cfg.seed, "synth-template", i as u64);
            let t = Template::draw(&mut r);
            let v = Values::draw(&mut r, &t);
            (t, v)
        })
        .collect();
    let mut manifest = Manifest {
        labels: PAYSLIPS_LABELS.iter().map(|l| (l.to_string(), 0)).collect(),
        ..Manifest::default()
    };
    let mut pages = Vec::with_capacity(cfg.pages);
    for p in 0..cfg.pages {
        let mut r = rng::stream(cfg.seed, "synth-page", p as u64);
        let (t, fixed) = &templates[p % templates.len()];
        let drawn;
        let v = if cfg.fixed_values {
            fixed
        } else {
            drawn = Values::draw(&mut r, t);
            &drawn
        };
        let mut b = PageBuilder { words: Vec::new(), tags: Vec::new(), manifest: &mut manifest, jitter: &mut r, max_jitter: cfg.jitter };
        b.line(60, 60, &split(COMPANIES[t.company]), None);
        b.line(60, 90, &split(&format!("{} {}", v.street.0, STREETS[v.street.1])), None);
        b.line(60, 110, &split(CITIES[v.city]), None);
        b.line(60, 150, &split(&format!("Employee {} {}", NAMES[v.employee.0], SURNAMES[v.employee.1])), None);
        b.line(480, 150, &split(&format!("Employee ID {}", v.employee_id)), None);
        if cfg.distractors {
            b.line(t.value_x, t.top - 30, &split("This Period"), None);
            b.line(t.ytd_x, t.top - 30, &split("Year To Date"), None);
        }
        for (row, &f) in t.order.iter().enumerate() {
            let y = t.top + row as u32 * t.row_gap;
            b.line(t.key_x, y, &split(KEYS[f][t.key_variant[f]]), None);
            b.line(t.value_x, y, &v.fields[f], Some(PAYSLIPS_LABELS[f]));
            if cfg.distractors && f >= DATE_FIELDS {
                b.line(t.ytd_x, y, &v.ytd[f], None);
            }
        }
        let footer = t.top + 9 * t.row_gap + 40;
        b.line(60, footer.min(PAGE_HEIGHT - 40), &split("Please retain this statement for your records"), None);
        let (words, tags) = (b.words, b.tags);
        manifest.pages += 1;
        pages.push(Page {
            doc_id: format!("synth-{}-{p:04}", cfg.seed),
            width: PAGE_WIDTH,
            height: PAGE_HEIGHT,
            words,
            tags: Some(tags),
        });
    }
    (pages, manifest)
}
