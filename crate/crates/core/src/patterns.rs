//! Generic and person-specific social-pattern statistics — frequency,
//! trend, diversity, duration — plus the temporal interaction map export.
//!
//! Frequency is events per observation day, the trend is the categorized
//! fraction of all events, diversity is half the exponential of the natural
//! Shannon entropy of the (formal, informal) trend pair, and duration is
//! frame count times the capture interval.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Category;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("observation days must be at least 1, got {0}")]
    InvalidDays(u32),
    #[error("no events given")]
    NoEvents,
    #[error("event {0} lacks a category")]
    UncategorizedEvent(String),
    #[error("trend pair ({formal}, {informal}) is not a distribution")]
    InvalidTrend { formal: f64, informal: f64 },
    #[error("event {0} ends before it starts")]
    NegativeSpan(String),
}

/// One detected social interaction, placed in observation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub sequence_id: String,
    /// 1-based observation day.
    pub day_index: u32,
    pub start_frame: u64,
    pub end_frame: u64,
    /// Set only for interactions whose kind was determined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    /// Cluster ids of the people involved.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub participants: Vec<String>,
    pub frame_interval_s: f64,
    /// Wall-clock start in seconds from the day start, when the dataset
    /// carries timestamps; otherwise the frame offset stands in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
}

impl InteractionEvent {
    pub fn frame_count(&self) -> u64 {
        self.end_frame - self.start_frame + 1
    }

    /// Duration in minutes: frame count × capture interval.
    pub fn duration_min(&self) -> f64 {
        self.frame_count() as f64 * self.frame_interval_s / 60.0
    }

    fn start_min(&self) -> f64 {
        match self.start_s {
            Some(s) => s / 60.0,
            None => self.start_frame as f64 * self.frame_interval_s / 60.0,
        }
    }

    fn validate(&self) -> Result<(), PatternError> {
        if self.end_frame < self.start_frame {
            return Err(PatternError::NegativeSpan(self.sequence_id.clone()));
        }
        Ok(())
    }
}

/// Events of one category per observation day.
pub fn frequency(
    events: &[InteractionEvent],
    days: u32,
    category: Category,
) -> Result<f64, PatternError> {
    if days < 1 {
        return Err(PatternError::InvalidDays(days));
    }
    let count = events.iter().filter(|e| e.category == Some(category)).count();
    Ok(count as f64 / days as f64)
}

/// Fraction of all events falling in the category. Every event must be
/// categorized, otherwise the formal/informal trends would not sum to one.
pub fn social_trend(events: &[InteractionEvent], category: Category) -> Result<f64, PatternError> {
    if events.is_empty() {
        return Err(PatternError::NoEvents);
    }
    let mut count = 0usize;
    for event in events {
        match event.category {
            Some(c) if c == category => count += 1,
            Some(_) => {}
            None => return Err(PatternError::UncategorizedEvent(event.sequence_id.clone())),
        }
    }
    Ok(count as f64 / events.len() as f64)
}

/// Half the exponential of the Shannon entropy (natural logarithm) of the
/// trend pair, with `0·ln 0 = 0`. Ranges over [0.5, 1]; 1 exactly at an
/// even split.
pub fn diversity(a_formal: f64, a_informal: f64) -> Result<f64, PatternError> {
    let bad = || PatternError::InvalidTrend { formal: a_formal, informal: a_informal };
    let invalid = |a: f64| a < 0.0 || !a.is_finite();
    if invalid(a_formal) || invalid(a_informal) || (a_formal + a_informal - 1.0).abs() > 1e-9 {
        return Err(bad());
    }
    let term = |a: f64| if a == 0.0 { 0.0 } else { a * a.ln() };
    let entropy = -(term(a_formal) + term(a_informal));
    Ok(0.5 * entropy.exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub mean_min: f64,
    pub median_min: f64,
    /// Population standard deviation; a single event yields 0.
    pub stddev_min: f64,
    /// Standard error of the mean, reported alongside so either
    /// dispersion convention can be read off.
    pub stderr_min: f64,
}

pub fn duration_stats(events: &[InteractionEvent]) -> Result<DurationStats, PatternError> {
    if events.is_empty() {
        return Err(PatternError::NoEvents);
    }
    for event in events {
        event.validate()?;
    }
    let mut durations: Vec<f64> = events.iter().map(InteractionEvent::duration_min).collect();
    let n = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / n;
    durations.sort_by(f64::total_cmp);
    let median = if durations.len() % 2 == 1 {
        durations[durations.len() / 2]
    } else {
        0.5 * (durations[durations.len() / 2 - 1] + durations[durations.len() / 2])
    };
    let variance = durations.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let stddev = variance.sqrt();
    Ok(DurationStats { mean_min: mean, median_min: median, stddev_min: stddev, stderr_min: stddev / n.sqrt() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum ProfileScope {
    Generic,
    Person { cluster_id: String },
}

/// All four statistics for one scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialProfile {
    #[serde(flatten)]
    pub scope: ProfileScope,
    pub f_formal: f64,
    pub f_informal: f64,
    pub a_formal: f64,
    pub a_informal: f64,
    pub diversity: f64,
    pub duration: DurationStats,
    pub observation_days: u32,
    pub event_count: usize,
}

/// Assembles a profile; the person scope restricts events to those whose
/// participants include the cluster id.
pub fn build_profile(
    events: &[InteractionEvent],
    days: u32,
    scope: ProfileScope,
) -> Result<SocialProfile, PatternError> {
    let filtered: Vec<InteractionEvent> = match &scope {
        ProfileScope::Generic => events.to_vec(),
        ProfileScope::Person { cluster_id } => events
            .iter()
            .filter(|e| e.participants.iter().any(|p| p == cluster_id))
            .cloned()
            .collect(),
    };
    let a_formal = social_trend(&filtered, Category::Formal)?;
    let a_informal = social_trend(&filtered, Category::Informal)?;
    Ok(SocialProfile {
        scope,
        f_formal: frequency(&filtered, days, Category::Formal)?,
        f_informal: frequency(&filtered, days, Category::Informal)?,
        a_formal,
        a_informal,
        diversity: diversity(a_formal, a_informal)?,
        duration: duration_stats(&filtered)?,
        observation_days: days,
        event_count: filtered.len(),
    })
}

// ---------------------------------------------------------------------------
// Temporal map
// ---------------------------------------------------------------------------

/// End-marker shape: squares for formal interactions, circles for informal
/// (and for events whose category is unknown).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Circle,
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneEntry {
    pub cluster_id: String,
    /// Lane offset within the event's interval, 0-based.
    pub lane: usize,
    pub color_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub sequence_id: String,
    pub start_min: f64,
    pub end_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    pub marker: Marker,
    /// One lane per participating person; parallel lanes mean co-occurring
    /// people in the same interval.
    pub lanes: Vec<LaneEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayLane {
    pub day_index: u32,
    pub entries: Vec<MapEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TemporalMap {
    pub days: Vec<DayLane>,
    /// Stable cluster-id → color-index legend.
    pub legend: Vec<(String, usize)>,
}

/// Builds the per-day interval document. `week` (1-based) restricts the map
/// to days `7(w-1)+1 ..= 7w`; `None` keeps the whole span. Color indices
/// are assigned by sorted cluster id, so the export is deterministic.
pub fn temporal_map(
    events: &[InteractionEvent],
    week: Option<u32>,
) -> Result<TemporalMap, PatternError> {
    for event in events {
        event.validate()?;
    }
    let in_week = |day: u32| match week {
        None => true,
        Some(w) => {
            let lo = 7 * (w - 1) + 1;
            (lo..lo + 7).contains(&day)
        }
    };

    let mut clusters: Vec<String> = events
        .iter()
        .filter(|e| in_week(e.day_index))
        .flat_map(|e| e.participants.iter().cloned())
        .collect();
    clusters.sort();
    clusters.dedup();
    let color_of: BTreeMap<&str, usize> =
        clusters.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut by_day: BTreeMap<u32, Vec<MapEntry>> = BTreeMap::new();
    for event in events {
        if !in_week(event.day_index) {
            continue;
        }
        let start_min = event.start_min();
        let end_min = start_min + event.duration_min();
        let marker = match event.category {
            Some(Category::Formal) => Marker::Square,
            _ => Marker::Circle,
        };
        let mut participants = event.participants.clone();
        participants.sort();
        let lanes = participants
            .into_iter()
            .enumerate()
            .map(|(lane, cluster_id)| {
                let color_index = color_of[cluster_id.as_str()];
                LaneEntry { cluster_id, lane, color_index }
            })
            .collect();
        by_day.entry(event.day_index).or_default().push(MapEntry {
            sequence_id: event.sequence_id.clone(),
            start_min,
            end_min,
            category: event.category,
            marker,
            lanes,
        });
    }
    for entries in by_day.values_mut() {
        entries.sort_by(|a, b| a.start_min.total_cmp(&b.start_min).then(a.sequence_id.cmp(&b.sequence_id)));
    }
    Ok(TemporalMap {
        days: by_day.into_iter().map(|(day_index, entries)| DayLane { day_index, entries }).collect(),
        legend: clusters.into_iter().enumerate().map(|(i, c)| (c, i)).collect(),
    })
}

const SVG_PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Static vector-graphics rendering of the map: one row per day, one
/// horizontal line per participant lane, square or circle end markers by
/// category. Valid (if empty) SVG for an empty map.
pub fn render_svg(map: &TemporalMap) -> String {
    let row_height = 48.0;
    let lane_gap = 7.0;
    let margin_left = 70.0;
    let margin_top = 24.0;
    let width = 980.0;

    let max_min = map
        .days
        .iter()
        .flat_map(|d| d.entries.iter().map(|e| e.end_min))
        .fold(0.0f64, f64::max)
        .max(24.0 * 60.0);
    let scale = (width - margin_left - 20.0) / max_min;
    let height = margin_top + row_height * map.days.len().max(1) as f64 + 30.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    for (row, day) in map.days.iter().enumerate() {
        let y_base = margin_top + row as f64 * row_height + row_height / 2.0;
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\">day {}</text>\n",
            y_base + 4.0,
            day.day_index
        ));
        svg.push_str(&format!(
            "<line x1=\"{margin_left}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            width - 20.0,
            y = y_base
        ));
        for entry in &day.entries {
            let x1 = margin_left + entry.start_min * scale;
            let x2 = margin_left + entry.end_min * scale;
            for lane in &entry.lanes {
                let y = y_base + (lane.lane as f64 - (entry.lanes.len() as f64 - 1.0) / 2.0) * lane_gap;
                let color = SVG_PALETTE[lane.color_index % SVG_PALETTE.len()];
                svg.push_str(&format!(
                    "<line x1=\"{x1:.2}\" y1=\"{y:.2}\" x2=\"{x2:.2}\" y2=\"{y:.2}\" \
                     stroke=\"{color}\" stroke-width=\"3\"/>\n"
                ));
                for x in [x1, x2] {
                    match entry.marker {
                        Marker::Circle => svg.push_str(&format!(
                            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{color}\"/>\n"
                        )),
                        Marker::Square => svg.push_str(&format!(
                            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"{color}\"/>\n",
                            x - 4.0,
                            y - 4.0
                        )),
                    }
                }
            }
        }
    }

    let legend_y = height - 12.0;
    let mut x = margin_left;
    for (cluster, color_index) in &map.legend {
        let color = SVG_PALETTE[color_index % SVG_PALETTE.len()];
        svg.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            legend_y - 9.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{legend_y:.1}\" font-family=\"sans-serif\" font-size=\"11\">{cluster}</text>\n",
            x + 14.0
        ));
        x += 14.0 + 9.0 * cluster.len() as f64 + 18.0;
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// Event assembly
// ---------------------------------------------------------------------------

/// Joins pipeline outputs into events: every sequence detected as an
/// interaction becomes one event spanning its frames, labeled with its
/// category (when known) and the cluster ids of its interacting tracks.
pub fn assemble_events(
    sequences: &[crate::ingest::SequenceRecord],
    interacting: &BTreeMap<String, Vec<u32>>,
    categories: &BTreeMap<String, Category>,
    participants: &BTreeMap<(String, u32), String>,
) -> Vec<InteractionEvent> {
    let mut events = Vec::new();
    for sequence in sequences {
        let Some(tracks) = interacting.get(&sequence.sequence_id) else {
            continue;
        };
        if tracks.is_empty() || sequence.frames.is_empty() {
            continue;
        }
        let mut clusters: Vec<String> = tracks
            .iter()
            .filter_map(|t| participants.get(&(sequence.sequence_id.clone(), *t)).cloned())
            .collect();
        clusters.sort();
        clusters.dedup();
        events.push(InteractionEvent {
            sequence_id: sequence.sequence_id.clone(),
            day_index: sequence.day_index,
            start_frame: sequence.frames.first().unwrap().frame_id,
            end_frame: sequence.frames.last().unwrap().frame_id,
            category: categories.get(&sequence.sequence_id).copied(),
            participants: clusters,
            frame_interval_s: sequence.frame_interval_s,
            start_s: None,
        });
    }
    events
}
