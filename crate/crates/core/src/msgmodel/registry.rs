//! Static sensor modality to indicator-category mapping. The mapping is
//! non-exclusive: one modality informs several indicators and one indicator
//! may be informed by several modalities.

use std::fmt;

use thiserror::Error;

use super::SensorType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Indicator {
    Workload,
    Stress,
    Anxiety,
    CognitiveEffort,
    MentalEmotionalStress,
    PhysicalEffort,
    EmotionalArousal,
    MentalLoad,
    MotorControl,
    MotorIntention,
    Attention,
    Engagement,
    Intention,
    EyeMovement,
    Blink,
    GazeDirection,
    Trust,
    Arousal,
    Effort,
}

impl Indicator {
    pub fn as_str(self) -> &'static str {
        use Indicator::*;
        match self {
            Workload => "workload",
            Stress => "stress",
            Anxiety => "anxiety",
            CognitiveEffort => "cognitive_effort",
            MentalEmotionalStress => "mental_emotional_stress",
            PhysicalEffort => "physical_effort",
            EmotionalArousal => "emotional_arousal",
            MentalLoad => "mental_load",
            MotorControl => "motor_control",
            MotorIntention => "motor_intention",
            Attention => "attention",
            Engagement => "engagement",
            Intention => "intention",
            EyeMovement => "eye_movement",
            Blink => "blink",
            GazeDirection => "gaze_direction",
            Trust => "trust",
            Arousal => "arousal",
            Effort => "effort",
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown modality {0:?}")]
pub struct UnknownModality(pub String);

fn indicators_for(sensor: SensorType) -> &'static [Indicator] {
    use Indicator::*;
    match sensor {
        SensorType::Eeg => &[Workload, Stress],
        SensorType::Ppg => &[Anxiety, CognitiveEffort],
        SensorType::Ecg => &[MentalEmotionalStress, PhysicalEffort],
        SensorType::Eda => &[EmotionalArousal, MentalLoad],
        SensorType::Emg => &[MotorControl, MotorIntention],
        SensorType::EyeTracking => &[Attention, Engagement, Intention],
        SensorType::Eog => &[EyeMovement, Blink, GazeDirection],
        SensorType::Pupillometry => &[Workload, EmotionalArousal, Trust],
        SensorType::Respiration => &[Arousal, Workload, Effort],
    }
}

/// Indicator categories a sensor modality can provide evidence for.
pub fn modality_indicators(sensor_type: &str) -> Result<&'static [Indicator], UnknownModality> {
    sensor_type
        .parse::<SensorType>()
        .map(indicators_for)
        .map_err(|()| UnknownModality(sensor_type.to_owned()))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn set(sensor: &str) -> BTreeSet<&'static str> {
        modality_indicators(sensor).unwrap().iter().map(|i| i.as_str()).collect()
    }

    #[test]
    fn ecg_and_pupillometry() {
        assert_eq!(set("ecg"), BTreeSet::from(["mental_emotional_stress", "physical_effort"]));
        assert_eq!(set("pupillometry"), BTreeSet::from(["workload", "emotional_arousal", "trust"]));
    }

    #[test]
    fn unknown() {
        assert_eq!(modality_indicators("fnirs"), Err(UnknownModality("fnirs".into())));
    }

    #[test]
    fn covers_all_nine_sensor_types() {
        assert_eq!(SensorType::ALL.len(), 9);
        for s in SensorType::ALL {
            assert!(!modality_indicators(s.as_str()).unwrap().is_empty());
        }
    }

    #[test]
    fn workload_is_shared_across_modalities() {
        let with_workload: Vec<_> = SensorType::ALL
            .iter()
            .filter(|s| indicators_for(**s).contains(&Indicator::Workload))
            .collect();
        assert_eq!(with_workload, [&SensorType::Eeg, &SensorType::Pupillometry, &SensorType::Respiration]);
    }
}
