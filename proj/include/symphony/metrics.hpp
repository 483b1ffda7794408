#pragma once

#include <map>
#include <optional>
#include <string>

#include "json.hpp"
#include "symphony/dissonance.hpp"
#include "symphony/harmony.hpp"
#include "symphony/score.hpp"

namespace symphony {

/// Objective metrics for one generated window. Absent fields carry a reason
/// in `absent`.
struct MetricsReport {
  std::optional<double> trk;
  std::optional<double> prc;
  std::optional<double> rec;
  std::optional<double> d_hn;
  std::optional<double> d_nn;
  std::optional<double> mov;
  std::optional<double> orn;
  std::map<std::string, std::string> absent;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Mean number of tracks with at least one note, over bars.
double track_density(const Score& score);

/// Index into bar.tracks of the melodic (skyline) track, or -1 for a silent bar.
int skyline_track(const Bar& bar);

/// Most frequent note duration in a track-bar; ties go to the shorter value.
int predominant_duration(const TrackBar& track);

/// Fraction of consecutive bar pairs whose skyline tracks change predominant duration.
double melodic_movement(const Score& score);

/// Fraction of bars in which a run of three or more stepwise eighth/sixteenth
/// notes lands on a note of a quarter or longer.
double melodic_ornament(const Score& score);

/// Assembles the full report. Prc/Rec need a reference skeleton; dissonance
/// is classified against the reference when given, else against the score's
/// own analysis.
MetricsReport evaluate(const Score& score, const HarmonySkeleton* reference,
                       const DissonanceParams& params = {}, const DissonanceMatrix& w = default_w());

nlohmann::json report_to_json(const MetricsReport& r);

}  // namespace symphony
