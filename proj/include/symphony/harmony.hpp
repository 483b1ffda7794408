#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "symphony/score.hpp"

namespace symphony {

/// Set of pitch classes as a 12-bit mask (bit k = pitch class k).
using PcSet = std::uint16_t;

inline constexpr PcSet pc_bit(int pc) { return static_cast<PcSet>(1u << (((pc % 12) + 12) % 12)); }
std::vector<int> pcs_of(PcSet set);
PcSet pc_set_of(const std::vector<int>& pcs);
int interval_class(int a, int b);

enum class ChordQuality : std::uint8_t { Maj, Min, Dim, Aug, Maj7, Min7, Dom7, HalfDim7, Dim7, None };
inline constexpr int kQualityCount = 9;
inline constexpr int kTemplateCount = 12 * kQualityCount;

std::string to_string(ChordQuality q);
ChordQuality quality_from_string(const std::string& s);

struct ChordTemplate {
  int root = 0;
  ChordQuality quality = ChordQuality::None;

  /// Pitch classes of the chord; empty for the no-chord template.
  PcSet pcs() const;
  bool empty() const { return quality == ChordQuality::None; }
  std::string name() const;

  friend bool operator==(const ChordTemplate&, const ChordTemplate&) = default;
};

/// All 108 templates, roots ascending and qualities in declaration order within a root.
const std::array<ChordTemplate, kTemplateCount>& all_templates();

struct HarmonyBeat {
  int beat_index = 0;
  ChordTemplate chord;
  PcSet extensions = 0;
  std::vector<int> tones;  // ascending MIDI pitches, stretched over the beat

  PcSet allowed() const { return static_cast<PcSet>(chord.pcs() | extensions); }
  PcSet tone_pcs() const;

  friend bool operator==(const HarmonyBeat&, const HarmonyBeat&) = default;
};

struct HarmonySkeleton {
  std::vector<HarmonyBeat> beats;
  /// Bar lengths in grid units; beats are laid out ceil(len / 8) per bar.
  std::vector<int> bar_lengths;

  int beat_length() const { return kBeatLength; }
  /// Index of the beat covering absolute grid step t, or -1 past the end.
  int beat_at(int t) const;
  /// Absolute grid span [start, end) of a beat.
  std::pair<int, int> beat_span(int beat) const;
  int bar_of_beat(int beat) const;
  int total_length() const;

  friend bool operator==(const HarmonySkeleton&, const HarmonySkeleton&) = default;
};

int beats_in_bar(int bar_length);

/// Duration-weighted pitch-class mass of everything sounding during a global beat.
std::array<double, 12> pc_histogram(const Score& score, int beat_index);

struct TemplateMatch {
  ChordTemplate chord;
  double similarity = 0.0;
};

/// Highest-cosine template for a histogram. Ties go to fewer tones, then lower
/// root, then quality order. A zero histogram yields the empty template.
TemplateMatch match_template(const std::array<double, 12>& hist);

/// Largest set of extra pitch classes that adds no minor or major second
/// against the chord or each other; lexicographically smallest among ties.
PcSet find_extensions(PcSet present, const ChordTemplate& chord);

HarmonySkeleton analyze_skeleton(const Score& score);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// Micro-averaged pitch-class overlap between two skeletons of equal length.
PrecisionRecall precision_recall(const HarmonySkeleton& reference, const HarmonySkeleton& reanalyzed);

enum class FilterReason { LowDensity, Repetition, TooFewCadences, FirstChordQuality, LogProbability };
std::string to_string(FilterReason r);

struct FilterConfig {
  double min_tones_per_beat = 3.0;
  double max_repetition = 0.25;
  int repetition_window_bars = 4;
  bool require_cadences = false;
  int min_cadences_per_32_bars = 4;
  bool require_major_minor_start = false;
  /// Optional log-probability scorer; the skeleton is rejected when the score
  /// falls outside [min_log_prob, max_log_prob].
  std::function<double(const HarmonySkeleton&)> log_prob;
  double min_log_prob = -1e300;
  double max_log_prob = 1e300;
};

struct FilterVerdict {
  bool accepted = true;
  std::vector<FilterReason> reasons;
  double tones_per_beat = 0.0;
  double repetition = 0.0;
  int cadences = 0;
};

FilterVerdict filter_skeleton(const HarmonySkeleton& sk, const FilterConfig& cfg);

/// Number of beat pairs with a V or V7 chord followed by the major/minor chord a fifth below.
int count_cadences(const HarmonySkeleton& sk);

/// Highest consecutive-duplicate beat fraction over sliding windows of `window_bars` bars.
double repetition_rate(const HarmonySkeleton& sk, int window_bars);

/// Clears extensions and drops tones outside the template.
HarmonySkeleton prune_to_template(const HarmonySkeleton& sk);

/// Skeleton tones as beat-long notes in a single piano track.
Score skeleton_to_score(const HarmonySkeleton& sk);

nlohmann::json skeleton_to_json(const HarmonySkeleton& sk);
HarmonySkeleton skeleton_from_json(const nlohmann::json& j);

}  // namespace symphony
