#include "symphony/harmony.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>

#include "symphony/errors.hpp"

namespace symphony {

namespace {

constexpr std::array<const char*, kQualityCount + 1> kQualityNames = {
    "maj", "min", "dim", "aug", "maj7", "min7", "dom7", "halfdim7", "dim7", "none"};

constexpr std::array<PcSet, kQualityCount> kQualityShapes = {
    pc_bit(0) | pc_bit(4) | pc_bit(7),               // maj
    pc_bit(0) | pc_bit(3) | pc_bit(7),               // min
    pc_bit(0) | pc_bit(3) | pc_bit(6),               // dim
    pc_bit(0) | pc_bit(4) | pc_bit(8),               // aug
    pc_bit(0) | pc_bit(4) | pc_bit(7) | pc_bit(11),  // maj7
    pc_bit(0) | pc_bit(3) | pc_bit(7) | pc_bit(10),  // min7
    pc_bit(0) | pc_bit(4) | pc_bit(7) | pc_bit(10),  // dom7
    pc_bit(0) | pc_bit(3) | pc_bit(6) | pc_bit(10),  // halfdim7
    pc_bit(0) | pc_bit(3) | pc_bit(6) | pc_bit(9),   // dim7
};

PcSet rotate(PcSet set, int by) {
  const unsigned s = set;
  const unsigned r = ((s << by) | (s >> (12 - by))) & 0xFFFu;
  return static_cast<PcSet>(by == 0 ? s : r);
}

// Pitch classes within a minor or major second of any member of `set`.
PcSet second_neighbourhood(PcSet set) {
  return static_cast<PcSet>(rotate(set, 1) | rotate(set, 2) | rotate(set, 11) | rotate(set, 10));
}

constexpr double kTieEpsilon = 1e-12;

}  // namespace

std::vector<int> pcs_of(PcSet set) {
  std::vector<int> out;
  for (int pc = 0; pc < 12; ++pc) {
    if (set & pc_bit(pc)) out.push_back(pc);
  }
  return out;
}

PcSet pc_set_of(const std::vector<int>& pcs) {
  PcSet s = 0;
  for (int p : pcs) s |= pc_bit(p);
  return s;
}

int interval_class(int a, int b) {
  const int d = (((a - b) % 12) + 12) % 12;
  return std::min(d, 12 - d);
}

std::string to_string(ChordQuality q) { return kQualityNames[static_cast<int>(q)]; }

ChordQuality quality_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kQualityNames.size(); ++i) {
    if (s == kQualityNames[i]) return static_cast<ChordQuality>(i);
  }
  throw std::invalid_argument("unknown chord quality " + s);
}

PcSet ChordTemplate::pcs() const {
  if (quality == ChordQuality::None) return 0;
  return rotate(kQualityShapes[static_cast<int>(quality)], root);
}

std::string ChordTemplate::name() const {
  static constexpr const char* kNames[] = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
  if (empty()) return "N.C.";
  return std::string(kNames[root]) + to_string(quality);
}

const std::array<ChordTemplate, kTemplateCount>& all_templates() {
  static const auto table = [] {
    std::array<ChordTemplate, kTemplateCount> t{};
    for (int root = 0; root < 12; ++root) {
      for (int q = 0; q < kQualityCount; ++q) {
        t[root * kQualityCount + q] = {root, static_cast<ChordQuality>(q)};
      }
    }
    return t;
  }();
  return table;
}

PcSet HarmonyBeat::tone_pcs() const {
  PcSet s = 0;
  for (int t : tones) s |= pc_bit(t);
  return s;
}

int beats_in_bar(int bar_length) { return (bar_length + kBeatLength - 1) / kBeatLength; }

int HarmonySkeleton::beat_at(int t) const {
  if (t < 0) return -1;
  int bar_start = 0;
  int beat = 0;
  for (int len : bar_lengths) {
    if (t < bar_start + len) {
      const int k = beat + (t - bar_start) / kBeatLength;
      return k < static_cast<int>(beats.size()) ? k : -1;
    }
    bar_start += len;
    beat += beats_in_bar(len);
  }
  return -1;
}

std::pair<int, int> HarmonySkeleton::beat_span(int beat_index) const {
  int bar_start = 0;
  int beat = 0;
  for (int len : bar_lengths) {
    const int n = beats_in_bar(len);
    if (beat_index < beat + n) {
      const int s = bar_start + (beat_index - beat) * kBeatLength;
      return {s, std::min(s + kBeatLength, bar_start + len)};
    }
    bar_start += len;
    beat += n;
  }
  throw BoundsError("beat " + std::to_string(beat_index) + " beyond skeleton");
}

int HarmonySkeleton::bar_of_beat(int beat_index) const {
  int beat = 0;
  for (std::size_t b = 0; b < bar_lengths.size(); ++b) {
    beat += beats_in_bar(bar_lengths[b]);
    if (beat_index < beat) return static_cast<int>(b);
  }
  throw BoundsError("beat " + std::to_string(beat_index) + " beyond skeleton");
}

int HarmonySkeleton::total_length() const {
  int t = 0;
  for (int len : bar_lengths) t += len;
  return t;
}

namespace {

struct BeatGrid {
  std::vector<std::pair<int, int>> spans;
};

BeatGrid beat_grid(const Score& score) {
  BeatGrid g;
  int start = 0;
  for (const auto& bar : score.bars) {
    for (int k = 0; k < beats_in_bar(bar.bar_length); ++k) {
      const int s = start + k * kBeatLength;
      g.spans.emplace_back(s, std::min(s + kBeatLength, start + bar.bar_length));
    }
    start += bar.bar_length;
  }
  return g;
}

std::array<double, 12> histogram_over(const std::vector<PlacedNote>& notes, std::pair<int, int> span) {
  std::array<double, 12> h{};
  for (const auto& n : notes) {
    const int overlap = std::min(n.end, span.second) - std::max(n.start, span.first);
    if (overlap > 0) h[n.pitch % 12] += overlap;
  }
  return h;
}

}  // namespace

std::array<double, 12> pc_histogram(const Score& score, int beat_index) {
  const auto grid = beat_grid(score);
  if (beat_index < 0 || beat_index >= static_cast<int>(grid.spans.size())) {
    throw BoundsError("beat " + std::to_string(beat_index) + " outside score");
  }
  return histogram_over(placed_notes(score), grid.spans[beat_index]);
}

TemplateMatch match_template(const std::array<double, 12>& hist) {
  double norm2 = 0.0;
  for (double v : hist) norm2 += v * v;
  if (norm2 <= 0.0) return {};
  const double norm = std::sqrt(norm2);
  TemplateMatch best{{}, -1.0};
  int best_size = 0;
  for (const auto& t : all_templates()) {
    const PcSet pcs = t.pcs();
    double dot = 0.0;
    for (int pc = 0; pc < 12; ++pc) {
      if (pcs & pc_bit(pc)) dot += hist[pc];
    }
    const int size = std::popcount(static_cast<unsigned>(pcs));
    const double sim = dot / (norm * std::sqrt(static_cast<double>(size)));
    if (sim > best.similarity + kTieEpsilon ||
        (std::abs(sim - best.similarity) <= kTieEpsilon && size < best_size)) {
      best = {t, sim};
      best_size = size;
    }
  }
  return best;
}

PcSet find_extensions(PcSet present, const ChordTemplate& chord) {
  const PcSet tpl = chord.pcs();
  // Candidates that do not already clash with a chord tone.
  const PcSet cand = static_cast<PcSet>(present & ~tpl & ~second_neighbourhood(tpl) & 0xFFF);

  // best[i][recent][head]: max picks among pcs i..11, where `recent` holds
  // whether pcs i-1 (bit 0) and i-2 (bit 1) were picked and `head` whether
  // pcs 0 (bit 0) and 1 (bit 1) were picked; -1 marks an empty memo slot.
  std::array<std::array<std::array<int, 4>, 4>, 13> memo;
  for (auto& a : memo) {
    for (auto& b : a) b.fill(-1);
  }
  auto can_pick = [&](int i, int recent, int head) {
    if (!(cand & pc_bit(i))) return false;
    if (recent != 0) return false;
    if (i == 10 && (head & 1)) return false;
    if (i == 11 && (head & 3)) return false;
    return true;
  };
  auto next_head = [](int i, bool pick, int head) {
    if (i < 2 && pick) return head | (1 << i);
    return head;
  };
  auto next_recent = [](int recent, bool pick) { return ((recent << 1) & 2) | (pick ? 1 : 0); };

  std::function<int(int, int, int)> best = [&](int i, int recent, int head) -> int {
    if (i == 12) return 0;
    int& slot = memo[i][recent][head];
    if (slot >= 0) return slot;
    int v = best(i + 1, next_recent(recent, false), head);
    if (can_pick(i, recent, head)) {
      v = std::max(v, 1 + best(i + 1, next_recent(recent, true), next_head(i, true, head)));
    }
    return slot = v;
  };

  PcSet out = 0;
  int recent = 0;
  int head = 0;
  for (int i = 0; i < 12; ++i) {
    const int target = best(i, recent, head);
    const bool pick =
        can_pick(i, recent, head) && 1 + best(i + 1, next_recent(recent, true), next_head(i, true, head)) == target;
    if (pick) out |= pc_bit(i);
    head = next_head(i, pick, head);
    recent = next_recent(recent, pick);
  }
  return out;
}

HarmonySkeleton analyze_skeleton(const Score& score) {
  HarmonySkeleton sk;
  for (const auto& bar : score.bars) sk.bar_lengths.push_back(bar.bar_length);
  const auto grid = beat_grid(score);
  const auto notes = placed_notes(score);
  ChordTemplate previous{};
  for (std::size_t b = 0; b < grid.spans.size(); ++b) {
    const auto span = grid.spans[b];
    HarmonyBeat beat;
    beat.beat_index = static_cast<int>(b);
    const auto hist = histogram_over(notes, span);
    const auto match = match_template(hist);
    if (match.chord.empty()) {
      beat.chord = previous;
    } else {
      beat.chord = match.chord;
      PcSet present = 0;
      for (int pc = 0; pc < 12; ++pc) {
        if (hist[pc] > 0.0) present |= pc_bit(pc);
      }
      beat.extensions = find_extensions(present, beat.chord);
      const PcSet allowed = beat.allowed();
      for (const auto& n : notes) {
        if (n.start < span.second && n.end > span.first && (allowed & pc_bit(n.pitch))) {
          beat.tones.push_back(n.pitch);
        }
      }
      std::sort(beat.tones.begin(), beat.tones.end());
      beat.tones.erase(std::unique(beat.tones.begin(), beat.tones.end()), beat.tones.end());
    }
    previous = beat.chord;
    sk.beats.push_back(std::move(beat));
  }
  return sk;
}

PrecisionRecall precision_recall(const HarmonySkeleton& reference, const HarmonySkeleton& reanalyzed) {
  if (reference.beats.size() != reanalyzed.beats.size()) {
    throw ShapeError("skeletons have " + std::to_string(reference.beats.size()) + " and " +
                     std::to_string(reanalyzed.beats.size()) + " beats");
  }
  long inter = 0;
  long gen = 0;
  long ref = 0;
  for (std::size_t i = 0; i < reference.beats.size(); ++i) {
    const unsigned r = reference.beats[i].tone_pcs();
    const unsigned g = reanalyzed.beats[i].tone_pcs();
    inter += std::popcount(r & g);
    gen += std::popcount(g);
    ref += std::popcount(r);
  }
  // An empty denominator means nothing could be wrong on that side.
  PrecisionRecall pr;
  pr.precision = gen > 0 ? static_cast<double>(inter) / static_cast<double>(gen) : 1.0;
  pr.recall = ref > 0 ? static_cast<double>(inter) / static_cast<double>(ref) : 1.0;
  return pr;
}

std::string to_string(FilterReason r) {
  switch (r) {
    case FilterReason::LowDensity:
      return "low_density";
    case FilterReason::Repetition:
      return "repetition";
    case FilterReason::TooFewCadences:
      return "too_few_cadences";
    case FilterReason::FirstChordQuality:
      return "first_chord_quality";
    case FilterReason::LogProbability:
      return "log_probability";
  }
  return "unknown";
}

namespace {

bool same_beat_content(const HarmonyBeat& a, const HarmonyBeat& b) {
  return a.chord == b.chord && a.extensions == b.extensions && a.tone_pcs() == b.tone_pcs();
}

}  // namespace

double repetition_rate(const HarmonySkeleton& sk, int window_bars) {
  const int nbars = static_cast<int>(sk.bar_lengths.size());
  if (sk.beats.size() < 2 || nbars == 0) return 0.0;
  std::vector<int> first_beat{0};
  for (int len : sk.bar_lengths) first_beat.push_back(first_beat.back() + beats_in_bar(len));
  const int w = std::max(1, std::min(window_bars, nbars));
  double worst = 0.0;
  for (int s = 0; s + w <= nbars; ++s) {
    const int lo = first_beat[s];
    const int hi = std::min(first_beat[s + w], static_cast<int>(sk.beats.size()));
    if (hi - lo < 2) continue;
    int dup = 0;
    for (int i = lo + 1; i < hi; ++i) dup += same_beat_content(sk.beats[i - 1], sk.beats[i]) ? 1 : 0;
    worst = std::max(worst, static_cast<double>(dup) / static_cast<double>(hi - lo - 1));
  }
  return worst;
}

int count_cadences(const HarmonySkeleton& sk) {
  int count = 0;
  for (std::size_t i = 0; i + 1 < sk.beats.size(); ++i) {
    const auto& a = sk.beats[i].chord;
    const auto& b = sk.beats[i + 1].chord;
    const bool dominant = a.quality == ChordQuality::Dom7 || a.quality == ChordQuality::Maj;
    const bool tonic = b.quality == ChordQuality::Maj || b.quality == ChordQuality::Min;
    if (dominant && tonic && a.root == (b.root + 7) % 12) ++count;
  }
  return count;
}

FilterVerdict filter_skeleton(const HarmonySkeleton& sk, const FilterConfig& cfg) {
  FilterVerdict v;
  auto reject = [&](FilterReason r) {
    v.accepted = false;
    v.reasons.push_back(r);
  };
  std::size_t tones = 0;
  for (const auto& b : sk.beats) tones += b.tones.size();
  v.tones_per_beat = sk.beats.empty() ? 0.0 : static_cast<double>(tones) / static_cast<double>(sk.beats.size());
  if (v.tones_per_beat < cfg.min_tones_per_beat) reject(FilterReason::LowDensity);

  v.repetition = repetition_rate(sk, cfg.repetition_window_bars);
  if (v.repetition > cfg.max_repetition) reject(FilterReason::Repetition);

  v.cadences = count_cadences(sk);
  if (cfg.require_cadences) {
    const int nbars = static_cast<int>(sk.bar_lengths.size());
    const int needed = (cfg.min_cadences_per_32_bars * nbars + 31) / 32;
    if (v.cadences < needed) reject(FilterReason::TooFewCadences);
  }
  if (cfg.require_major_minor_start) {
    const bool ok = !sk.beats.empty() && (sk.beats.front().chord.quality == ChordQuality::Maj ||
                                          sk.beats.front().chord.quality == ChordQuality::Min);
    if (!ok) reject(FilterReason::FirstChordQuality);
  }
  if (cfg.log_prob) {
    const double lp = cfg.log_prob(sk);
    if (!(lp >= cfg.min_log_prob && lp <= cfg.max_log_prob)) reject(FilterReason::LogProbability);
  }
  return v;
}

HarmonySkeleton prune_to_template(const HarmonySkeleton& sk) {
  HarmonySkeleton out = sk;
  for (auto& beat : out.beats) {
    beat.extensions = 0;
    const PcSet pcs = beat.chord.pcs();
    std::erase_if(beat.tones, [&](int p) { return !(pcs & pc_bit(p)); });
  }
  return out;
}

Score skeleton_to_score(const HarmonySkeleton& sk) {
  Score score;
  int beat = 0;
  for (int len : sk.bar_lengths) {
    Bar bar{len, {}};
    TrackBar track{0, 0, {}};
    for (int k = 0; k < beats_in_bar(len) && beat < static_cast<int>(sk.beats.size()); ++k, ++beat) {
      const int onset = k * kBeatLength;
      const int dur = std::min(kBeatLength, len - onset);
      for (int p : sk.beats[beat].tones) track.events.push_back({p, onset, dur});
    }
    normalize_events(track.events);
    if (!track.events.empty()) bar.tracks.push_back(std::move(track));
    score.bars.push_back(std::move(bar));
  }
  return score;
}

nlohmann::json skeleton_to_json(const HarmonySkeleton& sk) {
  nlohmann::json beats = nlohmann::json::array();
  for (const auto& b : sk.beats) {
    beats.push_back({{"i", b.beat_index},
                     {"root", b.chord.root},
                     {"quality", to_string(b.chord.quality)},
                     {"ext", pcs_of(b.extensions)},
                     {"tones", b.tones}});
  }
  return {{"beat_len", kBeatLength}, {"bar_lens", sk.bar_lengths}, {"beats", beats}};
}

HarmonySkeleton skeleton_from_json(const nlohmann::json& j) {
  if (j.value("beat_len", kBeatLength) != kBeatLength) throw std::invalid_argument("beat_len must be 8");
  HarmonySkeleton sk;
  for (const auto& b : j.at("beats")) {
    HarmonyBeat beat;
    beat.beat_index = b.at("i").get<int>();
    beat.chord = {b.at("root").get<int>(), quality_from_string(b.at("quality").get<std::string>())};
    beat.extensions = pc_set_of(b.value("ext", std::vector<int>{}));
    beat.tones = b.value("tones", std::vector<int>{});
    std::sort(beat.tones.begin(), beat.tones.end());
    sk.beats.push_back(std::move(beat));
  }
  if (j.contains("bar_lens")) {
    sk.bar_lengths = j.at("bar_lens").get<std::vector<int>>();
  } else {
    const int n = static_cast<int>(sk.beats.size());
    sk.bar_lengths.assign((n + 3) / 4, 32);
  }
  int expected = 0;
  for (int len : sk.bar_lengths) expected += beats_in_bar(len);
  if (expected != static_cast<int>(sk.beats.size())) {
    throw ShapeError("skeleton has " + std::to_string(sk.beats.size()) + " beats but its bars hold " +
                     std::to_string(expected));
  }
  return sk;
}

}  // namespace symphony
