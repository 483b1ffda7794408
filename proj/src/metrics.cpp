#include "symphony/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "symphony/errors.hpp"

namespace symphony {

namespace {

constexpr int kEighth = 4;
constexpr int kSixteenth = 2;
constexpr int kSustained = 8;
constexpr int kMaxStep = 2;
constexpr int kMinRun = 3;

bool has_notes(const TrackBar& t) { return !t.events.empty(); }

}  // namespace

double track_density(const Score& score) {
  if (score.bars.empty()) throw UndefinedMetricError("track density of an empty score");
  double sum = 0.0;
  for (const auto& bar : score.bars) {
    sum += static_cast<double>(std::count_if(bar.tracks.begin(), bar.tracks.end(), has_notes));
  }
  return sum / static_cast<double>(score.bars.size());
}

int skyline_track(const Bar& bar) {
  int best = -1;
  double best_mean = -1.0;
  for (std::size_t i = 0; i < bar.tracks.size(); ++i) {
    const auto& t = bar.tracks[i];
    if (t.events.empty()) continue;
    double wsum = 0.0;
    double dsum = 0.0;
    for (const auto& e : t.events) {
      wsum += static_cast<double>(e.pitch) * e.duration;
      dsum += e.duration;
    }
    const double mean = wsum / dsum;
    if (mean > best_mean) {
      best_mean = mean;
      best = static_cast<int>(i);
    }
  }
  return best;
}

int predominant_duration(const TrackBar& track) {
  std::map<int, int> counts;
  for (const auto& e : track.events) ++counts[e.duration];
  int best = 0;
  int best_count = 0;
  for (const auto& [d, c] : counts) {
    if (c > best_count) {
      best = d;
      best_count = c;
    }
  }
  return best;
}

double melodic_movement(const Score& score) {
  if (score.bars.size() < 2) throw UndefinedMetricError("melodic movement needs at least two bars");
  std::vector<int> durations;
  for (const auto& bar : score.bars) {
    const int s = skyline_track(bar);
    durations.push_back(s < 0 ? 0 : predominant_duration(bar.tracks[s]));
  }
  int pairs = 0;
  int shifts = 0;
  for (std::size_t i = 1; i < durations.size(); ++i) {
    // Silent bars have no melody to shift.
    if (durations[i - 1] == 0 || durations[i] == 0) continue;
    ++pairs;
    if (durations[i] != durations[i - 1]) ++shifts;
  }
  return pairs == 0 ? 0.0 : static_cast<double>(shifts) / pairs;
}

double melodic_ornament(const Score& score) {
  if (score.bars.empty()) return 0.0;
  struct MelodyNote {
    int pitch, duration, bar;
  };
  std::vector<MelodyNote> line;
  for (std::size_t b = 0; b < score.bars.size(); ++b) {
    const auto& bar = score.bars[b];
    const int s = skyline_track(bar);
    if (s < 0) continue;
    // Highest pitch per onset.
    const auto& events = bar.tracks[s].events;
    for (std::size_t i = 0; i < events.size();) {
      std::size_t j = i;
      const NoteEvent* top = &events[i];
      while (j < events.size() && events[j].onset == events[i].onset) {
        if (events[j].pitch > top->pitch) top = &events[j];
        ++j;
      }
      line.push_back({top->pitch, top->duration, static_cast<int>(b)});
      i = j;
    }
  }
  std::vector<bool> ornamented(score.bars.size(), false);
  auto is_short = [](int d) { return d == kEighth || d == kSixteenth; };
  // For each candidate landing note, walk back over the stepwise run feeding it.
  for (std::size_t k = 1; k < line.size(); ++k) {
    if (line[k].duration < kSustained) continue;
    const int dir = line[k].pitch > line[k - 1].pitch ? 1 : -1;
    int run = 0;
    std::size_t i = k;
    while (i > 0) {
      const auto& prev = line[i - 1];
      const int step = (line[i].pitch - prev.pitch) * dir;
      if (!is_short(prev.duration) || step < 1 || step > kMaxStep) break;
      ++run;
      --i;
    }
    if (run >= kMinRun) ornamented[line[k].bar] = true;
  }
  const auto count = std::count(ornamented.begin(), ornamented.end(), true);
  return static_cast<double>(count) / static_cast<double>(score.bars.size());
}

MetricsReport evaluate(const Score& score, const HarmonySkeleton* reference, const DissonanceParams& params,
                       const DissonanceMatrix& w) {
  MetricsReport r;
  auto attempt = [&](const char* name, std::optional<double>& field, auto&& fn) {
    try {
      field = fn();
    } catch (const std::exception& e) {
      r.absent[name] = e.what();
    }
  };
  attempt("trk", r.trk, [&] { return track_density(score); });
  attempt("mov", r.mov, [&] { return melodic_movement(score); });
  attempt("orn", r.orn, [&] { return melodic_ornament(score); });

  const auto analysis = analyze_skeleton(score);
  if (reference) {
    try {
      const auto pr = precision_recall(*reference, analysis);
      r.prc = pr.precision;
      r.rec = pr.recall;
    } catch (const std::exception& e) {
      r.absent["prc"] = e.what();
      r.absent["rec"] = e.what();
    }
  } else {
    r.absent["prc"] = "no reference skeleton";
    r.absent["rec"] = "no reference skeleton";
  }
  try {
    const auto d = d_total(score, reference ? *reference : analysis, params, w);
    r.d_hn = d.hn_mean;
    r.d_nn = d.nn_mean;
  } catch (const std::exception& e) {
    r.absent["d_hn"] = e.what();
    r.absent["d_nn"] = e.what();
  }
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  auto field = [](const std::optional<double>& v) -> nlohmann::json {
    if (!v) return nullptr;
    return *v;
  };
  return {{"trk", field(r.trk)}, {"prc", field(r.prc)},   {"rec", field(r.rec)}, {"d_hn", field(r.d_hn)},
          {"d_nn", field(r.d_nn)}, {"mov", field(r.mov)}, {"orn", field(r.orn)}};
}

}  // namespace symphony
