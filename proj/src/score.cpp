#include "symphony/score.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "symphony/errors.hpp"

namespace symphony {

void normalize_events(std::vector<NoteEvent>& events) {
  std::sort(events.begin(), events.end());
  events.erase(std::unique(events.begin(), events.end()), events.end());
}

void normalize(Score& score) {
  for (auto& bar : score.bars) {
    std::sort(bar.tracks.begin(), bar.tracks.end(),
              [](const TrackBar& a, const TrackBar& b) { return a.track_id < b.track_id; });
    for (auto& track : bar.tracks) normalize_events(track.events);
  }
}

void validate(const Bar& bar) {
  if (bar.bar_length < kMinBarLength || bar.bar_length > kMaxBarLength) {
    throw ValidationError("bar length " + std::to_string(bar.bar_length) + " outside [8, 128]");
  }
  if (bar.tracks.size() > static_cast<std::size_t>(kMaxTracksPerBar)) {
    throw ValidationError("more than 32 tracks in a bar");
  }
  std::set<int> ids;
  for (const auto& track : bar.tracks) {
    if (track.track_id < 0 || track.track_id >= kMaxTracksPerBar) {
      throw ValidationError("track id " + std::to_string(track.track_id) + " outside [0, 31]");
    }
    if (track.instrument_id < 0 || track.instrument_id > 127) {
      throw ValidationError("instrument id outside [0, 127]");
    }
    if (!ids.insert(track.track_id).second) {
      throw ValidationError("duplicate track id " + std::to_string(track.track_id));
    }
    for (std::size_t i = 0; i < track.events.size(); ++i) {
      const auto& e = track.events[i];
      if (e.pitch < 0 || e.pitch > 127) throw ValidationError("pitch outside [0, 127]");
      if (e.onset < 0 || e.onset >= bar.bar_length) throw ValidationError("onset outside bar");
      if (e.duration < 1 || e.duration > kMaxDuration) throw ValidationError("duration outside [1, 128]");
      if (i > 0 && !(track.events[i - 1] < e)) {
        throw ValidationError("events not strictly sorted by (onset, duration, pitch)");
      }
    }
  }
}

void validate(const Score& score) {
  for (const auto& bar : score.bars) validate(bar);
}

std::vector<int> bar_starts(const Score& score) {
  std::vector<int> starts;
  starts.reserve(score.bars.size() + 1);
  int t = 0;
  for (const auto& bar : score.bars) {
    starts.push_back(t);
    t += bar.bar_length;
  }
  starts.push_back(t);
  return starts;
}

int total_length(const Score& score) { return bar_starts(score).back(); }

std::vector<PlacedNote> placed_notes(const Score& score) {
  std::vector<PlacedNote> out;
  const auto starts = bar_starts(score);
  for (std::size_t b = 0; b < score.bars.size(); ++b) {
    for (const auto& track : score.bars[b].tracks) {
      for (const auto& e : track.events) {
        const int s = starts[b] + e.onset;
        out.push_back({e.pitch, s, s + e.duration, static_cast<int>(b), track.track_id});
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const PlacedNote& a, const PlacedNote& b) {
    if (a.start != b.start) return a.start < b.start;
    if (a.pitch != b.pitch) return a.pitch < b.pitch;
    return a.track_id < b.track_id;
  });
  return out;
}

std::vector<int> sounding_at(const std::vector<PlacedNote>& notes, int t) {
  std::vector<int> out;
  for (const auto& n : notes) {
    if (n.start > t) break;
    if (t < n.end) out.push_back(n.pitch);
  }
  return out;
}

}  // namespace symphony
