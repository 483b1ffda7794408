#pragma once

#include <cstdint>
#include <vector>

namespace symphony {

// Time is measured in grid units of a 32nd note; a quarter note is 8 units.
inline constexpr int kGridPerQuarter = 8;
inline constexpr int kBeatLength = 8;
inline constexpr int kMaxTracksPerBar = 32;
inline constexpr int kMaxBarsPerWindow = 32;
inline constexpr int kMaxDuration = 128;
inline constexpr int kMinBarLength = 8;
inline constexpr int kMaxBarLength = 128;
inline constexpr double kDefaultBpm = 120.0;

struct NoteEvent {
  int pitch = 60;
  int onset = 0;     // grid units from bar start
  int duration = 1;  // grid units

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
  friend auto operator<=>(const NoteEvent& a, const NoteEvent& b) {
    if (auto c = a.onset <=> b.onset; c != 0) return c;
    if (auto c = a.duration <=> b.duration; c != 0) return c;
    return a.pitch <=> b.pitch;
  }
};

struct TrackBar {
  int track_id = 0;
  int instrument_id = 0;
  std::vector<NoteEvent> events;

  friend bool operator==(const TrackBar&, const TrackBar&) = default;
};

struct Bar {
  int bar_length = 32;
  std::vector<TrackBar> tracks;

  friend bool operator==(const Bar&, const Bar&) = default;
};

struct Score {
  std::vector<Bar> bars;
  double bpm = kDefaultBpm;

  friend bool operator==(const Score&, const Score&) = default;
};

/// Sorts events by (onset, duration, pitch) and removes exact duplicates.
void normalize_events(std::vector<NoteEvent>& events);

/// Sorts tracks by id and events canonically in every bar.
void normalize(Score& score);

/// Throws ValidationError describing the first violated invariant.
void validate(const Bar& bar);
void validate(const Score& score);

/// Absolute grid position of each bar start; one extra entry holds the total length.
std::vector<int> bar_starts(const Score& score);

int total_length(const Score& score);

/// A note placed on the absolute grid, with its owning bar and track.
struct PlacedNote {
  int pitch = 0;
  int start = 0;
  int end = 0;
  int bar = 0;
  int track_id = 0;
};

std::vector<PlacedNote> placed_notes(const Score& score);

/// Pitches sounding at absolute grid step `t` (one entry per note, duplicates kept).
std::vector<int> sounding_at(const std::vector<PlacedNote>& notes, int t);

}  // namespace symphony
