#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "symphony/score.hpp"

namespace symphony {

inline constexpr int kEmitPpq = 480;
inline constexpr int kDrumChannel = 9;

/// Reads a format 0 or 1 Standard MIDI File into a quantized Score.
///
/// Onsets and durations snap to the nearest 32nd-note grid point (ties go to
/// the earlier point); notes on the drum channel are dropped; notes that share
/// channel and program are merged into one track; overlapping same-pitch notes
/// within a track merge into their union.
Score parse_midi(std::span<const std::uint8_t> bytes);

/// Emits a format-1 SMF at 480 PPQ and 120 BPM with one MIDI track per
/// distinct (track_id, instrument_id). parse_midi(write_midi(s)) == s.
std::vector<std::uint8_t> write_midi(const Score& score);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

/// Exact tick -> grid conversion: nearest grid point, ties toward earlier time.
int ticks_to_grid(std::int64_t ticks, int ppq);

}  // namespace symphony
