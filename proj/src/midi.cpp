#include "symphony/midi.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string_view>
#include <tuple>

#include "symphony/errors.hpp"

namespace symphony {

namespace {

constexpr std::string_view kTrackTag = "symphony:";
constexpr std::string_view kBarsMarker = "symphony:bars=";
constexpr int kVelocity = 80;
constexpr std::uint32_t kTempo120 = 500000;

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t base) : bytes_(bytes), base_(base) {}

  std::size_t offset() const { return base_ + pos_; }
  bool done() const { return pos_ >= bytes_.size(); }

  std::uint8_t u8() {
    if (pos_ >= bytes_.size()) throw ParseError("unexpected end of data", offset());
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= bytes_.size()) throw ParseError("unexpected end of data", offset());
    return bytes_[pos_];
  }
  std::uint32_t be(int n) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", offset());
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw ParseError("chunk or event overruns data", offset());
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

struct Identity {
  bool tagged = false;
  int key = 0;  // tag id when tagged, channel otherwise
  int program = 0;
  auto operator<=>(const Identity&) const = default;
};

struct RawNote {
  Identity id;
  int pitch = 0;
  std::int64_t start = 0;
  std::int64_t end = 0;
};

struct TimeSig {
  std::int64_t tick = 0;
  int bar_length = 32;
};

struct TrackParse {
  std::vector<RawNote> notes;
  std::vector<TimeSig> time_sigs;
  std::optional<int> bars_marker;
};

std::optional<int> parse_tag(std::string_view text, std::string_view prefix) {
  if (text.substr(0, prefix.size()) != prefix) return std::nullopt;
  auto rest = text.substr(prefix.size());
  if (rest.empty() || rest.size() > 6) return std::nullopt;
  int v = 0;
  for (char c : rest) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
  }
  return v;
}

TrackParse parse_track(Reader& r) {
  TrackParse out;
  std::optional<int> tag;
  std::int64_t tick = 0;
  std::uint8_t running = 0;
  std::array<int, 16> program{};
  // (channel, pitch) -> (active count, start tick, program at start)
  std::map<std::pair<int, int>, std::tuple<int, std::int64_t, int>> active;
  struct Pending {
    int channel, pitch, program;
    std::int64_t start, end;
  };
  std::vector<Pending> finished;

  auto note_off = [&](int ch, int pitch) {
    auto it = active.find({ch, pitch});
    if (it == active.end()) return;
    auto& [count, start, prog] = it->second;
    if (--count == 0) {
      finished.push_back({ch, pitch, prog, start, tick});
      active.erase(it);
    }
  };

  bool ended = false;
  while (!r.done() && !ended) {
    tick += r.vlq();
    std::uint8_t status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else {
      if (running == 0) throw ParseError("data byte without running status", r.offset());
      status = running;
    }
    if (status == 0xFF) {
      const std::size_t at = r.offset();
      const std::uint8_t type = r.u8();
      const auto data = r.take(r.vlq());
      if (type == 0x2F) {
        ended = true;
      } else if (type == 0x58) {
        if (data.size() < 2) throw ParseError("short time signature", at);
        const int num = data[0];
        if (data[1] > 5) throw ParseError("unsupported time signature denominator", at);
        const int den = 1 << data[1];
        const int len = num * (32 / den);
        if (len < kMinBarLength || len > kMaxBarLength) {
          throw ParseError("time signature bar length outside [8, 128] grid units", at);
        }
        out.time_sigs.push_back({tick, len});
      } else if (type == 0x03 || type == 0x06 || type == 0x01) {
        std::string_view text(reinterpret_cast<const char*>(data.data()), data.size());
        if (type == 0x03) {
          if (auto v = parse_tag(text, kTrackTag)) tag = v;
        } else if (auto v = parse_tag(text, kBarsMarker)) {
          out.bars_marker = v;
        }
      }
      running = 0;
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      r.take(r.vlq());
      running = 0;
      continue;
    }
    if (status >= 0xF0) throw ParseError("unexpected system message", r.offset());
    running = status;
    const int ch = status & 0x0F;
    switch (status & 0xF0) {
      case 0x80: {
        const int pitch = r.u8() & 0x7F;
        r.u8();
        note_off(ch, pitch);
        break;
      }
      case 0x90: {
        const int pitch = r.u8() & 0x7F;
        const int vel = r.u8() & 0x7F;
        if (vel == 0) {
          note_off(ch, pitch);
        } else {
          auto [it, inserted] = active.try_emplace({ch, pitch}, 0, tick, program[ch]);
          ++std::get<0>(it->second);
        }
        break;
      }
      case 0xA0:
      case 0xB0:
      case 0xE0:
        r.u8();
        r.u8();
        break;
      case 0xC0:
        program[ch] = r.u8() & 0x7F;
        break;
      case 0xD0:
        r.u8();
        break;
      default:
        throw ParseError("invalid status byte", r.offset());
    }
  }
  for (const auto& [key, value] : active) {
    finished.push_back({key.first, key.second, std::get<2>(value), std::get<1>(value), tick});
  }
  for (const auto& p : finished) {
    if (p.channel == kDrumChannel) continue;
    Identity id = tag ? Identity{true, *tag, p.program} : Identity{false, p.channel, p.program};
    out.notes.push_back({id, p.pitch, p.start, p.end});
  }
  return out;
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[4];
  int n = 0;
  buf[n++] = v & 0x7F;
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n > 0) out.push_back(buf[--n]);
}

void put_be(std::vector<std::uint8_t>& out, std::uint32_t v, int n) {
  for (int i = n - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_meta(std::vector<std::uint8_t>& out, std::uint32_t delta, std::uint8_t type,
              std::span<const std::uint8_t> data) {
  put_vlq(out, delta);
  out.push_back(0xFF);
  out.push_back(type);
  put_vlq(out, static_cast<std::uint32_t>(data.size()));
  out.insert(out.end(), data.begin(), data.end());
}

void put_text(std::vector<std::uint8_t>& out, std::uint32_t delta, std::uint8_t type,
              const std::string& text) {
  put_meta(out, delta, type,
           std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* id, const std::vector<std::uint8_t>& body) {
  out.insert(out.end(), id, id + 4);
  put_be(out, static_cast<std::uint32_t>(body.size()), 4);
  out.insert(out.end(), body.begin(), body.end());
}

// Time signature for a bar length in grid units, preferring quarter-note beats.
std::pair<int, int> time_signature_for(int bar_length) {
  if (bar_length % 8 == 0) return {bar_length / 8, 2};
  if (bar_length % 4 == 0) return {bar_length / 4, 3};
  if (bar_length % 2 == 0) return {bar_length / 2, 4};
  return {bar_length, 5};
}

int channel_for(int track_id) {
  int ch = track_id % 15;
  return ch >= kDrumChannel ? ch + 1 : ch;
}

}  // namespace

int ticks_to_grid(std::int64_t ticks, int ppq) {
  const std::int64_t num = ticks * kGridPerQuarter;
  std::int64_t q = num / ppq;
  const std::int64_t r = num % ppq;
  if (2 * r > ppq) ++q;
  return static_cast<int>(q);
}

Score parse_midi(std::span<const std::uint8_t> bytes) {
  Reader top(bytes, 0);
  if (bytes.size() < 14) throw ParseError("file too short for a MIDI header", 0);
  auto magic = top.take(4);
  if (!std::equal(magic.begin(), magic.end(), "MThd")) throw ParseError("missing MThd", 0);
  const std::uint32_t hlen = top.be(4);
  if (hlen < 6) throw ParseError("header chunk shorter than 6 bytes", 4);
  const std::size_t header_at = top.offset();
  auto header = top.take(hlen);
  const int format = (header[0] << 8) | header[1];
  const int division = (header[4] << 8) | header[5];
  if (format > 1) throw ParseError("only format 0 and 1 files are supported", header_at);
  if (division & 0x8000) throw ParseError("SMPTE time division is not supported", header_at + 4);
  if (division == 0) throw ParseError("zero ticks per quarter note", header_at + 4);
  const int ppq = division;

  std::vector<RawNote> notes;
  std::vector<TimeSig> time_sigs;
  std::optional<int> bars_marker;
  while (!top.done()) {
    const std::size_t chunk_at = top.offset();
    auto id = top.take(4);
    const std::uint32_t len = top.be(4);
    if (len > bytes.size() - top.offset()) throw ParseError("chunk length overruns file", chunk_at);
    auto body = top.take(len);
    if (!std::equal(id.begin(), id.end(), "MTrk")) continue;
    Reader r(body, chunk_at + 8);
    auto parsed = parse_track(r);
    notes.insert(notes.end(), parsed.notes.begin(), parsed.notes.end());
    time_sigs.insert(time_sigs.end(), parsed.time_sigs.begin(), parsed.time_sigs.end());
    if (parsed.bars_marker) bars_marker = parsed.bars_marker;
  }

  // Quantize, then merge overlapping same-pitch notes per identity.
  struct GridNote {
    int start, end;
  };
  std::map<std::pair<Identity, int>, std::vector<GridNote>> by_key;
  for (const auto& n : notes) {
    const int s = ticks_to_grid(n.start, ppq);
    const int d = std::clamp(ticks_to_grid(n.end - n.start, ppq), 1, kMaxDuration);
    by_key[{n.id, n.pitch}].push_back({s, s + d});
  }
  struct Placed {
    Identity id;
    int pitch, start, end;
  };
  std::vector<Placed> placed;
  for (auto& [key, list] : by_key) {
    std::sort(list.begin(), list.end(),
              [](const GridNote& a, const GridNote& b) { return a.start < b.start || (a.start == b.start && a.end < b.end); });
    GridNote cur = list.front();
    for (std::size_t i = 1; i < list.size(); ++i) {
      if (list[i].start < cur.end) {
        cur.end = std::max(cur.end, list[i].end);
      } else {
        placed.push_back({key.first, key.second, cur.start, cur.end});
        cur = list[i];
      }
    }
    placed.push_back({key.first, key.second, cur.start, cur.end});
  }

  // Bar grid from time signatures; a change takes effect at the next bar boundary.
  std::vector<std::pair<int, int>> sig_grid;
  for (const auto& ts : time_sigs) sig_grid.emplace_back(ticks_to_grid(ts.tick, ppq), ts.bar_length);
  std::stable_sort(sig_grid.begin(), sig_grid.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  int last_onset = -1;
  for (const auto& p : placed) last_onset = std::max(last_onset, p.start);

  Score score;
  std::vector<int> starts;
  {
    int cursor = 0;
    int length = 32;
    std::size_t next_sig = 0;
    auto needs_more = [&] {
      const int n = static_cast<int>(starts.size());
      if (bars_marker && n < *bars_marker) return true;
      return last_onset >= cursor;
    };
    while (needs_more()) {
      while (next_sig < sig_grid.size() && sig_grid[next_sig].first <= cursor) {
        length = sig_grid[next_sig++].second;
      }
      starts.push_back(cursor);
      score.bars.push_back(Bar{length, {}});
      cursor += length;
    }
    starts.push_back(cursor);
  }

  // Track ids: tags keep their id; untagged identities are numbered by first onset.
  std::map<Identity, int> first_onset;
  for (const auto& p : placed) {
    auto [it, inserted] = first_onset.try_emplace(p.id, p.start);
    if (!inserted) it->second = std::min(it->second, p.start);
  }
  std::vector<std::pair<int, Identity>> untagged;
  std::set<int> used_ids;
  for (const auto& [id, onset] : first_onset) {
    if (id.tagged) {
      used_ids.insert(id.key);
    } else {
      untagged.emplace_back(onset, id);
    }
  }
  std::sort(untagged.begin(), untagged.end());
  std::map<Identity, int> track_of;
  int next_id = 0;
  for (const auto& [onset, id] : untagged) {
    while (used_ids.count(next_id)) ++next_id;
    track_of[id] = next_id++;
  }
  for (const auto& [id, onset] : first_onset) {
    if (id.tagged) track_of[id] = id.key;
  }

  auto bar_of = [&](int t) {
    auto it = std::upper_bound(starts.begin(), starts.end(), t);
    return static_cast<int>(it - starts.begin()) - 1;
  };

  std::vector<std::map<std::pair<int, int>, TrackBar>> cells(score.bars.size());
  for (const auto& p : placed) {
    const int b = bar_of(p.start);
    const int tid = track_of.at(p.id);
    auto& cell = cells[b][{tid, p.id.program}];
    cell.track_id = tid;
    cell.instrument_id = p.id.program;
    cell.events.push_back({p.pitch, p.start - starts[b], std::min(p.end - p.start, kMaxDuration)});
  }
  for (std::size_t b = 0; b < score.bars.size(); ++b) {
    std::set<int> ids_in_bar;
    for (auto& [key, cell] : cells[b]) {
      if (cell.track_id >= kMaxTracksPerBar || cells[b].size() > static_cast<std::size_t>(kMaxTracksPerBar)) {
        throw CapacityError("more than 32 distinct track identities at bar " + std::to_string(b));
      }
      if (!ids_in_bar.insert(cell.track_id).second) {
        throw CapacityError("track " + std::to_string(cell.track_id) +
                            " carries two programs in bar " + std::to_string(b));
      }
      normalize_events(cell.events);
      score.bars[b].tracks.push_back(std::move(cell));
    }
  }
  normalize(score);
  return score;
}

std::vector<std::uint8_t> write_midi(const Score& score) {
  validate(score);
  constexpr int kTicksPerGrid = kEmitPpq / kGridPerQuarter;
  const auto starts = bar_starts(score);

  std::vector<std::uint8_t> conductor;
  const std::uint8_t tempo[3] = {(kTempo120 >> 16) & 0xFF, (kTempo120 >> 8) & 0xFF, kTempo120 & 0xFF};
  put_meta(conductor, 0, 0x51, tempo);
  std::uint32_t last = 0;
  if (!score.bars.empty()) {
    put_text(conductor, 0, 0x06, std::string(kBarsMarker) + std::to_string(score.bars.size()));
    int prev_len = -1;
    for (std::size_t b = 0; b < score.bars.size(); ++b) {
      const int len = score.bars[b].bar_length;
      if (len == prev_len) continue;
      const auto [num, den_pow] = time_signature_for(len);
      const std::uint32_t at = static_cast<std::uint32_t>(starts[b] * kTicksPerGrid);
      const std::uint8_t sig[4] = {static_cast<std::uint8_t>(num), static_cast<std::uint8_t>(den_pow), 24, 8};
      put_meta(conductor, at - last, 0x58, sig);
      last = at;
      prev_len = len;
    }
  }
  const std::uint32_t end_tick = static_cast<std::uint32_t>(starts.back() * kTicksPerGrid);
  put_meta(conductor, end_tick - last, 0x2F, {});

  struct Ev {
    std::uint32_t tick;
    bool on;
    int pitch;
  };
  std::map<std::pair<int, int>, std::vector<Ev>> tracks;
  for (std::size_t b = 0; b < score.bars.size(); ++b) {
    for (const auto& tb : score.bars[b].tracks) {
      auto& evs = tracks[{tb.track_id, tb.instrument_id}];
      for (const auto& e : tb.events) {
        const auto s = static_cast<std::uint32_t>((starts[b] + e.onset) * kTicksPerGrid);
        evs.push_back({s, true, e.pitch});
        evs.push_back({s + static_cast<std::uint32_t>(e.duration * kTicksPerGrid), false, e.pitch});
      }
    }
  }

  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> header;
  put_be(header, 1, 2);
  put_be(header, static_cast<std::uint32_t>(1 + tracks.size()), 2);
  put_be(header, kEmitPpq, 2);
  put_chunk(out, "MThd", header);
  put_chunk(out, "MTrk", conductor);

  for (auto& [key, evs] : tracks) {
    const auto [track_id, program] = key;
    const int ch = channel_for(track_id);
    std::sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
      if (a.tick != b.tick) return a.tick < b.tick;
      if (a.on != b.on) return !a.on;
      return a.pitch < b.pitch;
    });
    std::vector<std::uint8_t> body;
    put_text(body, 0, 0x03, std::string(kTrackTag) + std::to_string(track_id));
    put_vlq(body, 0);
    body.push_back(static_cast<std::uint8_t>(0xC0 | ch));
    body.push_back(static_cast<std::uint8_t>(program));
    std::uint32_t prev = 0;
    for (const auto& e : evs) {
      put_vlq(body, e.tick - prev);
      prev = e.tick;
      body.push_back(static_cast<std::uint8_t>((e.on ? 0x90 : 0x80) | ch));
      body.push_back(static_cast<std::uint8_t>(e.pitch));
      body.push_back(e.on ? kVelocity : 0);
    }
    put_meta(body, 0, 0x2F, {});
    put_chunk(out, "MTrk", body);
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace symphony
